import numpy as np
import pytest

from sharpnorm import nn

ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion outcome for the end-of-run summary."""
    entry = {"name": request.node.name, "status": "FAIL", "detail": ""}
    ACCEPTANCE.append(entry)

    def done(detail=""):
        entry["status"] = "PASS"
        entry["detail"] = detail

    def note(detail):
        entry["detail"] = detail

    done.note = note
    yield done


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for e in ACCEPTANCE:
        terminalreporter.write_line(f"{e['status']}  {e['name']}  {e['detail']}")


@pytest.fixture
def toy_net():
    return nn.NetworkSpec([nn.Dense(2, 2, bias=False), nn.ReLU(), nn.Dense(2, 2, bias=False)], (2,), 2)


@pytest.fixture
def toy_params(toy_net):
    w1 = np.array([[1.0, 2.0], [3.0, 4.0]])
    w2 = np.array([[5.0, 6.0], [7.0, 8.0]])
    return nn.ParamStore.from_arrays(toy_net, [w1, w2])


def random_params(net, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return nn.ParamStore(net, scale * rng.standard_normal(net.total_params))
