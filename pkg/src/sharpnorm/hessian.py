"""Hessian-diagonal estimation for the batch loss.

``hutchinson_diag`` is the stochastic estimator
``E[eps * (g(theta + r*eps) - g(theta - r*eps)) / (2r)]`` with a separate step
``r`` per layer (sized by the weight array, shared by its bias), averaged over
probes and clipped at zero once.
``exact_diag_oracle`` is the brute-force check: one central second
difference of the loss per parameter.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn


class NumericError(ArithmeticError):
    pass


class OracleRefusedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbeConfig:
    num_probes: int = 100
    step_coefficient: float = 1e-4
    step_floor: float = 1e-8
    probe_distribution: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.num_probes < 1:
            raise ValueError("num_probes must be >= 1")
        if self.step_coefficient <= 0 or self.step_floor <= 0:
            raise ValueError("step coefficient and floor must be positive")
        if self.probe_distribution not in ("gaussian", "rademacher"):
            raise ValueError(f"unknown probe distribution {self.probe_distribution!r}")


@dataclass
class HessianDiag:
    values: np.ndarray
    clipped: bool
    probes_used: int = 0
    # step r used for each parameter block, keyed by block label
    step_rule: dict = field(default_factory=dict)
    raw: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.values.size


def block_steps(theta, blocks, cfg: ProbeConfig):
    """Per-entry step vector: ``rho * (||block|| + tau)`` broadcast over each block.

    A block is ``(label, slice)`` or ``(label, norm_slice, member_slices)``; in
    the second form the norm comes from ``norm_slice`` and the step is applied
    to every member.
    """
    r = np.empty_like(theta)
    rule = {}
    for label, sl, *members in blocks:
        step = cfg.step_coefficient * (np.linalg.norm(theta[sl]) + cfg.step_floor)
        for m in members[0] if members else [sl]:
            r[m] = step
        rule[label] = float(step)
    return r, rule


def _draw(rng, n, kind):
    if kind == "gaussian":
        return rng.standard_normal(n)
    return rng.choice(np.array([-1.0, 1.0]), size=n)


def hutchinson_diag_fn(grad_fn, theta, cfg: ProbeConfig, blocks=None, block_of=None) -> HessianDiag:
    """Estimate ``diag(Hessian)`` of a function known only through ``grad_fn``.

    ``blocks`` is a list of ``(label, slice)`` pairs covering ``theta``; each
    block gets its own finite-difference step. ``block_of(i)`` names the block
    owning a non-finite gradient entry in error messages.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if blocks is None:
        blocks = [("all", slice(0, theta.size))]
    r, rule = block_steps(theta, blocks, cfg)
    rng = np.random.default_rng(cfg.seed)
    total = np.zeros_like(theta)
    for _ in range(cfg.num_probes):
        eps = _draw(rng, theta.size, cfg.probe_distribution)
        d = r * eps
        diff = np.asarray(grad_fn(theta + d)) - np.asarray(grad_fn(theta - d))
        if not np.all(np.isfinite(diff)):
            bad = int(np.flatnonzero(~np.isfinite(diff))[0])
            where = block_of(bad) if block_of else f"entry {bad}"
            raise NumericError(f"non-finite gradient in {where}")
        total += eps * diff / (2.0 * r)
    raw = total / cfg.num_probes
    return HessianDiag(np.maximum(raw, 0.0), True, cfg.num_probes, rule, raw)


def _net_blocks(net):
    # a bias shares its layer's step: separate, much smaller bias steps blow up
    # the cross terms eps_b * H_bw * r_w * eps_w / r_b in the estimate
    out = []
    for l in range(net.num_weight_arrays):
        w, b = net.weight_block(l), net.bias_block(l)
        out.append((f"layer[{l}]", w.slice, [w.slice] + ([b.slice] if b else [])))
    return out


def _block_label(net, i):
    for b in net.blocks:
        if b.offset <= i < b.offset + b.size:
            return f"layer {b.layer} {b.kind}"
    return f"entry {i}"


def hutchinson_diag(net, params, x, y, loss, cfg: ProbeConfig = ProbeConfig()) -> HessianDiag:
    """Clipped Hutchinson estimate of the Hessian diagonal of the mean batch loss."""
    if len(x) == 0:
        raise ValueError("empty batch")

    def grad_fn(theta):
        return nn.gradient(net, nn.ParamStore(net, theta), x, y, loss)

    return hutchinson_diag_fn(grad_fn, params.flat, cfg, _net_blocks(net), lambda i: _block_label(net, i))


def exact_diag_fn(loss_fn, theta, step=1e-4) -> np.ndarray:
    """Central second differences ``(L(t+he_i) - 2L(t) + L(t-he_i)) / h^2``."""
    theta = np.asarray(theta, dtype=np.float64)
    base = loss_fn(theta)
    out = np.empty_like(theta)
    probe = theta.copy()
    for i in range(theta.size):
        probe[i] = theta[i] + step
        up = loss_fn(probe)
        probe[i] = theta[i] - step
        down = loss_fn(probe)
        probe[i] = theta[i]
        out[i] = (up - 2.0 * base + down) / step**2
    return out


def exact_diag_oracle(net, params, x, y, loss, step=1e-4, max_params=5000) -> HessianDiag:
    """Unclipped brute-force Hessian diagonal; refuses networks above ``max_params``."""
    if params.total_params > max_params:
        raise OracleRefusedError(f"{params.total_params} parameters exceeds the oracle cap of {max_params}")

    def loss_fn(theta):
        return nn.loss_value(net, nn.ParamStore(net, theta), x, y, loss)

    values = exact_diag_fn(loss_fn, params.flat, step)
    return HessianDiag(values, False, 0, {"oracle_step": float(step)}, values)
