"""Sharpness and capacity metrics.

The central quantity is the *normalized sharpness* of a trained network: for
every weight array it solves

    min over (alpha, beta) of  sum_ij  a_ij exp(alpha_i + beta_j) + b_ij exp(-alpha_i - beta_j)

with ``a`` the (clipped) Hessian diagonal grouped by row/column and
``b = W**2 / (2 * lam)``, then sums the per-array minima. ``alpha`` and
``beta`` are log-variances of per-row and per-column posterior scales. The
objective is jointly convex in (alpha, beta), and for fixed ``beta`` it
separates over rows with a closed-form minimizer, so block coordinate
descent is exact and step-size free.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .hessian import HessianDiag, NumericError, ProbeConfig, hutchinson_diag
from .losses import LossId, as_loss_id

CLAMP = 40.0


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_sweeps: int = 10000
    clamp: float = CLAMP
    method: str = "cd"
    gd_max_iter: int = 200000
    gd_grad_tol: float = 1e-13


@dataclass
class SolveDiagnostics:
    objective_trace: list
    iterations: int
    converged: bool
    clamp_hits: int
    method: str = "cd"


@dataclass
class VarianceParams:
    alpha: np.ndarray
    beta: np.ndarray


@dataclass
class NormalizedSharpness:
    value: float
    per_layer: list
    variances: list
    diagnostics: list


# -- the per-array variance problem ------------------------------------------


def variance_objective(a, b, alpha, beta) -> float:
    s = alpha[:, None] + beta[None, :]
    return float((a * np.exp(s) + b * np.exp(-s)).sum())


def variance_gradient(a, b, alpha, beta):
    s = alpha[:, None] + beta[None, :]
    terms = a * np.exp(s) - b * np.exp(-s)
    return terms.sum(axis=1), terms.sum(axis=0)


def _block_update(pos, neg, current, clamp):
    # argmin_x  pos*e^x + neg*e^-x  is  x = (ln neg - ln pos) / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        x = 0.5 * (np.log(neg) - np.log(pos))
    x = np.where(np.isnan(x), current, x)
    return np.clip(x, -clamp, clamp)


def _check_coefficients(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"a and b must be matching matrices, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("non-finite curvature or weight coefficients")
    if (a < 0).any() or (b < 0).any():
        raise ValueError("coefficients must be non-negative")
    return a, b


def solve_variances(a, b, cfg: SolverConfig = SolverConfig()):
    """Minimize the row/column variance objective for one weight array.

    Returns ``(minimum, VarianceParams, SolveDiagnostics)``.
    """
    a, b = _check_coefficients(a, b)
    if cfg.method == "gd":
        return _solve_gd(a, b, cfg)
    m, n = a.shape
    alpha, beta = np.zeros(m), np.zeros(n)
    obj = variance_objective(a, b, alpha, beta)
    trace = [obj]
    converged = False
    sweeps = 0
    while sweeps < cfg.max_sweeps:
        sweeps += 1
        new_alpha = _block_update(a @ np.exp(beta), b @ np.exp(-beta), alpha, cfg.clamp)
        new_beta = _block_update(np.exp(new_alpha) @ a, np.exp(-new_alpha) @ b, beta, cfg.clamp)
        new_obj = variance_objective(a, b, new_alpha, new_beta)
        if new_obj > obj:
            # exact block minimization cannot increase S; this is rounding at the optimum
            converged = True
            break
        alpha, beta = new_alpha, new_beta
        change = obj - new_obj
        obj = new_obj
        trace.append(obj)
        if change <= cfg.tol * max(abs(obj), np.finfo(float).tiny):
            converged = True
            break
    hits = int((np.abs(alpha) >= cfg.clamp).sum() + (np.abs(beta) >= cfg.clamp).sum())
    return obj, VarianceParams(alpha, beta), SolveDiagnostics(trace, sweeps, converged, hits, "cd")


def _solve_gd(a, b, cfg):
    """Gradient descent with Armijo backtracking; a cross-check for the CD solver."""
    m, n = a.shape
    alpha, beta = np.zeros(m), np.zeros(n)
    obj = variance_objective(a, b, alpha, beta)
    trace = [obj]
    step = 1.0
    converged = False
    it = 0
    for it in range(1, cfg.gd_max_iter + 1):
        ga, gb = variance_gradient(a, b, alpha, beta)
        gnorm2 = ga @ ga + gb @ gb
        if np.sqrt(gnorm2) <= cfg.gd_grad_tol * max(obj, 1.0):
            converged = True
            break
        step = min(step * 2.0, 1e6)
        while True:
            na = np.clip(alpha - step * ga, -cfg.clamp, cfg.clamp)
            nb = np.clip(beta - step * gb, -cfg.clamp, cfg.clamp)
            new_obj = variance_objective(a, b, na, nb)
            if new_obj <= obj - 1e-4 * step * gnorm2 or step < 1e-20:
                break
            step *= 0.5
        if new_obj > obj:
            converged = True
            break
        alpha, beta = na, nb
        done = obj - new_obj <= 1e-16 * obj
        obj = new_obj
        trace.append(obj)
        if done:
            converged = True
            break
    hits = int((np.abs(alpha) >= cfg.clamp).sum() + (np.abs(beta) >= cfg.clamp).sum())
    return obj, VarianceParams(alpha, beta), SolveDiagnostics(trace, it, converged, hits, "gd")


# -- network-level metrics --------------------------------------------------


def _values(h):
    return h.values if isinstance(h, HessianDiag) else np.asarray(h, dtype=np.float64)


def trace_sharpness(h) -> float:
    """Sum of the Hessian diagonal over every parameter, biases included."""
    return float(_values(h).sum())


def frobenius_sq_sum(params) -> float:
    return float(sum((w**2).sum() for w in params.weights()))


def kl_diag_gaussian(params, sigma_prior, sigma_posterior) -> float:
    """KL(Q || P) for zero-mean-prior diagonal Gaussians with one scale per layer.

    ``Q = N(theta, sigma_posterior[l]^2)``, ``P = N(0, sigma_prior[l]^2)``, both
    broadcast over the weights and bias of layer ``l``.
    """
    sp = np.asarray(sigma_prior, dtype=np.float64)
    sq = np.asarray(sigma_posterior, dtype=np.float64)
    if (sp <= 0).any() or (sq <= 0).any():
        raise ValueError("variances must be positive")
    net = params.net
    total = 0.0
    for block in net.blocks:
        w = params.flat[block.slice]
        p, q = sp[block.layer], sq[block.layer]
        total += float((np.log(p / q) + (w**2 + q**2) / (2 * p**2) - 0.5).sum())
    return total


def matrix_normalized_sharpness(params, h, lam=0.5):
    """Sum over weight arrays of ``sqrt(||W||_F^2 * H)``, with ``H`` the summed diagonal.

    Returns ``(value, sigma2)`` where ``sigma2[l]`` is the optimal per-array
    posterior variance ``sqrt(||W||_F^2 / (2 lam H))`` (``inf`` when ``H == 0``).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    vals = _values(h)
    net = params.net
    value = 0.0
    sigma2 = []
    for l in range(net.num_weight_arrays):
        fro = float((params.weight(l) ** 2).sum())
        curv = float(vals[net.weight_block(l).slice].sum())
        value += np.sqrt(fro * curv)
        with np.errstate(divide="ignore"):
            sigma2.append(float(np.sqrt(fro / (2 * lam * curv))) if curv > 0 else np.inf)
    return float(value), sigma2


def layer_coefficients(params, h, groups, layer, lam):
    g = groups[layer]
    a = g.reduce(_values(h))
    b = g.reduce(params.flat**2) / (2 * lam)
    return a, b


def normalized_sharpness(params, h, groups=None, lam=0.5, cfg: SolverConfig = SolverConfig()) -> NormalizedSharpness:
    """Normalized sharpness: sum of per-array minima of the row/column variance problem.

    Biases contribute nothing. ``h`` should already be clipped at zero.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    groups = groups or nn.param_groups(params.net)
    per_layer, variances, diags = [], [], []
    for g in groups:
        a, b = layer_coefficients(params, h, groups, g.layer, lam)
        value, var, diag = solve_variances(a, b, cfg)
        per_layer.append(value)
        variances.append(var)
        diags.append(diag)
    return NormalizedSharpness(float(sum(per_layer)), per_layer, variances, diags)


def pac_bayes_bound(train_loss_q, kl, m, delta, lam) -> float:
    """``train_loss_q + (kl - ln delta + lam^2 / (2m)) / lam`` for a [0, 1]-bounded loss."""
    if not 0.0 <= train_loss_q <= 1.0:
        raise ValueError("train_loss_q must lie in [0, 1]")
    if kl < 0 or m < 1 or not 0.0 < delta <= 1.0 or lam <= 0:
        raise ValueError("need kl >= 0, m >= 1, 0 < delta <= 1, lam > 0")
    return train_loss_q + (kl - np.log(delta) + lam**2 / (2.0 * m)) / lam


def pac_bayes_sweep(train_loss_q, kl, m, delta, lams):
    """Best bound over a lambda grid, paying ``ln |grid|`` for the union bound.

    Returns ``(bound, lam)``.
    """
    lams = list(lams)
    if not lams:
        raise ValueError("empty lambda grid")
    union_delta = delta / len(lams)
    bounds = [pac_bayes_bound(train_loss_q, kl, m, union_delta, lam) for lam in lams]
    best = int(np.argmin(bounds))
    return float(bounds[best]), float(lams[best])


def fisher_rao_norm(net, params, x, y, loss) -> float:
    """``sum_i theta_i^2 * mean_z (d loss(z) / d theta_i)^2`` over per-sample gradients."""
    xb, _ = nn._batch_input(net, x)
    y = np.asarray(y)
    sq = np.zeros(net.total_params)
    for n in range(len(xb)):
        g = nn.gradient(net, params, xb[n : n + 1], y[n : n + 1], loss)
        sq += g**2
    return float((params.flat**2 * sq).sum() / len(xb))


# -- noise-based alternative ------------------------------------------------


@dataclass(frozen=True)
class NoiseConfig:
    steps: int = 500
    lr: float = 0.05
    samples_per_step: int = 4
    init_log_var: float = -10.0
    beta1: float = 0.9
    # short second-moment memory: penalty gradients shrink by orders of magnitude
    beta2: float = 0.9
    eps: float = 1e-8
    clamp: float = CLAMP


@dataclass
class NoiseSharpness:
    value: float
    gap: float
    penalty: float
    variances: list
    nonconvex: bool = True
    lambda_sensitive: bool = True


def noise_based_sharpness(net, params, x, y, groups=None, lam=0.5, mc_samples=1000, cfg: NoiseConfig = NoiseConfig(), seed=0, loss=LossId.NSCE) -> NoiseSharpness:
    """Directly minimize ``E_Q[L] - L + sum W^2 / (2 lam sigma^2 sigma'^2)`` over (alpha, beta).

    The posterior perturbs weight ``(i, j)`` by ``exp((alpha_i + beta_j) / 2) * eps``;
    biases are not perturbed. Optimized with Adam on reparametrized samples,
    then evaluated with ``mc_samples`` antithetic Monte-Carlo draws.
    """
    groups = groups or nn.param_groups(net)
    rng = np.random.default_rng(seed)
    base = nn.loss_value(net, params, x, y, loss)
    w2 = [g.reduce(params.flat**2) / (2 * lam) for g in groups]
    var = [[np.full(g.n_rows, cfg.init_log_var / 2), np.full(g.n_cols, cfg.init_log_var / 2)] for g in groups]
    m1 = [[np.zeros_like(v) for v in pair] for pair in var]
    m2 = [[np.zeros_like(v) for v in pair] for pair in var]

    def stds(var):
        out = np.zeros(net.total_params)
        for g, (al, be) in zip(groups, var):
            s = np.exp(0.5 * (al[:, None] + be[None, :]))
            out[g.block.slice] = np.broadcast_to(s[:, :, None], (g.n_rows, g.n_cols, g.taps)).ravel()
        return out

    for t in range(1, cfg.steps + 1):
        std = stds(var)
        acc = np.zeros(net.total_params)
        for _ in range(cfg.samples_per_step):
            eps = rng.standard_normal(net.total_params)
            for sign in (1.0, -1.0):
                _, g = nn.loss_and_gradient(net, nn.ParamStore(net, params.flat + sign * std * eps), x, y, loss)
                acc += g * sign * eps
        # d/d(alpha_i) of theta + std*eps is eps * std / 2
        dtheta = acc * std * 0.5 / (2 * cfg.samples_per_step)
        for k, (g, (al, be)) in enumerate(zip(groups, var)):
            gap_grad = g.reduce(dtheta)
            pen = w2[k] * np.exp(-(al[:, None] + be[None, :]))
            grads = (gap_grad.sum(axis=1) - pen.sum(axis=1), gap_grad.sum(axis=0) - pen.sum(axis=0))
            for v in range(2):
                m1[k][v] = cfg.beta1 * m1[k][v] + (1 - cfg.beta1) * grads[v]
                m2[k][v] = cfg.beta2 * m2[k][v] + (1 - cfg.beta2) * grads[v] ** 2
                mhat = m1[k][v] / (1 - cfg.beta1**t)
                vhat = m2[k][v] / (1 - cfg.beta2**t)
                var[k][v] = np.clip(var[k][v] - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps), -cfg.clamp, cfg.clamp)

    std = stds(var)
    gap = 0.0
    pairs = max(1, mc_samples // 2)
    for _ in range(pairs):
        eps = rng.standard_normal(net.total_params)
        for sign in (1.0, -1.0):
            gap += nn.loss_value(net, nn.ParamStore(net, params.flat + sign * std * eps), x, y, loss) - base
    gap /= 2 * pairs
    penalty = float(sum((w2[k] * np.exp(-(al[:, None] + be[None, :]))).sum() for k, (al, be) in enumerate(var)))
    return NoiseSharpness(gap + penalty, gap, penalty, [VarianceParams(al, be) for al, be in var])


# -- full report -------------------------------------------------------------


@dataclass
class SharpnessReport:
    trace_sharpness: float
    frobenius_sq_sum: float
    matrix_normalized: float
    normalized: float
    fisher_rao: float
    noise_based: float
    lam: float
    loss_id: str
    probe_config: dict
    per_layer: list
    diagnostics: list
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def measure(net, params, x, y, loss=LossId.NSCE, lam=0.5, probes: ProbeConfig = ProbeConfig(), solver: SolverConfig = SolverConfig(), h=None, fisher=True, noise=None) -> SharpnessReport:
    """Compute every metric for one trained model.

    ``h`` overrides the Hutchinson estimate (e.g. with an exact oracle). ``noise``
    is an optional ``NoiseConfig`` enabling the noise-based variant.
    """
    loss = as_loss_id(loss)
    if h is None:
        h = hutchinson_diag(net, params, x, y, loss, probes)
    vals = _values(h)
    groups = nn.param_groups(net)
    mns, _ = matrix_normalized_sharpness(params, h, lam)
    ns = normalized_sharpness(params, h, groups, lam, solver)
    per_layer = []
    for l in range(net.num_weight_arrays):
        wb = net.weight_block(l)
        bb = net.bias_block(l)
        tr = float(vals[wb.slice].sum()) + (float(vals[bb.slice].sum()) if bb else 0.0)
        fro = float((params.weight(l) ** 2).sum())
        per_layer.append(
            {
                "layer": l,
                "trace": tr,
                "frobenius_sq": fro,
                "matrix_normalized": float(np.sqrt(fro * vals[wb.slice].sum())),
                "normalized": ns.per_layer[l],
            }
        )
    diagnostics = [
        {"iterations": d.iterations, "converged": d.converged, "clamp_hits": d.clamp_hits, "final_objective": d.objective_trace[-1]}
        for d in ns.diagnostics
    ]
    fr = fisher_rao_norm(net, params, x, y, loss) if fisher else None
    nb = noise_based_sharpness(net, params, x, y, groups, lam, cfg=noise, seed=probes.seed, loss=loss).value if noise else None
    notes = [
        "constant terms of the KL divergence are excluded from every metric",
        "kl_diag_gaussian sums the standard per-parameter diagonal Gaussian KL",
    ]
    if noise:
        notes.append("noise_based is non-convex in the variances and sensitive to lambda")
    return SharpnessReport(
        trace_sharpness=trace_sharpness(vals),
        frobenius_sq_sum=frobenius_sq_sum(params),
        matrix_normalized=mns,
        normalized=ns.value,
        fisher_rao=fr,
        noise_based=nb,
        lam=float(lam),
        loss_id=loss.value,
        probe_config=asdict(probes),
        per_layer=per_layer,
        diagnostics=diagnostics,
        notes=notes,
    )
