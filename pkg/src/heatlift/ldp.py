"""Large-deviation experiments for the dilated lifts.

Cameron-Martin shifts are parameterized by finitely many per-mode L^2
controls f_n: the shifted mean path has coefficients
hat{h}_n(t) = int_0^t e^{-lam_n (t-r)} f_n(r) dr and squared norm
sum ||f_n||_{L^2}^2.  With piecewise-constant controls whose breakpoints
sit on the time grid, the convolution is evaluated in closed form step
by step, exactly.

The rate function on lifted shifts is ||h||_H^2 / 2.  Tail probabilities
of the approximation gap are estimated by Monte Carlo with Wilson
intervals (a zero count reports the interval bound, never -inf), chaos
moment growth is fitted from batched scalar replicas, and the pointwise
Schilder scaling check is fully analytic via the Gaussian tail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .covariance import cov
from .dyadic import lift_level
from .parallel import deterministic_map
from .sampler import (
    FieldSample,
    SpectralConfig,
    basis_eval,
    mode_rate,
    sample_field,
    sample_slice_marginal,
)
from .sheets import _increment_tables, dist_infty


# ---------------------------------------------------------------------------
# Cameron-Martin controls and paths

@dataclass(frozen=True)
class ModeControl:
    """Piecewise-constant control for one (mode, component) pair.

    breakpoints run 0 = t_0 < ... < t_p = T; values[i] applies on
    [t_i, t_{i+1}).
    """

    mode: int
    component: int
    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        if len(bp) < 2 or len(vals) != len(bp) - 1:
            raise ValueError("need p+1 breakpoints for p values")
        if bp[0] != 0.0 or any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must increase from 0")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    def l2_norm_sq(self) -> float:
        widths = np.diff(self.breakpoints)
        return float(np.sum(np.asarray(self.values) ** 2 * widths))


@dataclass(frozen=True)
class CMControl:
    """Finite family of mode controls; one per (mode, component)."""

    controls: tuple

    def __post_init__(self):
        ctrls = tuple(self.controls)
        keys = [(c.mode, c.component) for c in ctrls]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (mode, component) control")
        object.__setattr__(self, "controls", ctrls)

    def h_norm_sq(self) -> float:
        return sum(c.l2_norm_sq() for c in self.controls)

    def scaled(self, lam: float) -> "CMControl":
        return CMControl(
            tuple(
                ModeControl(
                    c.mode,
                    c.component,
                    c.breakpoints,
                    tuple(lam * v for v in c.values),
                )
                for c in self.controls
            )
        )


def rate_function(ctrl: CMControl) -> float:
    """I = ||h||_H^2 / 2 on lifted shifts (infinite off them)."""
    return 0.5 * ctrl.h_norm_sq()


def control_from_dict(doc: dict) -> ModeControl:
    return ModeControl(
        mode=int(doc["mode"]),
        component=int(doc.get("component", 0)),
        breakpoints=tuple(doc["breakpoints"]),
        values=tuple(doc["values"]),
    )


@dataclass
class CameronMartinPath:
    """Deterministic shift evaluated on the sampler grid."""

    field: FieldSample
    control: CMControl
    h_norm_sq: float

    @property
    def config(self) -> SpectralConfig:
        return self.field.config


def _step_values(ctrl: ModeControl, times: np.ndarray) -> np.ndarray:
    bp = np.asarray(ctrl.breakpoints)
    horizon = times[-1]
    if abs(bp[-1] - horizon) > 1e-12:
        raise ValueError(
            f"control ends at {bp[-1]}, grid horizon is {horizon}"
        )
    on_grid = np.min(np.abs(times[None, :] - bp[:, None]), axis=1)
    if np.any(on_grid > 1e-12):
        raise ValueError("control breakpoints must sit on the time grid")
    mids = 0.5 * (times[:-1] + times[1:])
    idx = np.searchsorted(bp, mids, side="right") - 1
    return np.asarray(ctrl.values)[idx]


def cameron_martin_path(ctrl: CMControl, config: SpectralConfig) -> CameronMartinPath:
    """Evaluate h(t,x) = sum_n hat{h}_n(t) v_n(x) exactly on the grid."""
    for c in ctrl.controls:
        if abs(c.mode) > config.n_modes:
            raise ValueError(
                f"control mode {c.mode} beyond sampler cutoff {config.n_modes}"
            )
        if not 0 <= c.component < config.dim:
            raise ValueError(f"component {c.component} outside dim {config.dim}")
    times = config.times()
    nodes = config.nodes()
    delta = config.time_horizon / config.n_time
    values = np.zeros((config.n_time + 1, config.n_nodes, config.dim))
    for c in ctrl.controls:
        lam = float(mode_rate(abs(c.mode)))
        steps = _step_values(c, times)
        coeff = np.zeros(config.n_time + 1)
        if lam == 0.0:
            decay, gain = 1.0, delta
        else:
            decay = np.exp(-lam * delta)
            gain = -np.expm1(-lam * delta) / lam
        for j in range(config.n_time):
            coeff[j + 1] = decay * coeff[j] + steps[j] * gain
        values[:, :, c.component] += np.outer(coeff, basis_eval(c.mode, nodes))
    return CameronMartinPath(
        field=FieldSample(values=values, config=config, replica=-1),
        control=ctrl,
        h_norm_sq=ctrl.h_norm_sq(),
    )


# ---------------------------------------------------------------------------
# Regularity and lift-convergence checks for CM paths

@dataclass(frozen=True)
class CMRegularityReport:
    q: float
    gamma: float
    holder_half: float
    qvar_surrogate: float
    holder_half_normalized: float
    qvar_normalized: float


def cm_regularity_check(
    path: CameronMartinPath, q: float, gamma: float | None = None
) -> CMRegularityReport:
    """Grid 1/2-Hoelder constant and dyadic q-variation majorant
    sum_k k^gamma sum_i |increment at scale 2^-k|^q, both linearized
    (the majorant via its q-th root) and normalized by ||h||_H."""
    if not (4.0 / 3.0 < q < 2.0):
        raise ValueError(f"q must lie in (4/3, 2), got {q}")
    if gamma is None:
        # Any gamma > q - 1 works; staying close to that edge keeps the
        # k-sum's tail small so the report stabilizes at moderate grids.
        gamma = q - 0.75
    values = path.field.values
    K = path.config.grid_level
    n = 2**K
    iu, ju = np.triu_indices(n + 1, k=1)
    sep = (ju - iu) / n
    holder = 0.0
    for t_index in range(values.shape[0]):
        diffs = np.linalg.norm(values[t_index, ju, :] - values[t_index, iu, :], axis=1)
        holder = max(holder, float(np.max(diffs / np.sqrt(sep))))
    qvar = 0.0
    for t_index in range(values.shape[0]):
        total = 0.0
        for k in range(1, K + 1):
            stride = 2 ** (K - k)
            nodes = values[t_index, ::stride, :]
            incs = np.linalg.norm(np.diff(nodes, axis=0), axis=1)
            total += k**gamma * float(np.sum(incs**q))
        qvar = max(qvar, total)
    qvar_lin = qvar ** (1.0 / q)
    h = np.sqrt(path.h_norm_sq)
    return CMRegularityReport(
        q=q,
        gamma=float(gamma),
        holder_half=holder,
        qvar_surrogate=qvar_lin,
        holder_half_normalized=holder / h if h > 0 else 0.0,
        qvar_normalized=qvar_lin / h if h > 0 else 0.0,
    )


@dataclass(frozen=True)
class LiftDecayRow:
    k: int
    level1_sup: float
    level2_sup: float


def cm_lift_uniform_convergence(
    path: CameronMartinPath, k_range
) -> list[LiftDecayRow]:
    """sup over t and grid pairs of |H(k)^i - H(k_max)^i|, i = 1, 2,
    with k_max the full grid level."""
    config = path.config
    ref = lift_level(path.field, config.grid_level)
    n = 2**config.grid_level
    iu, ju = np.triu_indices(n + 1, k=1)
    ref1, ref2 = _increment_tables(ref, iu, ju)
    rows = []
    for k in sorted(int(k) for k in k_range):
        lifted = lift_level(path.field, k)
        f1, f2 = _increment_tables(lifted, iu, ju)
        sup1 = float(np.max(np.linalg.norm(f1 - ref1, axis=2)))
        sup2 = float(np.max(np.linalg.norm(f2 - ref2, axis=2)))
        rows.append(LiftDecayRow(k=k, level1_sup=sup1, level2_sup=sup2))
    return rows


# ---------------------------------------------------------------------------
# Tail probabilities of the approximation gap

def wilson_interval(count: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("need at least one trial")
    p = count / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class TailRow:
    epsilon: float
    delta: float
    k: int
    replicas: int
    count: int
    p_hat: float
    ci_low: float
    ci_high: float
    eps2_log: float
    zero_count: bool


def tail_probability(
    delta: float,
    epsilon: float,
    k: int,
    replicas: int,
    config: SpectralConfig,
    threads: int = 1,
) -> TailRow:
    """Monte Carlo estimate of P(dist_inf(eps*Psi, eps*Psi(k)) > delta).

    By exact homogeneity of dist_inf this is computed through the single
    code path P(dist_inf(Psi, Psi(k)) > delta / eps).  When no replica
    exceeds the threshold, eps^2 * log of the Wilson upper bound is
    reported instead of -inf.
    """
    if replicas < 1:
        raise ValueError("need replicas >= 1")
    threshold = delta / epsilon

    def one(r: int) -> float:
        sample = sample_field(config, r)
        full = lift_level(sample, config.grid_level)
        approx = lift_level(sample, k)
        return dist_infty(full, approx)

    dists = deterministic_map(one, list(range(replicas)), threads=threads)
    count = int(np.sum(np.asarray(dists) > threshold))
    p_hat = count / replicas
    lo, hi = wilson_interval(count, replicas)
    zero = count == 0
    basis = p_hat if not zero else hi
    return TailRow(
        epsilon=epsilon,
        delta=delta,
        k=k,
        replicas=replicas,
        count=count,
        p_hat=p_hat,
        ci_low=lo,
        ci_high=hi,
        eps2_log=float(epsilon**2 * np.log(basis)),
        zero_count=zero,
    )


# ---------------------------------------------------------------------------
# Chaos moment growth

@dataclass
class ChaosReport:
    functional: str
    degree: int
    q_list: tuple
    norm_ratios: dict
    exponent: float
    exponent_stderr: float
    ratio4: float
    ratio4_stderr: float
    replicas: int
    empty: bool = False


def _fit_exponent(qs: np.ndarray, ratios: np.ndarray) -> float:
    # ratios are relative to q = 2, so the q = 2 point is exact (log 1).
    return float(np.polyfit(np.log(qs), np.log(ratios), 1)[0])


def chaos_moment_ratio(
    functional: str,
    q_list,
    replicas: int,
    config: SpectralConfig,
    t: float = 1.0,
    x: float = 0.0,
    y: float | None = None,
    level: int = 5,
    batches: int = 25,
) -> ChaosReport:
    """Monte Carlo L^q/L^2 norm ratios of one chaos element and the
    fitted growth exponent of q -> ||Z||_q.

    functional "level1" evaluates a single component of a level-1
    increment (first Wiener chaos); "level2" evaluates an off-diagonal
    entry of the level-`level` polygonal lift between x and y (second
    chaos; needs dim >= 2).  Scalar replicas are drawn from the exact
    single-time marginal.

    y defaults to x + 1/2 for level1 and to one dyadic cell x + 2^-level
    for level2: over a single cell the entry is a plain product of
    independent component increments, so the fitted growth reflects the
    chaos order instead of being averaged toward Gaussian by aggregation
    over many cells.
    """
    q_arr = np.asarray(sorted(set(float(q) for q in q_list)))
    if np.any(q_arr < 2.0):
        raise ValueError("moment orders below 2 are rejected")
    if y is None:
        y = x + (0.5 if functional == "level1" else 2.0**-level)
    rng = np.random.Generator(
        np.random.Philox(key=np.array([config.seed, 0xC4A05], dtype=np.uint64))
    )
    if functional == "level1":
        degree = 1
        fields = sample_slice_marginal(
            config, t, replicas, rng, nodes=np.array([x, y])
        )
        z = fields[:, 1, 0] - fields[:, 0, 0]
    elif functional == "level2":
        degree = 2
        if config.dim < 2:
            raise ValueError("level2 functional needs dim >= 2")
        lo, hi = min(x, y), max(x, y)
        n_cells = (hi - lo) * 2**level
        if abs(n_cells - round(n_cells)) > 1e-9 or round(n_cells) < 1:
            raise ValueError(
                f"y - x = {hi - lo} is not a positive multiple of 2^-{level}"
            )
        n_cells = int(round(n_cells))
        nodes = lo + np.arange(n_cells + 1) * 2.0**-level
        fields = sample_slice_marginal(config, t, replicas, rng, nodes=nodes)
        deltas = np.diff(fields[:, :, :2], axis=1)  # (M, n_cells, 2)
        p1 = np.cumsum(deltas, axis=1)
        p1 = np.concatenate([np.zeros((replicas, 1, 2)), p1], axis=1)
        z = np.einsum("mc,mc->m", p1[:, :-1, 0], deltas[:, :, 1])
        z += 0.5 * np.einsum("mc,mc->m", deltas[:, :, 0], deltas[:, :, 1])
    else:
        raise ValueError(f"unknown functional {functional!r}")

    absz = np.abs(z)
    norm2 = float(np.mean(absz**2)) ** 0.5
    if norm2 == 0.0:
        return ChaosReport(
            functional=functional,
            degree=degree,
            q_list=tuple(q_arr),
            norm_ratios={},
            exponent=float("nan"),
            exponent_stderr=float("nan"),
            ratio4=float("nan"),
            ratio4_stderr=float("nan"),
            replicas=replicas,
            empty=True,
        )

    def ratios_of(sample: np.ndarray) -> np.ndarray:
        base = float(np.mean(sample**2)) ** 0.5
        return np.array(
            [float(np.mean(sample**q)) ** (1.0 / q) / base for q in q_arr]
        )

    full_ratios = ratios_of(absz)
    exponent = _fit_exponent(q_arr, full_ratios)

    q4 = np.where(np.isclose(q_arr, 4.0))[0]
    batch_parts = np.array_split(absz, batches)
    batch_exp = []
    batch_r4 = []
    for part in batch_parts:
        if part.size == 0:
            continue
        r = ratios_of(part)
        batch_exp.append(_fit_exponent(q_arr, r))
        if q4.size:
            batch_r4.append(r[q4[0]])
    exp_se = float(np.std(batch_exp, ddof=1) / np.sqrt(len(batch_exp)))
    if q4.size:
        ratio4 = float(full_ratios[q4[0]])
        ratio4_se = float(np.std(batch_r4, ddof=1) / np.sqrt(len(batch_r4)))
    else:
        ratio4, ratio4_se = float("nan"), float("nan")

    return ChaosReport(
        functional=functional,
        degree=degree,
        q_list=tuple(q_arr),
        norm_ratios={float(q): float(r) for q, r in zip(q_arr, full_ratios)},
        exponent=exponent,
        exponent_stderr=exp_se,
        ratio4=ratio4,
        ratio4_stderr=ratio4_se,
        replicas=replicas,
    )


# ---------------------------------------------------------------------------
# Pointwise Schilder scaling (analytic)

@dataclass(frozen=True)
class SchilderRow:
    epsilon: float
    threshold: float
    probability: float
    eps2_log: float


@dataclass(frozen=True)
class SchilderReport:
    t: float
    x: float
    component: int
    sigma_sq: float
    limit: float
    rows: tuple


def schilder_point_check(
    t: float,
    x: float,
    component: int,
    a: float,
    eps_list,
    method: str = "fourier",
) -> SchilderReport:
    """Analytic curve eps^2 log P(N(0, sigma^2) > a / eps).

    The Gaussian tail gives the exact scaled log-probability via the
    normal log-CDF, so no sampling is involved; the curve increases to
    -a^2 / (2 sigma^2) from below as eps decreases.
    """
    sigma_sq = float(cov(t, x, t, x, method=method))
    if sigma_sq <= 0.0:
        raise ValueError(f"degenerate marginal at t={t} (variance {sigma_sq})")
    sigma = np.sqrt(sigma_sq)
    rows = []
    for eps in eps_list:
        log_p = float(log_ndtr(-a / (eps * sigma)))
        rows.append(
            SchilderRow(
                epsilon=float(eps),
                threshold=float(a),
                probability=float(np.exp(log_p)),
                eps2_log=float(eps * eps * log_p),
            )
        )
    return SchilderReport(
        t=t,
        x=x,
        component=component,
        sigma_sq=sigma_sq,
        limit=-a * a / (2.0 * sigma_sq),
        rows=tuple(rows),
    )
