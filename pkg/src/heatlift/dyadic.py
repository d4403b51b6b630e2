"""Dyadic polygonal approximations of the heat field and their lifts.

psi(k) interpolates psi linearly between the level-k dyadic nodes j/2^k;
its natural lift is built cell-by-cell on the finest grid, where the
interpolant is linear, so Chen's identity and geometricity hold exactly
by construction.

The level-2 difference between consecutive approximations collapses, at
level-k node pairs, to a closed antisymmetric sum over sibling increments

    (1/2) sum_l (D_{2l-1} ⊗ D_{2l} - D_{2l} ⊗ D_{2l-1}),

which this module evaluates independently of the lifts and cross-checks
against the direct lift difference.  The convergence study estimates the
per-level decay of sup-norm and Besov-norm differences by Monte Carlo
and fits the base-2 exponent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .parallel import deterministic_map
from .sampler import FieldSample, SpectralConfig, sample_field
from .sheets import RoughSheet, spacetime_besov_norm

SUP_KIND = "sup"
BESOV_KIND = "besov"


def validate_besov_params(alpha: float, beta: float, m: float):
    """Constraint chain of the Besov convergence estimates; raises with
    the violated inequality named."""
    if not (1.0 / 3.0 < alpha < 0.5):
        raise ValueError(f"alpha in (1/3, 1/2) violated: alpha={alpha:.6g}")
    if not (4.0 * beta < 1.0 - 2.0 * alpha):
        raise ValueError(
            f"4*beta < 1 - 2*alpha violated: beta={beta:.6g}, alpha={alpha:.6g}"
        )
    if not (beta > 1.0 / m):
        raise ValueError(f"beta > 1/m violated: beta={beta:.6g}, m={m:.6g}")
    if not (alpha - 1.0 / m > 1.0 / 3.0):
        raise ValueError(
            f"alpha - 1/m > 1/3 violated: alpha={alpha:.6g}, m={m:.6g}"
        )


def polygonal_restrict(sample: FieldSample, k: int) -> FieldSample:
    """Linear interpolation between level-k nodes, on the full grid.

    Level K input is returned unchanged (every node is a level-K node).
    """
    K = sample.config.grid_level
    if k > K:
        raise ValueError(f"restriction level {k} exceeds grid level {K}")
    if k == K:
        return FieldSample(
            values=sample.values.copy(),
            config=sample.config,
            replica=sample.replica,
        )
    stride = 2 ** (K - k)
    n = 2**K
    j = np.arange(n + 1)
    q, r = np.divmod(j, stride)
    left = sample.values[:, np.minimum(q * stride, n), :]
    right = sample.values[:, np.minimum((q + 1) * stride, n), :]
    w = r.astype(float) / stride
    values = left * (1.0 - w)[None, :, None] + right * w[None, :, None]
    # Exactness at the kept nodes (w = 0) is automatic.
    return FieldSample(values=values, config=sample.config, replica=sample.replica)


def _lift_values(times: np.ndarray, values: np.ndarray, grid_level: int) -> RoughSheet:
    """Lift every time slice of a field; prefix products vectorized in t."""
    deltas = np.diff(values, axis=1)  # (nt, n_cells, d)
    nt, n_cells, d = deltas.shape
    # Level-1 prefixes telescope exactly (values[j] - values[0]).
    level1 = values - values[:, :1, :]
    contrib = np.einsum("tca,tcb->tcab", level1[:, :-1], deltas)
    contrib += 0.5 * np.einsum("tca,tcb->tcab", deltas, deltas)
    level2 = np.zeros((nt, n_cells + 1, d, d))
    np.cumsum(contrib, axis=1, out=level2[:, 1:])
    return RoughSheet(
        times=times,
        grid_level=grid_level,
        level1=level1,
        level2=level2,
        initial_values=values[:, 0, :].copy(),
    )


def lift_level(sample: FieldSample, k: int) -> RoughSheet:
    """Natural lift of the level-k polygonal approximation, prefix-extended
    to the full grid; the initial-value path psi(., 0) rides along (node 0
    is a level-k node for every k, so it is unaffected by restriction)."""
    restricted = polygonal_restrict(sample, k)
    return _lift_values(
        sample.config.times(), restricted.values, sample.config.grid_level
    )


def _sibling_products(sample: FieldSample, k: int, t_index: int) -> np.ndarray:
    """w_l = D_{2l-1} ⊗ D_{2l} - D_{2l} ⊗ D_{2l-1} over level-(k+1) siblings."""
    K = sample.config.grid_level
    if k + 1 > K:
        raise ValueError(f"need grid level >= {k + 1}, have {K}")
    stride = 2 ** (K - (k + 1))
    nodes = sample.values[t_index, ::stride, :]  # level k+1 nodes
    deltas = np.diff(nodes, axis=0)  # (2^(k+1), d)
    odd = deltas[0::2]
    even = deltas[1::2]
    return np.einsum("la,lb->lab", odd, even) - np.einsum("la,lb->lab", even, odd)


def level2_telescope(
    sample: FieldSample, k: int, t_index: int, i_node: int, j_node: int
) -> np.ndarray:
    """Closed form for Psi(k+1)^2 - Psi(k)^2 at level-k nodes (I, J).

    Must agree entrywise with the direct lift difference; this is the
    central algebraic identity the whole convergence argument rides on.
    """
    if not (0 <= i_node <= j_node <= 2**k):
        raise IndexError(f"need 0 <= I <= J <= {2 ** k}")
    w = _sibling_products(sample, k, t_index)
    return 0.5 * np.sum(w[i_node:j_node], axis=0)


def _level1_sup(sample: FieldSample, k: int) -> float:
    """sup over (t, x) of |psi(k+1) - psi(k)|; attained at the level-(k+1)
    midpoints, where the difference equals the midpoint minus the mean of
    its level-k neighbours."""
    K = sample.config.grid_level
    stride = 2 ** (K - (k + 1))
    nodes = sample.values[:, ::stride, :]  # (nt, 2^(k+1)+1, d)
    mid = nodes[:, 1::2, :]
    mean = 0.5 * (nodes[:, 0:-1:2, :] + nodes[:, 2::2, :])
    gap = np.linalg.norm(mid - mean, axis=2)
    return float(np.max(gap)) if gap.size else 0.0


def _level2_sup(sample: FieldSample, k: int) -> float:
    """max over t, level-k pairs (I, J) and entries of
    |Psi(k+1)^2 - Psi(k)^2| via the prefix spread of the telescoping sum."""
    nt = sample.values.shape[0]
    worst = 0.0
    for t_index in range(nt):
        w = _sibling_products(sample, k, t_index)
        prefix = np.concatenate(
            [np.zeros((1,) + w.shape[1:]), np.cumsum(w, axis=0)], axis=0
        )
        spread = prefix.max(axis=0) - prefix.min(axis=0)
        worst = max(worst, 0.5 * float(spread.max()))
    return worst


@dataclass(frozen=True)
class ConvergenceRow:
    k: int
    level: int
    norm_kind: str
    estimate: float
    stderr: float
    replicas: int


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    slope_stderr: float
    n_points: int


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow] = field(default_factory=list)
    fits: dict[str, SlopeFit] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.rows

    def csv_rows(self) -> list[str]:
        out = ["k,level,norm_kind,estimate,stderr,replicas"]
        for r in self.rows:
            out.append(
                f"{r.k},{r.level},{r.norm_kind},{r.estimate!r},{r.stderr!r},{r.replicas}"
            )
        return out

    def fits_json(self) -> dict:
        return {
            key: {
                "slope": f.slope,
                "intercept": f.intercept,
                "slope_stderr": f.slope_stderr,
                "n_points": f.n_points,
            }
            for key, f in self.fits.items()
        }


def _fit_log2_slope(ks: np.ndarray, estimates: np.ndarray) -> SlopeFit:
    y = np.log2(estimates)
    x = ks.astype(float)
    n = x.size
    slope, intercept = np.polyfit(x, y, 1)
    if n > 2:
        resid = y - (slope * x + intercept)
        sigma2 = float(np.sum(resid**2)) / (n - 2)
        se = float(np.sqrt(sigma2 / np.sum((x - x.mean()) ** 2)))
    else:
        se = float("nan")
    return SlopeFit(
        slope=float(slope), intercept=float(intercept), slope_stderr=se, n_points=n
    )


def convergence_study(
    config: SpectralConfig,
    k_range,
    replicas: int,
    kinds=(SUP_KIND,),
    alpha: float | None = None,
    beta: float | None = None,
    m: float | None = None,
    threads: int = 1,
) -> ConvergenceTable:
    """Monte Carlo decay of successive dyadic differences, per level.

    Sup mode records E[sup^2 |psi(k+1) - psi(k)|] for level 1 (the square
    keeps it on the variance scale the moment bounds control) and
    E[max |Psi(k+1)^2 - Psi(k)^2|] for level 2.  Besov mode records the
    mean space-time Besov norms of the successive differences and
    requires the full parameter chain to be feasible.

    Replicas run independently (parallelizable) and are reduced in
    replica order.
    """
    k_range = sorted(int(k) for k in k_range)
    if kinds and k_range:
        if max(k_range) + 1 > config.grid_level:
            raise ValueError(
                f"k range up to {max(k_range)} needs grid_level >= "
                f"{max(k_range) + 1}, have {config.grid_level}"
            )
    use_besov = BESOV_KIND in kinds
    if use_besov:
        if alpha is None or beta is None or m is None:
            raise ValueError("besov kind needs alpha, beta and m")
        validate_besov_params(alpha, beta, m)

    table = ConvergenceTable()
    if replicas <= 0 or not k_range or not kinds:
        return table

    def one_replica(r: int):
        sample = sample_field(config, r)
        out = {}
        lifts = {}
        if use_besov:
            for k in range(min(k_range), max(k_range) + 2):
                lifts[k] = lift_level(sample, k)
        for k in k_range:
            if SUP_KIND in kinds:
                out[(k, 1, SUP_KIND)] = _level1_sup(sample, k) ** 2
                out[(k, 2, SUP_KIND)] = _level2_sup(sample, k)
            if use_besov:
                norm = spacetime_besov_norm(
                    lifts[k + 1], beta, alpha, m, relative_to=lifts[k]
                )
                out[(k, 1, BESOV_KIND)] = norm.level1
                out[(k, 2, BESOV_KIND)] = norm.level2
        return out

    results = deterministic_map(one_replica, list(range(replicas)), threads=threads)

    keys = sorted(results[0].keys(), key=lambda kk: (kk[2], kk[1], kk[0]))
    for key in keys:
        vals = np.array([res[key] for res in results])
        k, level, kind = key
        table.rows.append(
            ConvergenceRow(
                k=k,
                level=level,
                norm_kind=kind,
                estimate=float(vals.mean()),
                stderr=float(vals.std(ddof=1) / np.sqrt(replicas))
                if replicas > 1
                else float("nan"),
                replicas=replicas,
            )
        )

    for kind in kinds:
        for level in (1, 2):
            rows = [r for r in table.rows if r.norm_kind == kind and r.level == level]
            if len(rows) >= 2 and all(r.estimate > 0 for r in rows):
                table.fits[f"{kind}:{level}"] = _fit_log2_slope(
                    np.array([r.k for r in rows]),
                    np.array([r.estimate for r in rows]),
                )
    return table
