"""Spatial rough paths on dyadic grids.

A RoughSlice is the lift of one piecewise-linear spatial path, stored as
prefix group elements A(0, x_j) so that any increment A(x_i, x_j) is
reconstructed exactly (Chen's identity holds by construction) in O(1):

    A(x_i, x_j) = A(0, x_i)^{-1} ⊗ A(0, x_j).

A RoughSheet stacks one slice per time-grid point together with the
initial-value path v_t = a(t, 0), which enters all distances additively.

Besov integrals are discretized as node-pair Riemann sums with uniform
weight (2^-K)^2 per pair; the near-diagonal singularity is integrable
under the stated parameter constraints and refinement behaviour is
measured, not assumed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .group import AREA_COEFF, GroupElement
from .parallel import chunk_indices, deterministic_map

_BINARY_MAGIC = b"HLSHEET1"


class GridMismatchError(ValueError):
    """Operands are defined on different (time or space) grids."""


@dataclass(frozen=True)
class PathSlice:
    """R^d-valued values at the dyadic nodes x_j = j / 2^K."""

    values: np.ndarray  # (2^K + 1, d)
    grid_level: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        n = 2 ** self.grid_level + 1
        if v.shape[0] != n:
            raise ValueError(
                f"grid level {self.grid_level} needs {n} nodes, got {v.shape[0]}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite values in path slice")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class RoughSlice:
    """Prefix-assembled lift of one spatial slice.

    level1[j], level2[j] are the two levels of A(0, x_j); level1[0] and
    level2[0] are zero (the unit element).
    """

    grid_level: int
    level1: np.ndarray  # (2^K + 1, d)
    level2: np.ndarray  # (2^K + 1, d, d)
    initial_value: np.ndarray  # (d,)

    @property
    def dim(self) -> int:
        return self.level1.shape[1]

    @property
    def n_cells(self) -> int:
        return 2**self.grid_level

    def prefix(self, j: int) -> GroupElement:
        return GroupElement(self.level1[j], self.level2[j])


@dataclass
class RoughSheet:
    """Time-indexed family of RoughSlices sharing one spatial grid.

    level1 has shape (n_times, 2^K + 1, d), level2 adds a trailing (d, d),
    initial_values is the path t -> a(t, 0).
    """

    times: np.ndarray
    grid_level: int
    level1: np.ndarray
    level2: np.ndarray
    initial_values: np.ndarray

    @property
    def dim(self) -> int:
        return self.level1.shape[2]

    @property
    def n_times(self) -> int:
        return self.times.shape[0]

    def slice(self, t_index: int) -> RoughSlice:
        return RoughSlice(
            grid_level=self.grid_level,
            level1=self.level1[t_index],
            level2=self.level2[t_index],
            initial_value=self.initial_values[t_index],
        )


def lift_piecewise_linear(slice_: PathSlice) -> RoughSlice:
    """Natural lift of the piecewise-linear interpolant of the slice.

    Each cell contributes the exact segment lift (Δ, Δ ⊗ Δ / 2); prefixes
    are the running Chen products, so every reconstructed increment equals
    the exact iterated integral of the interpolant.
    """
    values = slice_.values
    deltas = np.diff(values, axis=0)  # (n_cells, d)
    n_cells, d = deltas.shape
    # Prefixes telescope exactly: A^1(0, x_j) = values[j] - values[0].
    level1 = values - values[0]
    # level2[j+1] = level2[j] + level1[j] ⊗ Δ_j + Δ_j ⊗ Δ_j / 2
    contrib = np.einsum("ca,cb->cab", level1[:-1], deltas)
    contrib += 0.5 * np.einsum("ca,cb->cab", deltas, deltas)
    level2 = np.zeros((n_cells + 1, d, d))
    np.cumsum(contrib, axis=0, out=level2[1:])
    return RoughSlice(
        grid_level=slice_.grid_level,
        level1=level1,
        level2=level2,
        initial_value=values[0].copy(),
    )


def increment(rough: RoughSlice, i: int, j: int) -> GroupElement:
    """A(x_i, x_j) = A(0, x_i)^{-1} ⊗ A(0, x_j)."""
    n = rough.n_cells
    if not (0 <= i <= j <= n):
        raise IndexError(f"need 0 <= i <= j <= {n}, got i={i}, j={j}")
    a1 = rough.level1[j] - rough.level1[i]
    a2 = (
        rough.level2[j]
        - rough.level2[i]
        - np.outer(rough.level1[i], a1)
    )
    return GroupElement(a1, a2)


def _pair_arrays(rough: RoughSlice):
    """All-increment arrays over node pairs i < j.

    Returns (sep, A1, A2) with sep the grid separations x_j - x_i,
    A1 of shape (n_pairs, d) and A2 of shape (n_pairs, d, d).
    """
    n = rough.n_cells
    iu, ju = np.triu_indices(n + 1, k=1)
    sep = (ju - iu) / n
    a1 = rough.level1[ju] - rough.level1[iu]
    a2 = (
        rough.level2[ju]
        - rough.level2[iu]
        - np.einsum("pa,pb->pab", rough.level1[iu], a1)
    )
    return sep, a1, a2


def _check_level(level: int):
    if level not in (1, 2):
        raise ValueError(f"level must be 1 or 2, got {level}")


def holder_norm(rough: RoughSlice, level: int, alpha: float) -> float:
    """sup over grid pairs of |A^level(x,y)| / (y-x)^(level*alpha).

    Level 2 is measured with exponent 2*alpha, matching the convention
    that a level-i object carries i times the base regularity.
    """
    _check_level(level)
    sep, a1, a2 = _pair_arrays(rough)
    if level == 1:
        mags = np.linalg.norm(a1, axis=1)
        expo = alpha
    else:
        mags = np.linalg.norm(a2.reshape(a2.shape[0], -1), axis=1)
        expo = 2.0 * alpha
    if mags.size == 0:
        return 0.0
    return float(np.max(mags / sep**expo))


def besov_norm(rough: RoughSlice, level: int, alpha: float, m: float) -> float:
    """Node-pair Riemann sum for the (alpha, m)-Besov norm of one level.

    Level 1 integrates |A^1|^m / (y-x)^(1+m*alpha); level 2 uses the
    (2*alpha, m/2) convention, whose integrand denominator is the same
    (y-x)^(1+m*alpha), and takes the 2/m power.  Requires m*alpha > 1,
    otherwise the integral diverges on the diagonal.
    """
    _check_level(level)
    if m * alpha <= 1.0:
        raise ValueError(f"need m*alpha > 1 for integrability, got {m * alpha:.4g}")
    sep, a1, a2 = _pair_arrays(rough)
    weight = (1.0 / rough.n_cells) ** 2
    if level == 1:
        mags = np.linalg.norm(a1, axis=1)
        power = m
    else:
        mags = np.linalg.norm(a2.reshape(a2.shape[0], -1), axis=1)
        power = m / 2.0
    total = float(np.sum(mags**power / sep ** (1.0 + m * alpha))) * weight
    return total ** (level / m)


@dataclass(frozen=True)
class SpacetimeBesovNorm:
    """The three components of the (beta, alpha, m)-Besov sheet norm."""

    initial_value: float
    level1: float
    level2: float


def _increment_tables(sheet: RoughSheet, iu, ju):
    """Per-time increment tables A^1_t, A^2_t over the node pairs."""
    nt = sheet.n_times
    f1 = sheet.level1[:, ju, :] - sheet.level1[:, iu, :]
    f2 = (
        sheet.level2[:, ju, :, :]
        - sheet.level2[:, iu, :, :]
        - np.einsum("tpa,tpb->tpab", sheet.level1[:, iu, :], f1)
    )
    return f1.reshape(nt, f1.shape[1], -1), f2.reshape(nt, f2.shape[1], -1)


def spacetime_besov_norm(
    sheet: RoughSheet,
    beta: float,
    alpha: float,
    m: float,
    relative_to: RoughSheet | None = None,
    threads: int = 1,
    _block: int = 128,
) -> SpacetimeBesovNorm:
    """Quadruple Riemann sum over (s < t) x (x < y) grid pairs.

    Level-1 weight is |t-s|^-(1+beta*m) |y-x|^-(1+alpha*m); level 2 uses
    the (2*beta, 2*alpha, m/2) convention which leads to the identical
    denominator and the 2/m outer power.  The initial-value component is
    the usual path Besov norm of t -> v_t (plus |v_0|).

    With relative_to given, the norm is taken of the plain difference of
    the two sheets' increments and initial values (the distance whose
    level-wise decay the dyadic convergence study estimates).

    Partial sums over fixed-size blocks of (s, t) pairs are reduced in
    block order, so the result is bit-stable for any thread count.
    """
    if beta <= 1.0 / m:
        raise ValueError(f"need beta > 1/m, got beta={beta:.4g}, 1/m={1.0 / m:.4g}")
    if m * alpha <= 1.0:
        raise ValueError(f"need m*alpha > 1 for integrability, got {m * alpha:.4g}")
    nt = sheet.n_times
    times = sheet.times
    n = 2**sheet.grid_level
    iu, ju = np.triu_indices(n + 1, k=1)
    sep = (ju - iu) / n
    x_weight = (1.0 / n) ** 2 / sep ** (1.0 + m * alpha)

    f1m, f2m = _increment_tables(sheet, iu, ju)
    v = sheet.initial_values
    if relative_to is not None:
        _require_matching(sheet, relative_to)
        g1m, g2m = _increment_tables(relative_to, iu, ju)
        f1m = f1m - g1m
        f2m = f2m - g2m
        v = v - relative_to.initial_values

    si, ti = np.triu_indices(nt, k=1)
    tsep = times[ti] - times[si]
    if times.shape[0] > 1:
        dt = (times[-1] - times[0]) / (nt - 1)
    else:
        dt = 1.0
    t_weight = dt**2 / tsep ** (1.0 + beta * m)

    def block_sums(block: range) -> tuple[float, float]:
        s1 = 0.0
        s2 = 0.0
        idx = np.array(block)
        d1 = f1m[ti[idx]] - f1m[si[idx]]
        d2 = f2m[ti[idx]] - f2m[si[idx]]
        mags1 = np.linalg.norm(d1, axis=2)
        mags2 = np.linalg.norm(d2, axis=2)
        s1 = float((mags1**m @ x_weight) @ t_weight[idx])
        s2 = float((mags2 ** (m / 2.0) @ x_weight) @ t_weight[idx])
        return s1, s2

    blocks = chunk_indices(si.shape[0], _block)
    partials = deterministic_map(block_sums, blocks, threads=threads)
    sum1 = 0.0
    sum2 = 0.0
    for p1, p2 in partials:
        sum1 += p1
        sum2 += p2

    dv = np.linalg.norm(v[ti] - v[si], axis=1)
    v_sum = float(np.sum(dv**m / tsep ** (1.0 + beta * m)) * dt**2)
    v_norm = float(np.linalg.norm(v[0])) + v_sum ** (1.0 / m)

    return SpacetimeBesovNorm(
        initial_value=v_norm,
        level1=sum1 ** (1.0 / m),
        level2=sum2 ** (2.0 / m),
    )


def _require_matching(a: RoughSheet, b: RoughSheet):
    if a.grid_level != b.grid_level or a.dim != b.dim:
        raise GridMismatchError("sheets live on different spatial grids")
    if a.n_times != b.n_times or not np.allclose(a.times, b.times, atol=0.0):
        raise GridMismatchError("sheets live on different time grids")


def dist_infty(a: RoughSheet, b: RoughSheet) -> float:
    """sup over (t, x) of the homogeneous group distance of prefixes,
    plus sup over t of the initial-value gap.

    Exactly homogeneous under slice-wise dilation: scaling both sheets
    by eps scales the distance by eps.
    """
    _require_matching(a, b)
    u1 = b.level1 - a.level1
    u2 = (
        b.level2
        - a.level2
        - np.einsum("tna,tnb->tnab", a.level1, u1)
    )
    anti = 0.5 * (u2 - np.swapaxes(u2, 2, 3))
    n1 = np.linalg.norm(u1, axis=2)
    nf = np.sqrt(np.sum(anti * anti, axis=(2, 3)))
    group_part = float(np.max(np.maximum(n1, AREA_COEFF * np.sqrt(nf))))
    v_part = float(np.max(np.linalg.norm(b.initial_values - a.initial_values, axis=1)))
    return group_part + v_part


def dilate_sheet(lam: float, sheet: RoughSheet) -> RoughSheet:
    """Slice-wise dilation: (v, A^1, A^2) -> (lam*v, lam*A^1, lam^2*A^2)."""
    return RoughSheet(
        times=sheet.times,
        grid_level=sheet.grid_level,
        level1=lam * sheet.level1,
        level2=(lam * lam) * sheet.level2,
        initial_values=lam * sheet.initial_values,
    )


@dataclass(frozen=True)
class EmbeddingRatioReport:
    """Both sides of the two Besov-to-Hoelder embedding inequalities.

    ratio1 compares the (alpha - 1/m)-Hoelder norm of the level-1
    difference against its (alpha, m)-Besov norm; ratio2 compares the
    (2*alpha - 2/m)-Hoelder norm of the level-2 difference against the
    product bound (difference Besov norms times the sum of all four
    one-path Besov norms).  Ratios are NaN when the denominator vanishes.
    """

    holder1: float
    besov1: float
    holder2: float
    product_bound: float

    @property
    def ratio1(self) -> float:
        return self.holder1 / self.besov1 if self.besov1 > 0 else float("nan")

    @property
    def ratio2(self) -> float:
        return (
            self.holder2 / self.product_bound
            if self.product_bound > 0
            else float("nan")
        )


def embedding_ratio(
    a: RoughSlice, b: RoughSlice, alpha: float, m: float
) -> EmbeddingRatioReport:
    """Evaluate both embedding inequalities on one slice pair."""
    if alpha - 1.0 / m <= 1.0 / 3.0:
        raise ValueError(
            f"need alpha - 1/m > 1/3, got {alpha - 1.0 / m:.4g}"
        )
    if a.grid_level != b.grid_level or a.dim != b.dim:
        raise GridMismatchError("slices live on different grids")
    sep, a1, a2 = _pair_arrays(a)
    _, b1, b2 = _pair_arrays(b)
    d1 = a1 - b1
    d2 = (a2 - b2).reshape(a2.shape[0], -1)
    a2f = a2.reshape(a2.shape[0], -1)
    b2f = b2.reshape(b2.shape[0], -1)
    w = (1.0 / a.n_cells) ** 2
    denom = sep ** (1.0 + m * alpha)

    def bes1(v):
        return float(np.sum(np.linalg.norm(v, axis=1) ** m / denom) * w) ** (1.0 / m)

    def bes2(v):
        return float(
            np.sum(np.linalg.norm(v, axis=1) ** (m / 2.0) / denom) * w
        ) ** (2.0 / m)

    holder1 = float(np.max(np.linalg.norm(d1, axis=1) / sep ** (alpha - 1.0 / m)))
    holder2 = float(
        np.max(np.linalg.norm(d2, axis=1) / sep ** (2.0 * alpha - 2.0 / m))
    )
    diff_b = bes1(d1) + bes2(d2)
    paths_b = bes1(a1) + bes2(a2f) + bes1(b1) + bes2(b2f)
    return EmbeddingRatioReport(
        holder1=holder1,
        besov1=bes1(d1),
        holder2=holder2,
        product_bound=diff_b * paths_b,
    )


# ---------------------------------------------------------------------------
# Serialization (cache format shared with the CLI)

def sheet_to_json_dict(sheet: RoughSheet) -> dict:
    return {
        "format": "heatlift-sheet",
        "version": 1,
        "d": sheet.dim,
        "K": sheet.grid_level,
        "times": sheet.times.tolist(),
        "initial_values": sheet.initial_values.tolist(),
        "level1": sheet.level1.tolist(),
        "level2": sheet.level2.tolist(),
    }


def sheet_from_json_dict(doc: dict) -> RoughSheet:
    if doc.get("format") != "heatlift-sheet":
        raise ValueError("not a heatlift sheet record")
    return RoughSheet(
        times=np.asarray(doc["times"], dtype=float),
        grid_level=int(doc["K"]),
        level1=np.asarray(doc["level1"], dtype=float),
        level2=np.asarray(doc["level2"], dtype=float),
        initial_values=np.asarray(doc["initial_values"], dtype=float),
    )


def save_sheet(sheet: RoughSheet, path: str, fmt: str = "binary"):
    """Write a sheet cache; binary is little-endian float64 throughout."""
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(sheet_to_json_dict(sheet), fh)
        return
    if fmt != "binary":
        raise ValueError(f"unknown format {fmt!r}")
    nt = sheet.n_times
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<qqq", sheet.dim, sheet.grid_level, nt))
        for arr in (
            sheet.times,
            sheet.initial_values,
            sheet.level1,
            sheet.level2,
        ):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_sheet(path: str) -> RoughSheet:
    with open(path, "rb") as fh:
        head = fh.read(len(_BINARY_MAGIC))
        if head == _BINARY_MAGIC:
            d, k, nt = struct.unpack("<qqq", fh.read(24))
            n = 2**k + 1

            def read(shape):
                count = int(np.prod(shape))
                return np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)

            times = read((nt,)).astype(float)
            iv = read((nt, d)).astype(float)
            l1 = read((nt, n, d)).astype(float)
            l2 = read((nt, n, d, d)).astype(float)
            return RoughSheet(
                times=times,
                grid_level=k,
                level1=l1,
                level2=l2,
                initial_values=iv,
            )
    with open(path, "r", encoding="utf-8") as fh:
        return sheet_from_json_dict(json.load(fh))
