"""Step-2 truncated tensor group over R^d.

Elements are triples (1, g1, g2) with g1 a vector and g2 a d x d matrix,
multiplied by (g ⊗ h)_1 = g1 + h1, (g ⊗ h)_2 = g2 + h2 + g1 ⊗ h1.
This is the pointwise value of a rough path; products of increments
compose along intervals, which is what makes prefix storage exact.

A "geometric" element satisfies sym(g2) = g1 ⊗ g1 / 2 (the lift of an
actual bounded-variation path always does).  The homogeneous norm used
throughout is

    ||g|| = max(|g1|_2, 2^(3/4) * |antisym(g2)|_F ** 0.5)

which scales linearly under dilation, is invariant under inversion, is
equivalent to |g1| + |g2|^(1/2) on geometric elements, and is
sub-additive under ⊗ (so the induced left-invariant distance satisfies
the triangle inequality): with A* = antisym parts,

    |A_(gh)|_F <= |A_g|_F + |A_h|_F + |g1||h1|/sqrt(2),

and the coefficient c = 2^(3/4) is the largest with c^2/sqrt(2) <= 2,
which is exactly what closes the square in (||g|| + ||h||)^2.  Additive
combinations |g1| + c |antisym|^(1/2) fail sub-additivity for every c
(take orthogonal pure level-1 elements and let the angle shrink), which
is why the max form is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionMismatchError(ValueError):
    """Operands live over different R^d."""


class NonGeometricError(ValueError):
    """Symmetric part of level2 deviates from g1 ⊗ g1 / 2 beyond tolerance."""

    def __init__(self, defect: float, tol: float):
        self.defect = float(defect)
        self.tol = float(tol)
        super().__init__(
            f"element is not geometric: max symmetric-part defect "
            f"{self.defect:.3e} exceeds tolerance {self.tol:.3e}"
        )


# Lifts are assembled from exact segment formulas, so only round-off
# accumulates; 1e-9 absolute is far above that but still strict.
GEOMETRIC_TOL = 1e-9


@dataclass(frozen=True)
class GroupElement:
    """One element (1, level1, level2) of the step-2 group over R^d."""

    level1: np.ndarray
    level2: np.ndarray

    def __post_init__(self):
        l1 = np.asarray(self.level1, dtype=float)
        l2 = np.asarray(self.level2, dtype=float)
        if l1.ndim != 1:
            raise ValueError(f"level1 must be a vector, got shape {l1.shape}")
        d = l1.shape[0]
        if l2.shape != (d, d):
            raise ValueError(f"level2 must be {d}x{d}, got shape {l2.shape}")
        l1.setflags(write=False)
        l2.setflags(write=False)
        object.__setattr__(self, "level1", l1)
        object.__setattr__(self, "level2", l2)

    @property
    def dim(self) -> int:
        return self.level1.shape[0]

    def symmetric_defect(self) -> float:
        """Max entrywise |sym(level2) - level1 ⊗ level1 / 2|."""
        sym = 0.5 * (self.level2 + self.level2.T)
        return float(np.max(np.abs(sym - 0.5 * np.outer(self.level1, self.level1))))

    def is_geometric(self, tol: float = GEOMETRIC_TOL) -> bool:
        return self.symmetric_defect() <= tol


def unit(dim: int) -> GroupElement:
    return GroupElement(np.zeros(dim), np.zeros((dim, dim)))


def multiply(g: GroupElement, h: GroupElement) -> GroupElement:
    if g.dim != h.dim:
        raise DimensionMismatchError(f"dims {g.dim} and {h.dim} differ")
    return GroupElement(
        g.level1 + h.level1,
        g.level2 + h.level2 + np.outer(g.level1, h.level1),
    )


def inverse(g: GroupElement) -> GroupElement:
    return GroupElement(-g.level1, np.outer(g.level1, g.level1) - g.level2)


def dilate(lam: float, g: GroupElement) -> GroupElement:
    """Scaling (1, g1, g2) -> (1, lam*g1, lam^2*g2); lifts of lam*path."""
    return GroupElement(lam * g.level1, lam * lam * g.level2)


# Largest coefficient keeping the norm sub-additive under ⊗.
AREA_COEFF = 2.0 ** 0.75


def hom_norm(g: GroupElement, tol: float = GEOMETRIC_TOL) -> float:
    """Homogeneous symmetric norm max(|g1|_2, 2^(3/4)*|antisym(g2)|_F^(1/2)).

    Only meaningful on geometric elements; raises NonGeometricError
    otherwise, reporting the symmetric-part violation.
    """
    defect = g.symmetric_defect()
    if defect > tol:
        raise NonGeometricError(defect, tol)
    anti = 0.5 * (g.level2 - g.level2.T)
    return float(
        max(
            np.linalg.norm(g.level1),
            AREA_COEFF * np.sqrt(np.linalg.norm(anti)),
        )
    )


def group_dist(g: GroupElement, h: GroupElement, tol: float = GEOMETRIC_TOL) -> float:
    """Left-invariant distance ||g^{-1} ⊗ h|| between geometric elements.

    The product is expanded in difference form (h2 - g2 - g1 ⊗ (h1 - g1)),
    which is algebraically identical but cancels exactly when g = h, so
    the square root in the norm cannot amplify round-off into a spurious
    positive self-distance.
    """
    if g.dim != h.dim:
        raise DimensionMismatchError(f"dims {g.dim} and {h.dim} differ")
    for e in (g, h):
        defect = e.symmetric_defect()
        if defect > tol:
            raise NonGeometricError(defect, tol)
    u1 = h.level1 - g.level1
    u2 = h.level2 - g.level2 - np.outer(g.level1, u1)
    return hom_norm(GroupElement(u1, u2), tol=np.inf)


def random_geometric(
    rng: np.random.Generator, dim: int, scale: float = 1.0
) -> GroupElement:
    """Random geometric element: free level1 plus free antisymmetric area."""
    l1 = scale * rng.standard_normal(dim)
    a = scale * scale * rng.standard_normal((dim, dim))
    anti = 0.5 * (a - a.T)
    return GroupElement(l1, 0.5 * np.outer(l1, l1) + anti)
