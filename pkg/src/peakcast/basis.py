"""Spline bases, difference penalties and (functional) tensor-product designs.

Smooth effects are built from cubic B-spline bases with difference penalties
on the coefficients.  A vector-valued covariate observed on the 48-slot
daily grid enters through a summed tensor-product design: the bivariate
surface basis is evaluated at every (value, slot) pair of a day and summed
across slots, so each day contributes a single design row.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .series import SLOTS_PER_DAY


class DomainError(ValueError):
    """Raised when covariate values fall outside the knot range."""


@dataclass(frozen=True)
class SmoothTerm:
    """Declarative description of one smooth model term.

    kind is 'univariate', 'tensor2' or 'functional_tensor'.  For tensor
    kinds, covariates/basis_sizes/knot_ranges hold (margin1, margin2); for
    functional_tensor the second margin is the intra-day slot grid.
    """

    kind: str
    covariates: tuple[str, ...]
    basis_sizes: tuple[int, ...]
    penalty_order: int = 2
    degree: int = 3
    knot_ranges: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in ("univariate", "tensor2", "functional_tensor"):
            raise ValueError(f"unknown smooth kind {self.kind!r}")
        expected = 1 if self.kind == "univariate" else 2
        if len(self.covariates) != expected or len(self.basis_sizes) != expected:
            raise ValueError(
                f"{self.kind} term needs {expected} covariate(s) and basis size(s)"
            )
        for k in self.basis_sizes:
            if k < self.degree + 1:
                raise ValueError(
                    f"basis size {k} too small for degree {self.degree}"
                )
            if self.penalty_order >= k:
                raise ValueError(
                    f"penalty order {self.penalty_order} must be below basis size {k}"
                )
        if self.knot_ranges is not None:
            for lo, hi in self.knot_ranges:
                if not lo < hi:
                    raise ValueError(f"empty knot range ({lo}, {hi})")

    def label(self) -> str:
        return f"{self.kind}({','.join(self.covariates)})"

    def with_ranges(self, ranges) -> "SmoothTerm":
        return replace(self, knot_ranges=tuple((float(a), float(b)) for a, b in ranges))


def data_range(x: np.ndarray, margin: float = 0.05) -> tuple[float, float]:
    """Data range expanded symmetrically by a relative margin."""
    lo, hi = float(np.min(x)), float(np.max(x))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    pad = margin * (hi - lo)
    return lo - pad, hi + pad


def bspline_basis(x: np.ndarray, n_basis: int, degree: int = 3,
                  rng: tuple[float, float] = (0.0, 1.0),
                  clamp: bool = True) -> np.ndarray:
    """Evaluate an open uniform B-spline basis at x.

    Returns an array of shape (len(x), n_basis).  Inside [rng[0], rng[1]]
    the basis is a partition of unity.  Out-of-range values are clipped to
    the boundary when clamp is set, otherwise raise DomainError.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = float(rng[0]), float(rng[1])
    if n_basis < degree + 1:
        raise ValueError(f"need at least degree+1={degree + 1} basis functions")
    if not lo < hi:
        raise ValueError(f"empty basis range ({lo}, {hi})")
    if clamp:
        x = np.clip(x, lo, hi)
    elif ((x < lo) | (x > hi)).any():
        bad = x[(x < lo) | (x > hi)][0]
        raise DomainError(f"value {bad} outside basis range [{lo}, {hi}]")

    breaks = np.linspace(lo, hi, n_basis - degree + 1)
    knots = np.concatenate([np.full(degree, lo), breaks, np.full(degree, hi)])

    # Cox-de Boor recursion, vectorised over x; the last interval is closed
    # so the basis interpolates at the right boundary.
    n_knots = knots.size
    basis = np.zeros((x.size, n_knots - 1))
    for j in range(n_knots - 1):
        if knots[j] < knots[j + 1]:
            basis[:, j] = (knots[j] <= x) & (x < knots[j + 1])
    basis[x == hi, np.searchsorted(knots, hi) - 1] = 1.0

    for d in range(1, degree + 1):
        prev = basis
        basis = np.zeros((x.size, n_knots - 1 - d))
        for j in range(n_knots - 1 - d):
            denom1 = knots[j + d] - knots[j]
            denom2 = knots[j + d + 1] - knots[j + 1]
            if denom1 > 0:
                basis[:, j] += (x - knots[j]) / denom1 * prev[:, j]
            if denom2 > 0:
                basis[:, j] += (knots[j + d + 1] - x) / denom2 * prev[:, j + 1]
    return basis[:, :n_basis]


def difference_penalty(n_basis: int, order: int = 2) -> np.ndarray:
    """Penalty matrix D'D for the order-th coefficient differences.

    Positive semidefinite with null-space dimension equal to order.
    """
    if order >= n_basis:
        raise ValueError(f"penalty order {order} must be below basis size {n_basis}")
    if order == 0:
        return np.eye(n_basis)
    d = np.diff(np.eye(n_basis), n=order, axis=0)
    return d.T @ d


@dataclass(frozen=True)
class DesignBlock:
    """Realised columns of one smooth term plus its coefficient penalties.

    ``transform`` is the constraint-absorbing reparameterisation applied to
    the raw basis columns (None before centering); it must be reused when
    building prediction rows so train and test columns agree.
    ``margin_means`` holds the mean of each marginal basis over its
    training evaluations for tensor terms, feeding the per-margin
    sum-to-zero constraints.
    """

    term: SmoothTerm
    columns: np.ndarray
    penalties: tuple[np.ndarray, ...]
    transform: np.ndarray | None = None
    margin_means: tuple[np.ndarray, ...] | None = None
    clamp_count: int = field(default=0, compare=False)

    @property
    def n_cols(self) -> int:
        return self.columns.shape[1]


def univariate_design(x: np.ndarray, term: SmoothTerm) -> DesignBlock:
    rng = term.knot_ranges[0]
    clamped = int(np.count_nonzero((x < rng[0]) | (x > rng[1])))
    cols = bspline_basis(x, term.basis_sizes[0], term.degree, rng)
    pen = difference_penalty(term.basis_sizes[0], term.penalty_order)
    return DesignBlock(term, cols, (pen,), clamp_count=clamped)


def tensor2_design(x1: np.ndarray, x2: np.ndarray, term: SmoothTerm) -> DesignBlock:
    """Row-wise product basis a_k(x1) * b_l(x2), one row per observation.

    Columns are ordered with the second margin fastest.  Two penalties, one
    per margin: S1 (x) I and I (x) S2.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape:
        raise ValueError(f"margin lengths differ: {x1.shape} vs {x2.shape}")
    k1, k2 = term.basis_sizes
    b1 = bspline_basis(x1, k1, term.degree, term.knot_ranges[0])
    b2 = bspline_basis(x2, k2, term.degree, term.knot_ranges[1])
    cols = (b1[:, :, None] * b2[:, None, :]).reshape(x1.size, k1 * k2)
    clamped = int(np.count_nonzero((x1 < term.knot_ranges[0][0]) | (x1 > term.knot_ranges[0][1])))
    clamped += int(np.count_nonzero((x2 < term.knot_ranges[1][0]) | (x2 > term.knot_ranges[1][1])))
    return DesignBlock(
        term, cols, _margin_penalties(term),
        margin_means=(b1.mean(axis=0), b2.mean(axis=0)),
        clamp_count=clamped,
    )


def functional_tensor_design(mat_x: np.ndarray, slot_grid: np.ndarray,
                             term: SmoothTerm) -> DesignBlock:
    """Summed tensor-product design for a per-day 48-vector covariate.

    Row i, column (k, l) holds sum_r a_k(mat_x[i, r]) * b_l(slot_grid[r]),
    so the whole intra-day trajectory of day i collapses into one row.
    Penalties are the same per-margin pair as for tensor2_design.
    """
    mat_x = np.asarray(mat_x, dtype=float)
    if mat_x.ndim != 2 or mat_x.shape[1] != SLOTS_PER_DAY:
        raise ValueError(
            f"matrix covariate must have {SLOTS_PER_DAY} columns, got {mat_x.shape}"
        )
    slot_grid = np.asarray(slot_grid, dtype=float)
    if slot_grid.shape != (SLOTS_PER_DAY,):
        raise ValueError("slot grid length must match the matrix columns")
    n, f = mat_x.shape
    k1, k2 = term.basis_sizes
    a = bspline_basis(mat_x.ravel(), k1, term.degree, term.knot_ranges[0])
    b = bspline_basis(slot_grid, k2, term.degree, term.knot_ranges[1])
    cols = np.einsum("nrk,rl->nkl", a.reshape(n, f, k1), b).reshape(n, k1 * k2)
    clamped = int(np.count_nonzero(
        (mat_x < term.knot_ranges[0][0]) | (mat_x > term.knot_ranges[0][1])
    ))
    return DesignBlock(
        term, cols, _margin_penalties(term),
        margin_means=(a.mean(axis=0), b.mean(axis=0)),
        clamp_count=clamped,
    )


def _margin_penalties(term: SmoothTerm) -> tuple[np.ndarray, np.ndarray]:
    k1, k2 = term.basis_sizes
    s1 = difference_penalty(k1, term.penalty_order)
    s2 = difference_penalty(k2, term.penalty_order)
    return np.kron(s1, np.eye(k2)), np.kron(np.eye(k1), s2)


def householder_null(v: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the null space of v', shape (n, n-1)."""
    c = v / np.linalg.norm(v)
    w = c.copy()
    w[0] += np.sign(c[0]) if c[0] != 0 else 1.0
    house = np.eye(v.size) - 2.0 * np.outer(w, w) / (w @ w)
    return house[:, 1:]


def apply_centering(block: DesignBlock) -> DesignBlock:
    """Absorb identifiability constraints into the block.

    Tensor terms first get a sum-to-zero constraint on each margin, which
    strips the marginal main effects the term would otherwise replicate
    (they are either confounded with the intercept or belong to separate
    terms).  Every block then has the column-mean direction removed so no
    column competes with the intercept.  Penalties are conjugated by the
    composite transform.  Already-centred blocks pass through unchanged;
    a pure constant block collapses to zero columns.
    """
    if block.transform is not None:
        return block
    cols = block.columns
    pens = list(block.penalties)
    total = np.eye(block.n_cols)

    if block.margin_means is not None:
        z_margins = []
        for m in block.margin_means:
            if np.abs(m).max() <= 1e-12:
                z_margins.append(np.eye(m.size))
            else:
                z_margins.append(householder_null(m))
        z = np.kron(z_margins[0], z_margins[1])
        cols = cols @ z
        pens = [z.T @ s @ z for s in pens]
        total = total @ z

    if cols.shape[1]:
        means = cols.mean(axis=0)
        scale = max(1.0, float(np.abs(cols).mean()))
        if np.abs(means).max() > 1e-12 * scale:
            z0 = householder_null(means)
            cols = cols @ z0
            pens = [z0.T @ s @ z0 for s in pens]
            total = total @ z0

    return replace(
        block, columns=cols, penalties=tuple(pens), transform=total,
    )


def build_block(term: SmoothTerm, arrays: dict[str, np.ndarray],
                transform: np.ndarray | None = None) -> DesignBlock:
    """Realise a term against named covariate arrays.

    With ``transform`` given (prediction time), the stored reparameterisation
    is applied instead of recomputing the centering from the new rows.
    """
    if term.knot_ranges is None:
        raise ValueError(f"term {term.label()} has no knot ranges; fit them first")
    if term.kind == "univariate":
        raw = univariate_design(arrays[term.covariates[0]], term)
    elif term.kind == "tensor2":
        raw = tensor2_design(arrays[term.covariates[0]], arrays[term.covariates[1]], term)
    else:
        raw = functional_tensor_design(
            arrays[term.covariates[0]], arrays[term.covariates[1]], term
        )
    if transform is None:
        return apply_centering(raw)
    return replace(
        raw,
        columns=raw.columns @ transform,
        penalties=tuple(transform.T @ s @ transform for s in raw.penalties),
        transform=transform,
    )


def fit_ranges(term: SmoothTerm, arrays: dict[str, np.ndarray],
               margin: float = 0.05) -> SmoothTerm:
    """Fill in knot ranges from training covariate values."""
    ranges = []
    for name in term.covariates:
        values = np.asarray(arrays[name], dtype=float)
        ranges.append(data_range(values.ravel(), margin))
    return term.with_ranges(ranges)
