"""Exact geometry of n-particle rectangles in the sup-norm.

An n-particle configuration is a point of R^{nd}, stored as an (n, d)
array whose rows are particle positions.  An n-particle rectangle is a
product of open one-particle boxes, one per particle; when all side
lengths agree it is a box.  Everything here is axis-aligned and measured
in the sup-norm: ``|x| = max_j |x_j|`` on R^d and
``|a| = max_i |a_i|`` on configurations.

Membership uses open intervals; the cover-union identity is a statement
about closures.  All functions are pure and operate on immutable values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

__all__ = [
    "NRectangle",
    "Separation",
    "SeparationClass",
    "InteractionClass",
    "Cover",
    "as_config",
    "sup_distance",
    "diam",
    "hausdorff_distance",
    "separation_class",
    "interaction_class",
    "is_l_distant",
    "fi_separation_criterion",
    "suitable_cover",
    "cover_cell_for",
    "verify_cover_laws",
]

# Relative slack for float comparisons of interval endpoints.
_REL_TOL = 1e-9


def as_config(a, d: int | None = None) -> np.ndarray:
    """Coerce ``a`` to an (n, d) float array of particle positions.

    Scalars become a single particle in d=1; flat vectors are split into
    n rows of length ``d`` when ``d`` is given, else treated as n
    one-dimensional particles.
    """
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if d is None or d == 1:
            arr = arr.reshape(-1, 1)
        else:
            if arr.size % d != 0:
                raise ValueError(f"flat configuration of size {arr.size} does not split into d={d}")
            arr = arr.reshape(-1, d)
    elif arr.ndim != 2:
        raise ValueError(f"configuration must be at most 2-dimensional, got shape {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise ValueError(f"configuration has d={arr.shape[1]}, expected d={d}")
    return arr


def sup_distance(a, b) -> float:
    """Sup-norm distance between two configurations of equal shape."""
    a = as_config(a)
    b = as_config(b)
    if a.shape != b.shape:
        raise ValueError(f"configuration shapes differ: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def diam(a) -> float:
    """Largest pairwise sup-norm distance among the particle positions."""
    a = as_config(a)
    if a.shape[0] == 1:
        return 0.0
    diff = np.abs(a[:, None, :] - a[None, :, :]).max(axis=2)
    return float(diff.max())


def _cross_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix D[i, j] = |a_i - b_j| of pairwise sup-norm distances."""
    return np.abs(a[:, None, :] - b[None, :, :]).max(axis=2)


def hausdorff_distance(a, b) -> float:
    """Hausdorff distance between the particle-position sets of two configurations.

    Uses the symmetric max-min formula over the finite sets
    ``S_a = {a_1, ..., a_n}`` and ``S_b`` with the sup-norm on R^d.  The
    particle counts may differ; the ambient dimension must match.
    """
    a = as_config(a)
    b = as_config(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"ambient dimensions differ: d={a.shape[1]} vs d={b.shape[1]}")
    dmat = _cross_distances(a, b)
    return float(max(dmat.min(axis=1).max(), dmat.min(axis=0).max()))


@dataclass(frozen=True)
class NRectangle:
    """An n-particle rectangle: the product of open per-particle boxes.

    ``center`` holds one row per particle; ``sides`` the per-particle
    side lengths.  A box is the special case of equal sides.
    """

    center: np.ndarray
    sides: np.ndarray

    def __post_init__(self):
        center = as_config(self.center)
        sides = np.atleast_1d(np.asarray(self.sides, dtype=float))
        if sides.ndim != 1 or sides.shape[0] != center.shape[0]:
            raise ValueError("need one side length per particle")
        if np.any(sides <= 0):
            raise ValueError("side lengths must be strictly positive")
        center.setflags(write=False)
        sides.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "sides", sides)

    @classmethod
    def box(cls, center, side: float) -> "NRectangle":
        center = as_config(center)
        return cls(center, np.full(center.shape[0], float(side)))

    @property
    def n(self) -> int:
        return self.center.shape[0]

    @property
    def d(self) -> int:
        return self.center.shape[1]

    @property
    def is_box(self) -> bool:
        return bool(np.all(self.sides == self.sides[0]))

    @property
    def side(self) -> float:
        if not self.is_box:
            raise ValueError("rectangle has unequal sides; no single side length")
        return float(self.sides[0])

    @property
    def min_side(self) -> float:
        return float(self.sides.min())

    def particle_box(self, i: int) -> tuple[np.ndarray, float]:
        """Center and side of particle i's one-particle box."""
        return self.center[i], float(self.sides[i])

    def contains(self, x) -> bool:
        """Open membership of a configuration in the rectangle."""
        x = as_config(x, self.d)
        if x.shape[0] != self.n:
            raise ValueError(f"configuration has n={x.shape[0]}, expected n={self.n}")
        half = self.sides[:, None] / 2.0
        return bool(np.all(np.abs(x - self.center) < half))

    def translate(self, vec) -> "NRectangle":
        """Shift every particle center by the same vector of R^d."""
        vec = np.asarray(vec, dtype=float).reshape(1, self.d)
        return NRectangle(self.center + vec, self.sides.copy())

    def sub_rectangle(self, particles: Sequence[int]) -> "NRectangle":
        """Restriction to a subset of the particles, in the given order."""
        idx = list(particles)
        if not idx:
            raise ValueError("particle subset must be nonempty")
        return NRectangle(self.center[idx], self.sides[idx])

    def key(self) -> tuple:
        return (
            tuple(map(float, self.center.ravel())),
            tuple(map(float, self.sides)),
            self.n,
            self.d,
        )


def _boxes_intersect(c1: np.ndarray, s1: float, c2: np.ndarray, s2: float) -> bool:
    """Whether two open one-particle boxes of R^d intersect."""
    return bool(np.all(np.abs(c1 - c2) < (s1 + s2) / 2.0))


class Separation(str, Enum):
    FULLY_SEPARATED = "fully_separated"
    PARTIALLY_SEPARATED = "partially_separated"
    ENTANGLED = "entangled"


@dataclass(frozen=True)
class SeparationClass:
    """Outcome of the separation test for a pair of rectangles.

    For a partial (or full) separation the witness records one particle
    box that misses the full projection of the other rectangle:
    ``witness_rect`` is 1 or 2 and ``witness_particle`` the 0-based
    particle index.
    """

    kind: Separation
    witness_rect: int | None = None
    witness_particle: int | None = None

    @property
    def fully_separated(self) -> bool:
        return self.kind is Separation.FULLY_SEPARATED

    @property
    def partially_separated(self) -> bool:
        # Full separation is the stronger property and implies this one.
        return self.kind in (Separation.FULLY_SEPARATED, Separation.PARTIALLY_SEPARATED)


def separation_class(r1: NRectangle, r2: NRectangle) -> SeparationClass:
    """Classify a pair of n-particle rectangles as fully/partially separated or entangled.

    The full projection of a rectangle is the union of its per-particle
    open boxes in R^d.  Full separation means the two projections are
    disjoint; partial separation means some particle box of one
    rectangle misses the whole projection of the other.
    """
    if r1.d != r2.d or r1.n != r2.n:
        raise ValueError("rectangles must share particle count and dimension")
    hits = np.empty((r1.n, r2.n), dtype=bool)
    for i in range(r1.n):
        c1, s1 = r1.particle_box(i)
        for j in range(r2.n):
            c2, s2 = r2.particle_box(j)
            hits[i, j] = _boxes_intersect(c1, s1, c2, s2)
    if not hits.any():
        return SeparationClass(Separation.FULLY_SEPARATED)
    for i in range(r1.n):
        if not hits[i].any():
            return SeparationClass(Separation.PARTIALLY_SEPARATED, 1, i)
    for j in range(r2.n):
        if not hits[:, j].any():
            return SeparationClass(Separation.PARTIALLY_SEPARATED, 2, j)
    return SeparationClass(Separation.ENTANGLED)


@dataclass(frozen=True)
class InteractionClass:
    """Partially interactive split of a box, or fully interactive.

    ``split`` is the 0-based tuple of particle indices forming the group
    J when the box is partially interactive (particles of J stay farther
    than the interaction range from the rest everywhere on the box),
    else None.
    """

    partially_interactive: bool
    split: tuple[int, ...] | None = None
    r0: float = 0.0

    @property
    def fully_interactive(self) -> bool:
        return not self.partially_interactive

    def complement(self, n: int) -> tuple[int, ...]:
        if self.split is None:
            raise ValueError("fully interactive box has no split")
        return tuple(i for i in range(n) if i not in self.split)


def _particle_gap(rect: NRectangle, i: int, j: int) -> float:
    """Infimum of |x_i - x_j| over the rectangle (attained on the closure)."""
    delta = np.abs(rect.center[i] - rect.center[j])
    width = (rect.sides[i] + rect.sides[j]) / 2.0
    return float(np.max(np.maximum(0.0, delta - width)))


def interaction_class(box: NRectangle, r0: float) -> InteractionClass:
    """Split an n-particle box into interacting groups, if possible.

    Returns the first nonempty proper subset J (ordered by size, then
    lexicographically) whose particles keep sup-norm distance at least
    ``r0`` from the complementary group everywhere on the open box; the
    box is fully interactive when no such subset exists.  For n = 1 the
    (vacuous) convention is fully interactive.
    """
    if not box.is_box:
        raise ValueError("interaction classification is defined for boxes only")
    if r0 <= 0:
        raise ValueError("interaction range must be positive")
    n = box.n
    if n == 1:
        return InteractionClass(False, None, r0)
    gaps = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            gaps[i, j] = gaps[j, i] = _particle_gap(box, i, j)
    for size in range(1, n):
        for split in itertools.combinations(range(n), size):
            rest = [j for j in range(n) if j not in split]
            if min(gaps[i, j] for i in split for j in rest) >= r0:
                return InteractionClass(True, split, r0)
    return InteractionClass(False, None, r0)


def is_l_distant(a, b, L: float) -> bool:
    """Whether two same-side boxes centered at ``a`` and ``b`` are L-distant.

    The criterion is ``max{dist(b, S_a^n), dist(a, S_b^n)} >= 3nL``
    where ``S_a^n`` is the n-fold Cartesian power of the particle set of
    ``a``; that maximum coincides with the Hausdorff distance between
    the particle sets, which is how it is evaluated here.
    """
    a = as_config(a)
    b = as_config(b)
    if a.shape != b.shape:
        raise ValueError("configurations must share particle count and dimension")
    n = a.shape[0]
    return hausdorff_distance(a, b) >= 3.0 * n * L


def fi_separation_criterion(a, b, L: float) -> bool:
    """Sufficient condition for two fully interactive boxes to be fully separated.

    True when ``max_{x in S_a, y in S_b} |x - y| >= 3nL``.  For fully
    interactive boxes of side L (L large against the interaction range)
    this forces disjoint projections; callers cross-validate with
    :func:`separation_class`.
    """
    a = as_config(a)
    b = as_config(b)
    if a.shape != b.shape:
        raise ValueError("configurations must share particle count and dimension")
    n = a.shape[0]
    return float(_cross_distances(a, b).max()) >= 3.0 * n * L


@dataclass(frozen=True)
class Cover:
    """A suitable cell covering of an n-particle box.

    The grid of cell centers is ``x + alpha*ell*Z^{nd}`` intersected
    with the open parent box, where ``alpha = (L - ell) / (2*ell*pitch_index)``
    lies in [3/5, 4/5].  Offsets are the same along every one of the nd
    axes; ``offsets[k]`` multiplies ``alpha*ell``.
    """

    parent: NRectangle
    cell_side: float
    alpha: float
    pitch_index: int
    offsets: np.ndarray  # integer multiples of alpha*ell along each axis
    k_constants: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.offsets.setflags(write=False)

    @property
    def per_axis(self) -> int:
        return len(self.offsets)

    @property
    def cell_count(self) -> int:
        return self.per_axis ** (self.parent.n * self.parent.d)

    @property
    def pitch(self) -> float:
        return self.alpha * self.cell_side

    def axis_positions(self, axis_center: float) -> np.ndarray:
        return axis_center + self.pitch * self.offsets

    def centers(self) -> np.ndarray:
        """All cell centers as an array of shape (count, n, d)."""
        n, d = self.parent.n, self.parent.d
        flat_center = self.parent.center.ravel()
        axes = [self.axis_positions(c) for c in flat_center]
        if self.cell_count > 500_000:
            raise ValueError(f"cover would materialize {self.cell_count} cells")
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return pts.reshape(-1, n, d)

    def cell(self, center) -> NRectangle:
        return NRectangle.box(as_config(center, self.parent.d), self.cell_side)


def _alpha_for(L: float, ell: float) -> tuple[float, int]:
    """Smallest pitch index whose alpha lands in [3/5, 4/5]."""
    lo = 5.0 * (L - ell) / (8.0 * ell)  # alpha <= 4/5
    hi = 5.0 * (L - ell) / (6.0 * ell)  # alpha >= 3/5
    m = max(1, math.ceil(lo - _REL_TOL))
    if m > hi + _REL_TOL:
        raise ValueError(f"no admissible pitch for L={L}, ell={ell}")
    return (L - ell) / (2.0 * ell * m), m


def _k_constants(alpha: float, n_particles: int, d: int, count: int) -> tuple[int, ...]:
    """Enclosure constants k_1 <= k_2 <= ... for grid-aligned super-cells.

    k_1 is the smallest integer with 2*k_1*alpha + 1 > 3n.  For m >= 2,
    k_m encloses any connected union of m super-cells of side
    (2*k_1*alpha + 1)*ell in a single grid-centered cell, in the worst
    case of a length-m chain plus grid-alignment slack alpha*ell.
    """
    if count <= 0:
        return ()
    k1 = max(1, math.ceil((3.0 * n_particles - 1.0) / (2.0 * alpha) + _REL_TOL))
    while 2 * k1 * alpha + 1 <= 3.0 * n_particles:
        k1 += 1
    side1 = 2 * k1 * alpha + 1
    ks = [k1]
    for m in range(2, count + 1):
        need = m * side1 + alpha
        km = max(ks[-1], math.ceil((need - 1.0) / (2.0 * alpha) - _REL_TOL))
        while 2 * km * alpha + 1 < need - _REL_TOL:
            km += 1
        ks.append(km)
    return tuple(ks)


def suitable_cover(box: NRectangle, ell: float, k_count: int | None = None) -> Cover:
    """Build the suitable ell-covering of an n-particle box.

    Requires ``ell <= L/6`` so that an admissible pitch exists.  Among
    the admissible pitches the one with the smallest index (largest
    alpha) is chosen.  ``k_count`` controls how many enclosure constants
    are precomputed (defaults to n^n).
    """
    if not box.is_box:
        raise ValueError("suitable covers are defined for boxes only")
    if ell <= 0:
        raise ValueError("cell side must be positive")
    L = box.side
    if ell > L / 6.0 + _REL_TOL * L:
        raise ValueError(f"cell side ell={ell} exceeds L/6={L / 6.0}")
    alpha, m = _alpha_for(L, ell)
    offsets = np.arange(-m, m + 1, dtype=int)
    if k_count is None:
        k_count = box.n**box.n
    ks = _k_constants(alpha, box.n, box.d, k_count)
    return Cover(box, float(ell), alpha, m, offsets, ks)


def _axis_cell_for(
    cover: Cover,
    axis_center: float,
    y_ax: float,
    parent_lo: float | None,
    parent_hi: float | None,
) -> float:
    """Smallest admissible grid coordinate on one axis, or raise."""
    ell = cover.cell_side
    pitch = cover.pitch
    lo_y, hi_y = y_ax - ell / 10.0, y_ax + ell / 10.0
    if parent_lo is not None:
        lo_y = max(lo_y, parent_lo)
        hi_y = min(hi_y, parent_hi)
    tol = _REL_TOL * max(1.0, abs(y_ax), ell)
    if parent_lo is not None:
        candidates = cover.axis_positions(axis_center)
    else:
        base = math.floor((y_ax - axis_center) / pitch)
        candidates = axis_center + pitch * np.arange(base - 2, base + 3)
    for r in candidates:
        if r - ell / 2.0 <= lo_y + tol and hi_y <= r + ell / 2.0 + tol:
            return float(r)
    raise RuntimeError("no covering cell found; cover invariants violated")


def cover_cell_for(cover: Cover, y, restrict_to_parent: bool = True) -> np.ndarray:
    """Grid center r whose cell swallows the ell/5-box around ``y``.

    With ``restrict_to_parent`` the candidate centers come from the
    cover grid and the ell/5-box is first clipped to the parent; without
    it the full lattice ``x + alpha*ell*Z^{nd}`` is searched and the
    unclipped box must fit (useful for lattice points outside the
    parent).  Ties break to the lexicographically smallest center.
    """
    parent = cover.parent
    y = as_config(y, parent.d)
    if y.shape[0] != parent.n:
        raise ValueError(f"point has n={y.shape[0]}, expected n={parent.n}")
    flat_y = y.ravel()
    flat_c = parent.center.ravel()
    flat_sides = np.repeat(parent.sides, parent.d)
    out = np.empty_like(flat_y)
    for ax in range(flat_y.size):
        if restrict_to_parent:
            lo = flat_c[ax] - flat_sides[ax] / 2.0
            hi = flat_c[ax] + flat_sides[ax] / 2.0
        else:
            lo = hi = None
        out[ax] = _axis_cell_for(cover, flat_c[ax], flat_y[ax], lo, hi)
    return out.reshape(parent.n, parent.d)


def verify_cover_laws(cover: Cover, probe_points: int = 32, rng=None) -> dict:
    """Numerically check the defining laws of a suitable cover.

    Returns a dict of named booleans: exact closed union, guaranteed
    free band between distinct cells, the cardinality window, and the
    covering of small boxes around probe points inside the parent
    (clipped) and around lattice points (unclipped).
    """
    parent = cover.parent
    L, ell = parent.side, cover.cell_side
    nd = parent.n * parent.d
    pos = cover.axis_positions(0.0)
    tol = _REL_TOL * max(1.0, L)

    edges_exact = (
        abs((pos[0] - ell / 2.0) - (-L / 2.0)) <= tol
        and abs((pos[-1] + ell / 2.0) - (L / 2.0)) <= tol
    )
    gaps_ok = bool(np.all(np.diff(pos) <= ell + tol))
    nesting = edges_exact and gaps_ok

    # Distinct grid points differ on some axis by a multiple of the pitch,
    # so the ell/5 box around one avoids the ell box around the other iff
    # pitch >= 3*ell/5; verified here on actual axis positions.
    pairwise = np.abs(pos[:, None] - pos[None, :])
    np.fill_diagonal(pairwise, np.inf)
    free_band = bool(pairwise.min() >= 0.6 * ell - tol)

    count = cover.cell_count
    number = ((L / ell) ** nd <= count + tol) and (count <= (2.0 * L / ell) ** nd + tol)
    expected = ((L - ell) / (cover.alpha * ell) + 1.0) ** nd
    number = number and abs(count - expected) < 0.5

    rng = np.random.default_rng(0) if rng is None else rng
    boundary_cover = True
    for _ in range(probe_points):
        y = (rng.random(nd) - 0.5) * L * 0.999
        y = y.reshape(parent.n, parent.d) + parent.center
        r = cover_cell_for(cover, y, restrict_to_parent=True)
        lo = np.maximum(y - ell / 10.0, parent.center - L / 2.0)
        hi = np.minimum(y + ell / 10.0, parent.center + L / 2.0)
        ok = np.all(r - ell / 2.0 <= lo + tol) and np.all(hi <= r + ell / 2.0 + tol)
        boundary_cover = boundary_cover and bool(ok)

    lattice_cover = True
    for _ in range(probe_points):
        y = rng.integers(-int(2 * L), int(2 * L) + 1, size=nd).astype(float)
        y = y.reshape(parent.n, parent.d)
        r = cover_cell_for(cover, y, restrict_to_parent=False)
        ok = np.all(np.abs(y - r) <= 0.4 * ell + tol)
        lattice_cover = lattice_cover and bool(ok)

    return {
        "nesting": nesting,
        "free_band": free_band,
        "number": number,
        "boundary_cover": boundary_cover,
        "lattice_cover": lattice_cover,
    }
