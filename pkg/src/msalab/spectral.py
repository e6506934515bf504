"""Spectra and resolvent block norms of finite-volume operators.

The central quantity is the operator norm of a localized resolvent
block ``|chi_b (H - E)^{-1} chi_a|`` where chi_x restricts to the grid
nodes of the open unit box around a configuration x.  Blocks are
computed by a sparse LU solve against the chi_a columns followed by an
exact SVD of the extracted rows; factorizations and solves are cached
per (operator, energy).

Deterministic decay estimates checked here: the Combes-Thomas bound
below the spectrum, the Kronecker-sum resolvent bound of partially
interactive boxes, and the geometric resolvent inequality between
nested boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .geometry import NRectangle, as_config, sup_distance
from .operators import FiniteVolumeOperator, kronecker_factors

__all__ = [
    "Spectrum",
    "BlockNormReport",
    "SolverError",
    "ResonantEnergyError",
    "DENSE_LIMIT",
    "spectrum",
    "full_spectrum",
    "eigenvalues_below",
    "min_eigenvalue",
    "resonance_distance",
    "attach_pi_spectrum",
    "resolvent_block_norm",
    "block_norms_from",
    "counting_check",
    "combes_thomas_check",
    "pi_resolvent_bound_check",
    "geometric_resolvent_check",
]

DENSE_LIMIT = 4000
ITER_TOL = 1e-9
RESONANCE_REL = 1e-10


class SolverError(RuntimeError):
    """Eigen- or linear-solver failure that must not pass silently."""


class ResonantEnergyError(ValueError):
    """Energy too close to the spectrum for a meaningful resolvent."""


@dataclass
class Spectrum:
    """Sorted eigenvalues, optionally with eigenvectors and residuals."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    tol: float
    method: str


def full_spectrum(op: FiniteVolumeOperator) -> np.ndarray:
    """All eigenvalues, cached on the operator.

    Operators beyond the dense limit are handled through the exact
    Kronecker-sum identity when their box is partially interactive
    (spectrum = sorted sumset of the factor spectra); otherwise a dense
    solve is refused and callers must use a window.
    """
    cached = getattr(op, "_spectrum", None)
    if cached is not None:
        return cached
    if op.dim > DENSE_LIMIT:
        if op.rect.n > 1 and op.rect.is_box:
            from .geometry import interaction_class

            iclass = interaction_class(op.rect, op.params.interaction.r0)
            if iclass.partially_interactive:
                return attach_pi_spectrum(op, kronecker_factors(op, iclass))
        raise SolverError(
            f"dim {op.dim} exceeds the dense limit {DENSE_LIMIT}; "
            "request a window or attach a factor spectrum"
        )
    evals = np.sort(sla.eigvalsh(op.matrix.toarray()))
    op._spectrum = evals
    return evals


def attach_pi_spectrum(op: FiniteVolumeOperator, factors) -> np.ndarray:
    """Cache the sumset spectrum of a partially interactive box.

    For a PI box the matrix is the exact Kronecker sum of its factors,
    so the spectrum is the sorted sumset of the factor spectra; this
    avoids a dense solve on the product dimension.
    """
    f1, f2 = factors
    e1 = full_spectrum(f1)
    e2 = full_spectrum(f2)
    evals = np.sort((e1[:, None] + e2[None, :]).ravel())
    op._spectrum = evals
    return evals


def spectrum(op: FiniteVolumeOperator, window=None, with_vectors: bool = False) -> Spectrum:
    """Eigenvalues in a window (all of them when no window is given).

    Small operators are solved densely; larger ones by shift-invert
    Lanczos around the window center, growing the subspace until the
    window is bracketed.  Non-convergence raises :class:`SolverError`.
    """
    if op.dim <= DENSE_LIMIT:
        dense = op.matrix.toarray()
        if with_vectors:
            evals, evecs = sla.eigh(dense)
        else:
            evals, evecs = sla.eigvalsh(dense), None
        method = "dense"
        tol = 1e-12
    else:
        if window is None:
            raise SolverError(
                f"dim {op.dim} exceeds the dense limit; a window is required"
            )
        lo, hi = float(window[0]), float(window[1])
        center = 0.5 * (lo + hi)
        k = 32
        evals, evecs = None, None
        while True:
            k = min(k, op.dim - 1)
            try:
                if with_vectors:
                    evals, evecs = spla.eigsh(
                        op.matrix, k=k, sigma=center, which="LM", tol=ITER_TOL
                    )
                else:
                    evals = spla.eigsh(
                        op.matrix,
                        k=k,
                        sigma=center,
                        which="LM",
                        tol=ITER_TOL,
                        return_eigenvectors=False,
                    )
            except Exception as exc:  # arpack non-convergence and friends
                raise SolverError(f"shift-invert eigensolver failed: {exc}") from exc
            order = np.argsort(evals)
            evals = np.asarray(evals)[order]
            if evecs is not None:
                evecs = np.asarray(evecs)[:, order]
            bracketed = (evals[0] < lo and evals[-1] > hi) or k >= op.dim - 1
            if bracketed:
                break
            if k >= 2048:
                raise SolverError(
                    f"window ({lo}, {hi}) not bracketed after k={k} Lanczos vectors; "
                    "narrow the window"
                )
            k *= 2
        method = "shift-invert"
        tol = ITER_TOL

    if window is not None:
        lo, hi = float(window[0]), float(window[1])
        keep = (evals >= lo) & (evals <= hi)
        evals = evals[keep]
        if evecs is not None:
            evecs = evecs[:, keep]

    if with_vectors and evecs is not None and evals.size:
        # residual verification of the retained pairs
        r = op.matrix @ evecs - evecs * evals[None, :]
        worst = float(np.linalg.norm(r, axis=0).max())
        if worst > max(tol, 1e-9) * op.norm_bound():
            raise SolverError(f"eigenpair residual {worst:.2e} above tolerance")
    return Spectrum(np.sort(evals), evecs, tol, method)


def eigenvalues_below(op: FiniteVolumeOperator, cutoff: float) -> np.ndarray:
    evals = full_spectrum(op)
    return evals[evals <= cutoff]


def min_eigenvalue(op: FiniteVolumeOperator) -> float:
    return float(full_spectrum(op)[0])


def resonance_distance(op: FiniteVolumeOperator, energy: float) -> float:
    """Distance from the energy to the operator's spectrum."""
    evals = full_spectrum(op)
    return float(np.min(np.abs(evals - energy)))


def is_numerically_resonant(op: FiniteVolumeOperator, energy: float) -> bool:
    return resonance_distance(op, energy) < RESONANCE_REL * op.norm_bound()


@dataclass
class BlockNormReport:
    """Measured localized resolvent block `|chi_b R(E) chi_a|`."""

    a: np.ndarray
    b: np.ndarray
    energy: float
    separation: float
    value: float
    method: str = "exact-svd"  # sparse LU column solve + exact SVD
    tol: float = 1e-12


class _Resolvent:
    """Per-operator cache of LU factorizations and column solves."""

    def __init__(self, op: FiniteVolumeOperator):
        self.op = op
        self._lu: dict[float, spla.SuperLU] = {}
        self._columns: dict[tuple, np.ndarray] = {}

    def lu(self, energy: float):
        fac = self._lu.get(energy)
        if fac is None:
            shifted = (self.op.matrix - energy * sparse.identity(self.op.dim)).tocsc()
            try:
                fac = spla.splu(shifted)
            except RuntimeError as exc:
                raise SolverError(f"LU factorization failed at E={energy}: {exc}") from exc
            self._lu[energy] = fac
        return fac

    def columns(self, energy: float, a) -> tuple[np.ndarray, np.ndarray]:
        """Solve (H - E) Y = chi_a columns; returns (col indices, Y)."""
        a = as_config(a, self.op.rect.d)
        key = (energy, tuple(map(float, a.ravel())))
        hit = self._columns.get(key)
        idx = self.op.nodes_in_unit_box(a)
        if hit is None:
            rhs = np.zeros((self.op.dim, idx.size))
            rhs[idx, np.arange(idx.size)] = 1.0
            hit = self.lu(energy).solve(rhs)
            if len(self._columns) > 256:
                self._columns.clear()
            self._columns[key] = hit
        return idx, hit


def _resolvent(op: FiniteVolumeOperator) -> _Resolvent:
    cache = getattr(op, "_resolvent", None)
    if cache is None:
        cache = _Resolvent(op)
        op._resolvent = cache
    return cache


def resolvent_block_norm(
    op: FiniteVolumeOperator, energy: float, a, b, guard: bool = True
) -> BlockNormReport:
    """Largest singular value of the (chi_b rows, chi_a columns) resolvent block.

    Raises :class:`ResonantEnergyError` when the energy is within the
    resonance-guard tolerance of the spectrum; classification code must
    route resonant energies through the resonance classifier instead.
    """
    if guard and is_numerically_resonant(op, energy):
        raise ResonantEnergyError(
            f"E={energy} is numerically resonant (dist {resonance_distance(op, energy):.3e})"
        )
    res = _resolvent(op)
    _, y = res.columns(energy, a)
    rows = op.nodes_in_unit_box(b)
    block = y[rows]
    value = float(sla.svdvals(block)[0]) if min(block.shape) else 0.0
    a_cfg = as_config(a, op.rect.d)
    b_cfg = as_config(b, op.rect.d)
    return BlockNormReport(a_cfg, b_cfg, energy, sup_distance(a_cfg, b_cfg), value)


def block_norms_from(
    op: FiniteVolumeOperator, energy: float, a, targets
) -> list[BlockNormReport]:
    """Block norms from one source block to many targets (one solve)."""
    res = _resolvent(op)
    _, y = res.columns(energy, a)
    a_cfg = as_config(a, op.rect.d)
    out = []
    for b in targets:
        rows = op.nodes_in_unit_box(b)
        block = y[rows]
        value = float(sla.svdvals(block)[0]) if min(block.shape) else 0.0
        b_cfg = as_config(b, op.rect.d)
        out.append(BlockNormReport(a_cfg, b_cfg, energy, sup_distance(a_cfg, b_cfg), value))
    return out


@dataclass
class CountingReport:
    """Eigenvalue count below E against the volume-scaling reference."""

    energy: float
    count: int
    reference: float  # E^(nd/2) * ell^nd
    fitted_constant: float


def counting_check(op: FiniteVolumeOperator, energy: float) -> CountingReport:
    """Count eigenvalues <= E and report the fitted scaling constant.

    The reference shape is ``E^(nd/2) * side^nd``; the proportionality
    constant is fitted (reported), never asserted.
    """
    if energy < 0:
        count = int(np.sum(full_spectrum(op) <= energy))
        return CountingReport(energy, count, 0.0, math.nan)
    evals = full_spectrum(op)
    count = int(np.sum(evals <= energy))
    nd = op.nd
    ref = energy ** (nd / 2.0) * op.rect.side**nd if energy > 0 else 0.0
    fitted = count / ref if ref > 0 else math.nan
    return CountingReport(energy, count, ref, fitted)


@dataclass
class CombesThomasEntry:
    a: np.ndarray
    b: np.ndarray
    separation: float
    value: float
    bound: float
    passed: bool
    skipped: bool = False


@dataclass
class CombesThomasReport:
    energy: float
    gap: float
    slack: float
    entries: list[CombesThomasEntry] = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(e.passed for e in self.entries if not e.skipped)

    @property
    def checked(self) -> int:
        return sum(1 for e in self.entries if not e.skipped)


def combes_thomas_check(
    op: FiniteVolumeOperator, energy: float, pairs, slack: float = 2.0
) -> CombesThomasReport:
    """Exponential decay of resolvent blocks below the spectrum.

    For each pair (a, b) with separation at least side/100, compares the
    measured block norm against

        slack * (4/3) / gap * exp(-sqrt(gap) * |a - b| / 3),

    where gap = inf spectrum - E > 0; the slack absorbs discretization.
    Pairs closer than side/100 are recorded as skipped.
    """
    gap = min_eigenvalue(op) - energy
    if gap <= 0:
        raise ValueError(f"E={energy} is not below the spectrum (gap {gap:.3e})")
    L = op.rect.side
    report = CombesThomasReport(energy, gap, slack)
    for a, b in pairs:
        sep = sup_distance(as_config(a, op.rect.d), as_config(b, op.rect.d))
        if sep < L / 100.0:
            report.entries.append(
                CombesThomasEntry(as_config(a), as_config(b), sep, math.nan, math.nan, True, True)
            )
            continue
        value = resolvent_block_norm(op, energy, a, b).value
        bound = slack * (4.0 / 3.0) / gap * math.exp(-math.sqrt(gap) * sep / 3.0)
        report.entries.append(
            CombesThomasEntry(as_config(a), as_config(b), sep, value, bound, value <= bound)
        )
    return report


@dataclass
class PiBoundReport:
    energy: float
    lhs: float
    rhs_via_j: float
    rhs_via_jc: float
    terms_j: int
    terms_jc: int

    @property
    def passed(self) -> bool:
        tol = 1e-9 * max(1.0, self.lhs)
        return self.lhs <= self.rhs_via_j + tol and self.lhs <= self.rhs_via_jc + tol


def pi_resolvent_bound_check(
    op: FiniteVolumeOperator, energy: float, a, b, iclass=None
) -> PiBoundReport:
    """Kronecker-sum resolvent bound for a partially interactive box.

    The full-box block norm is dominated by the sum over one factor's
    eigenvalues of the other factor's shifted block norms, in both
    directions.  The energy must be nonresonant for the full box, which
    forces nonresonance of every shifted factor energy.
    """
    op_j, op_jc = kronecker_factors(op, iclass)
    attach_pi_spectrum(op, (op_j, op_jc))
    if is_numerically_resonant(op, energy):
        raise ResonantEnergyError(f"E={energy} is resonant for the product box")
    lhs = resolvent_block_norm(op, energy, a, b, guard=False).value

    a_cfg = as_config(a, op.rect.d)
    b_cfg = as_config(b, op.rect.d)
    if iclass is None:
        from .geometry import interaction_class

        iclass = interaction_class(op.rect, op.params.interaction.r0)
    J = list(iclass.split)
    Jc = [i for i in range(op.rect.n) if i not in J]

    def summed(factor_spec_op, other_op, keep):
        total = 0.0
        terms = 0
        for lam in full_spectrum(factor_spec_op):
            shifted = energy - lam
            val = resolvent_block_norm(other_op, shifted, a_cfg[keep], b_cfg[keep], guard=False).value
            total += val
            terms += 1
        return total, terms

    rhs_j, terms_jc = summed(op_j, op_jc, Jc)  # sum over sigma_J, blocks on Jc
    rhs_jc, terms_j = summed(op_jc, op_j, J)
    return PiBoundReport(energy, lhs, rhs_j, rhs_jc, terms_j, terms_jc)


@dataclass
class GeometricResolventReport:
    energy: float
    lhs: float
    rhs_max: float
    best_probe: np.ndarray | None
    probes: int
    ratio: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs_max * (1.0 + 1e-9)


def _interior_faces(inner: NRectangle, outer: NRectangle) -> list[tuple[int, int, float]]:
    """(flat axis, side sign, plane coordinate) of inner faces off the outer boundary."""
    faces = []
    tol = 1e-9
    for i in range(inner.n):
        ci, si = inner.particle_box(i)
        co, so = outer.particle_box(i)
        for ax in range(inner.d):
            flat = i * inner.d + ax
            for sign in (-1, +1):
                p_in = ci[ax] + sign * si / 2.0
                p_out = co[ax] + sign * so / 2.0
                if abs(p_in - p_out) > tol:
                    faces.append((flat, sign, float(p_in)))
    return faces


def geometric_resolvent_check(
    op_inner: FiniteVolumeOperator,
    op_outer: FiniteVolumeOperator,
    energy: float,
    x,
    y,
    probe_step: float = 0.5,
) -> GeometricResolventReport:
    """Resolvent bound between nested boxes through a boundary shell.

    With x deep inside the inner box and y in the outer box but outside
    the inner one, the outer block norm from x to y is bounded by
    ``ell^{nd}`` times the product of block norms through some probe
    point of the shell at distance (1 + delta_+)/2 from the part of the
    inner boundary interior to the outer box; the probe is found by
    maximizing the right-hand side over a grid on that shell.
    """
    inner, outer = op_inner.rect, op_outer.rect
    if inner.n != outer.n or inner.d != outer.d:
        raise ValueError("nested boxes must share (n, d)")
    ell, L = inner.side, outer.side
    if not ell < L:
        raise ValueError("inner box must be strictly smaller")
    for i in range(inner.n):
        ci, si = inner.particle_box(i)
        co, so = outer.particle_box(i)
        if np.any(np.abs(ci - co) > (so - si) / 2.0 + 1e-9):
            raise ValueError("inner box is not contained in the outer box")

    x_cfg = as_config(x, inner.d)
    y_cfg = as_config(y, inner.d)
    if not inner.contains(x_cfg):
        raise ValueError("x must lie in the inner box")
    if inner.contains(y_cfg) or not outer.contains(y_cfg):
        raise ValueError("y must lie in the outer box but outside the inner box")

    delta_plus = op_inner.params.profile.delta_plus
    # the buffer box around x must stay inside the inner box (within the outer)
    buf = 3.0 + delta_plus
    flat_x = x_cfg.ravel()
    for i in range(inner.n):
        ci, si = inner.particle_box(i)
        co, so = outer.particle_box(i)
        for ax in range(inner.d):
            lo = max(flat_x[i * inner.d + ax] - buf / 2.0, co[ax] - so / 2.0)
            hi = min(flat_x[i * inner.d + ax] + buf / 2.0, co[ax] + so / 2.0)
            if lo < ci[ax] - si / 2.0 - 1e-9 or hi > ci[ax] + si / 2.0 + 1e-9:
                raise ValueError("buffer box around x leaks out of the inner box")

    for opx, e in ((op_inner, energy), (op_outer, energy)):
        if is_numerically_resonant(opx, e):
            raise ResonantEnergyError("energy resonant for one of the nested boxes")

    shell = (1.0 + delta_plus) / 2.0
    if inner.side <= 2.0 * shell:
        raise ValueError("inner box too small for the boundary-shell inset")
    faces = _interior_faces(inner, outer)
    if not faces:
        raise ValueError("no interior boundary: the boxes share their whole boundary")

    nd = inner.n * inner.d
    flat_centers = inner.center.ravel()
    half = np.repeat(inner.sides, inner.d) / 2.0
    interior_planes: dict[int, list[float]] = {}
    for flat, _, plane in faces:
        interior_planes.setdefault(flat, []).append(plane)

    probes: list[np.ndarray] = []
    seen = set()
    for flat, sign, plane in faces:
        coords = []
        ok = True
        for axx in range(nd):
            if axx == flat:
                coords.append(np.array([plane - sign * shell]))
                continue
            lo = flat_centers[axx] - half[axx]
            hi = flat_centers[axx] + half[axx]
            for p in interior_planes.get(axx, []):
                if p < flat_centers[axx]:
                    lo = max(lo, p + shell)
                else:
                    hi = min(hi, p - shell)
            if lo > hi + 1e-12:
                ok = False
                break
            npts = max(1, int(math.floor((hi - lo) / probe_step)) + 1)
            coords.append(np.linspace(lo, hi, npts))
        if not ok:
            continue
        mesh = np.meshgrid(*coords, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        for row in pts:
            key = tuple(np.round(row, 9))
            if key not in seen:
                seen.add(key)
                probes.append(row.reshape(inner.n, inner.d))
    if not probes:
        raise ValueError("shell is empty; inner box too small for the probe inset")

    res_outer = _resolvent(op_outer)
    _, y_cols = res_outer.columns(energy, y_cfg)
    rows_x = op_outer.nodes_in_unit_box(x_cfg)
    lhs = float(sla.svdvals(y_cols[rows_x])[0])

    res_inner = _resolvent(op_inner)
    _, x_cols = res_inner.columns(energy, x_cfg)

    rhs_max, best = -math.inf, None
    for probe in probes:
        rows_a_out = op_outer.nodes_in_unit_box(probe)
        outer_norm = float(sla.svdvals(y_cols[rows_a_out])[0])
        rows_a_in = op_inner.nodes_in_unit_box(probe)
        inner_norm = float(sla.svdvals(x_cols[rows_a_in])[0])
        rhs = ell**nd * outer_norm * inner_norm
        if rhs > rhs_max:
            rhs_max, best = rhs, probe
    ratio = lhs / rhs_max if rhs_max > 0 else math.inf
    return GeometricResolventReport(energy, lhs, rhs_max, best, len(probes), ratio)
