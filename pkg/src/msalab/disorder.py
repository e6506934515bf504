"""Random potential of the multiparticle alloy model.

The potential seen by particle i inside a rectangle is built from
amplitudes at the integer lattice sites of that particle's own face box
only:

    V(x) = sum_i sum_{k in face_i} omega_k * u(x_i - k),

with i.i.d. amplitudes omega_k in [0, M+] and a single-site bump u
sandwiched between u_- * chi(box of side delta_-) and chi(box of side
delta_+).  The interaction is a symmetric two-body term of finite range
r0, summed over particle pairs.

Amplitudes are derived per site by a counter-based scheme keyed on
(master_seed, site), so a field is a pure function of its seed and
region: enumeration order and parallel scheduling cannot change it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import NRectangle, as_config

__all__ = [
    "SingleSiteProfile",
    "AmplitudeDistribution",
    "InteractionSpec",
    "ModelParams",
    "DisorderField",
    "face_sites",
    "region_for",
    "sample_disorder",
    "finite_volume_potential",
    "interaction_potential",
]


@dataclass(frozen=True)
class SingleSiteProfile:
    """Single-site bump u with inner plateau and outer support widths.

    The default plateau takes the value ``u_minus`` on the open box of
    side ``delta_minus`` and vanishes outside, which saturates both
    sides of the sandwich bound.  A custom shape may be supplied as a
    callable of the displacement; it must respect the sandwich between
    ``u_minus * chi(delta_minus box)`` and ``chi(delta_plus box)``.
    """

    u_minus: float = 1.0
    delta_minus: float = 1.0
    delta_plus: float = 1.0
    shape: str = "plateau"
    custom: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if not (0 < self.u_minus <= 1.0):
            raise ValueError("u_minus must lie in (0, 1]")
        if not (0 < self.delta_minus <= self.delta_plus):
            raise ValueError("need 0 < delta_minus <= delta_plus")
        if self.shape == "custom" and self.custom is None:
            raise ValueError("custom shape requires a callable")
        if self.shape not in ("plateau", "custom"):
            raise ValueError(f"unknown profile shape {self.shape!r}")

    def __call__(self, y: np.ndarray) -> np.ndarray:
        """Evaluate u on displacements; y has shape (..., d)."""
        y = np.asarray(y, dtype=float)
        if self.shape == "plateau":
            inside = np.all(np.abs(y) < self.delta_minus / 2.0, axis=-1)
            return self.u_minus * inside.astype(float)
        vals = np.asarray(self.custom(y), dtype=float)
        upper = np.all(np.abs(y) < self.delta_plus / 2.0, axis=-1)
        return vals * upper.astype(float)  # clip support to the outer box


@dataclass(frozen=True)
class AmplitudeDistribution:
    """Law of a single amplitude on [0, M+] with bounded density.

    ``uniform`` has density 1/M+.  ``tilted`` is a truncated custom law
    with linear density rho(v) = (1 + tilt*(2v/M+ - 1)) / M+, |tilt| < 1,
    keeping both endpoints in the support.
    """

    kind: str = "uniform"
    m_plus: float = 1.0
    tilt: float = 0.0

    def __post_init__(self):
        if self.m_plus <= 0:
            raise ValueError("m_plus must be positive")
        if self.kind not in ("uniform", "tilted"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "tilted" and not abs(self.tilt) < 1.0:
            raise ValueError("tilt must satisfy |tilt| < 1")

    @property
    def density_bound(self) -> float:
        if self.kind == "uniform":
            return 1.0 / self.m_plus
        return (1.0 + abs(self.tilt)) / self.m_plus

    def ppf(self, q: np.ndarray) -> np.ndarray:
        """Inverse CDF mapping uniform deviates to amplitudes."""
        q = np.asarray(q, dtype=float)
        if self.kind == "uniform" or self.tilt == 0.0:
            return self.m_plus * q
        t = self.tilt
        # CDF in u = v/M+: F(u) = u + t*(u^2 - u); solve t*u^2 + (1-t)*u - q = 0.
        u = (-(1 - t) + np.sqrt((1 - t) ** 2 + 4 * t * q)) / (2 * t)
        return self.m_plus * np.clip(u, 0.0, 1.0)

    def key(self) -> tuple:
        return (self.kind, float(self.m_plus), float(self.tilt))


@dataclass(frozen=True)
class InteractionSpec:
    """Two-body interaction: nonnegative, even, vanishing beyond r0."""

    bound: float = 0.0
    r0: float = 1.0
    shape: str = "plateau"
    custom: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.bound < 0:
            raise ValueError("interaction bound must be nonnegative")
        if self.r0 <= 0:
            raise ValueError("interaction range must be positive")
        if self.shape == "custom" and self.custom is None:
            raise ValueError("custom shape requires a callable")

    def pair_potential(self, y: np.ndarray) -> np.ndarray:
        """Evaluate the pair term on displacements of shape (..., d)."""
        y = np.asarray(y, dtype=float)
        within = np.max(np.abs(y), axis=-1) <= self.r0
        if self.shape == "plateau":
            return self.bound * within.astype(float)
        vals = np.asarray(self.custom(y), dtype=float)
        return vals * within.astype(float)

    @property
    def is_zero(self) -> bool:
        return self.shape == "plateau" and self.bound == 0.0


@dataclass(frozen=True)
class ModelParams:
    """Full model specification: geometry-free physics plus the mesh."""

    d: int = 1
    n: int = 1
    profile: SingleSiteProfile = field(default_factory=SingleSiteProfile)
    distribution: AmplitudeDistribution = field(default_factory=AmplitudeDistribution)
    interaction: InteractionSpec = field(default_factory=InteractionSpec)
    h: float = 0.25
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ValueError("need d >= 1 and n >= 1")
        if self.h <= 0:
            raise ValueError("mesh width must be positive")
        if self.boundary != "dirichlet":
            raise ValueError("only the Dirichlet boundary condition is supported")

    def digest(self) -> str:
        text = repr(
            (
                self.d,
                self.n,
                (
                    self.profile.u_minus,
                    self.profile.delta_minus,
                    self.profile.delta_plus,
                    self.profile.shape,
                ),
                self.distribution.key(),
                (self.interaction.bound, self.interaction.r0, self.interaction.shape),
                self.h,
                self.boundary,
            )
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# --------------------------------------------------------------- sampling


def _zigzag(k: int) -> int:
    return 2 * k if k >= 0 else -2 * k - 1


def _site_uniform(master_seed: int, site: tuple[int, ...]) -> float:
    """Uniform deviate derived from (seed, site) by a counter-based stream."""
    entropy = (int(master_seed),) + tuple(_zigzag(int(c)) for c in site)
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
    return float(gen.random())


def face_sites(rect: NRectangle) -> np.ndarray:
    """Integer lattice sites in the union of the rectangle's face boxes.

    Face i is the open one-particle box of particle i; its sites are the
    points of Z^d strictly inside it.  The union is returned sorted and
    de-duplicated, shape (num_sites, d).
    """
    seen: set[tuple[int, ...]] = set()
    for i in range(rect.n):
        c, s = rect.particle_box(i)
        ranges = []
        for ax in range(rect.d):
            lo = int(np.ceil(c[ax] - s / 2.0 + 1e-12))
            hi = int(np.floor(c[ax] + s / 2.0 - 1e-12))
            ranges.append(range(lo, hi + 1))
        mesh = np.meshgrid(*[np.asarray(list(r)) for r in ranges], indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1) if mesh else np.empty((0, rect.d))
        for row in pts:
            seen.add(tuple(int(v) for v in row))
    if not seen:
        return np.empty((0, rect.d), dtype=int)
    return np.asarray(sorted(seen), dtype=int).reshape(-1, rect.d)


def particle_sites(rect: NRectangle, i: int) -> np.ndarray:
    """Sites of face i alone (subset of :func:`face_sites`)."""
    return face_sites(rect.sub_rectangle([i]))


def region_for(*rects: NRectangle) -> np.ndarray:
    """Union of the face sites of several rectangles."""
    if not rects:
        raise ValueError("need at least one rectangle")
    rows = {tuple(int(v) for v in row) for r in rects for row in face_sites(r)}
    d = rects[0].d
    return np.asarray(sorted(rows), dtype=int).reshape(-1, d)


@dataclass(frozen=True)
class DisorderField:
    """One realization omega over a finite region of Z^d.

    Values are a deterministic function of (master_seed, site,
    distribution); the field is immutable after sampling.
    """

    sites: np.ndarray
    values: np.ndarray
    master_seed: int
    distribution: AmplitudeDistribution

    def __post_init__(self):
        self.sites.setflags(write=False)
        self.values.setflags(write=False)
        index = {tuple(int(v) for v in s): i for i, s in enumerate(self.sites)}
        object.__setattr__(self, "_index", index)

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    def __len__(self) -> int:
        return self.sites.shape[0]

    def value_at(self, site) -> float:
        key = tuple(int(v) for v in np.atleast_1d(site))
        try:
            return float(self.values[self._index[key]])
        except KeyError:
            raise KeyError(f"site {key} not in the sampled region") from None

    def values_at(self, sites: np.ndarray) -> np.ndarray:
        return np.asarray([self.value_at(s) for s in np.atleast_2d(sites)])

    def covers(self, sites: np.ndarray) -> bool:
        return all(tuple(int(v) for v in s) in self._index for s in np.atleast_2d(sites))

    def resample(self, sites, new_seed: int) -> "DisorderField":
        """New field with the given sites re-derived from ``new_seed``.

        Sites outside the subset keep their values bit for bit, which is
        what makes independence of separated rectangles checkable.
        """
        subset = {tuple(int(v) for v in s) for s in np.atleast_2d(np.asarray(sites))}
        values = self.values.copy()
        for key in subset:
            if key not in self._index:
                raise KeyError(f"site {key} not in the sampled region")
            u = _site_uniform(new_seed, key)
            values[self._index[key]] = self.distribution.ppf(u)
        return DisorderField(self.sites, values, self.master_seed, self.distribution)

    def digest(self) -> str:
        payload = self.sites.tobytes() + self.values.tobytes()
        return hashlib.sha256(payload).hexdigest()[:16]


def sample_disorder(region, distribution: AmplitudeDistribution, master_seed: int) -> DisorderField:
    """Draw one disorder realization over a finite region of Z^d.

    ``region`` is an (m, d) integer array, an iterable of sites, or an
    :class:`NRectangle` (meaning the union of its face boxes).  Each
    site's value comes from its own counter-based stream, so the result
    does not depend on enumeration order or on how trials are scheduled
    across workers.
    """
    if isinstance(region, NRectangle):
        sites = face_sites(region)
    else:
        sites = np.atleast_2d(np.asarray(region, dtype=int))
        if sites.size == 0:
            raise ValueError("region must be nonempty")
        sites = np.unique(sites, axis=0)
    uniforms = np.array([_site_uniform(master_seed, tuple(s)) for s in sites])
    values = distribution.ppf(uniforms)
    return DisorderField(sites, values, int(master_seed), distribution)


# ------------------------------------------------------------- potentials


def single_particle_potential(
    points: np.ndarray,
    sites: np.ndarray,
    values: np.ndarray,
    profile: SingleSiteProfile,
) -> np.ndarray:
    """sum_k omega_k u(x - k) for an array of positions, shape (..., d)."""
    points = np.asarray(points, dtype=float)
    flat = points.reshape(-1, points.shape[-1])
    out = np.zeros(flat.shape[0])
    # chunk over sites to bound the (npoints x nsites x d) intermediate
    step = max(1, int(2_000_000 / max(1, flat.shape[0])))
    for start in range(0, sites.shape[0], step):
        chunk = sites[start : start + step]
        vals = values[start : start + step]
        bump = profile(flat[:, None, :] - chunk[None, :, :])
        out += bump @ vals
    return out.reshape(points.shape[:-1])


def finite_volume_potential(rect: NRectangle, fld: DisorderField, profile: SingleSiteProfile, x) -> float:
    """Random potential at one configuration, using per-face sites only.

    Particle i sees the amplitudes of the lattice sites inside its own
    face box; amplitudes elsewhere never enter.  The field must cover
    every face site of the rectangle.
    """
    x = as_config(x, rect.d)
    if not rect.contains(x):
        raise ValueError("configuration lies outside the rectangle")
    total = 0.0
    for i in range(rect.n):
        sites = particle_sites(rect, i)
        if sites.shape[0] == 0:
            continue
        if not fld.covers(sites):
            raise ValueError(f"field does not cover the face of particle {i}")
        vals = fld.values_at(sites)
        total += float(single_particle_potential(x[i], sites, vals, profile))
    return total


def interaction_potential(spec: InteractionSpec, x) -> float:
    """Total two-body interaction sum over particle pairs of a configuration."""
    x = as_config(x)
    n = x.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += float(spec.pair_potential(x[i] - x[j]))
    return total
