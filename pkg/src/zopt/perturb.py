"""Random perturbation schemes for two-point gradient estimation.

Every sampler in this module draws vectors ``v`` whose uncentered second
moment is ``E[v v^T] = delta * I_d`` for a positive scale ``delta``.  Four
classical families (Gaussian, uniform on a sphere, Rademacher, random
coordinate) are provided together with a directionally aligned sampler that
places ``v`` on one of the two hyperplanes ``a^T v = +/- sqrt(delta)*|a|``
for an anchor vector ``a``, via orthogonal projection of a sphere sample.

All draws are routed through :class:`RngStream`, a seedable counter-based
stream (Philox), so every sequence of samples is reproducible byte for byte
from its seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SchemeKind",
    "AnchorPolicy",
    "PerturbationScheme",
    "MomentProfile",
    "RngStream",
    "DegeneratePlaneError",
    "derive_seed",
    "sample_gaussian",
    "sample_uniform_sphere",
    "sample_rademacher",
    "sample_coordinate",
    "sample_dap",
    "project_onto_hyperplane",
    "draw",
    "moment_profile",
    "empirical_moment_profile",
]


class SchemeKind(enum.Enum):
    """The supported perturbation families."""

    GAUSSIAN = "gaussian"
    UNIFORM_SPHERE = "uniform"
    RADEMACHER = "rademacher"
    RANDOM_COORDINATE = "coordinate"
    DAP = "dap"


class AnchorPolicy(enum.Enum):
    """How a directionally aligned sampler obtains its anchor vector."""

    EXACT_GRADIENT = "exact"
    ESTIMATED_GRADIENT = "estimated"


class DegeneratePlaneError(ValueError):
    """Raised when a hyperplane normal has zero length."""


@dataclass(frozen=True)
class PerturbationScheme:
    """A named perturbation family together with its scale ``delta``.

    ``dap_anchor_policy`` is only meaningful for ``SchemeKind.DAP``: with
    ``EXACT_GRADIENT`` the anchor is the objective's true gradient, with
    ``ESTIMATED_GRADIENT`` the anchor is produced by a first estimation
    stage (see ``estimator.dap_pipeline``).
    """

    kind: SchemeKind
    delta: float = 1.0
    dap_anchor_policy: AnchorPolicy = AnchorPolicy.EXACT_GRADIENT

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @property
    def name(self) -> str:
        if self.kind is SchemeKind.DAP:
            return f"dap_{self.dap_anchor_policy.value}"
        return self.kind.value

    @classmethod
    def from_name(cls, name: str, delta: float = 1.0) -> "PerturbationScheme":
        """Build a scheme from its CLI name (e.g. ``uniform``, ``dap_exact``)."""
        aliases = {
            "gaussian": (SchemeKind.GAUSSIAN, None),
            "uniform": (SchemeKind.UNIFORM_SPHERE, None),
            "uniform_sphere": (SchemeKind.UNIFORM_SPHERE, None),
            "rademacher": (SchemeKind.RADEMACHER, None),
            "coordinate": (SchemeKind.RANDOM_COORDINATE, None),
            "dap": (SchemeKind.DAP, AnchorPolicy.EXACT_GRADIENT),
            "dap_exact": (SchemeKind.DAP, AnchorPolicy.EXACT_GRADIENT),
            "dap_estimated": (SchemeKind.DAP, AnchorPolicy.ESTIMATED_GRADIENT),
        }
        try:
            kind, policy = aliases[name.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown perturbation scheme {name!r}") from None
        if policy is None:
            return cls(kind=kind, delta=delta)
        return cls(kind=kind, delta=delta, dap_anchor_policy=policy)


@dataclass(frozen=True)
class MomentProfile:
    """Fourth-moment summary of a perturbation family.

    ``fourth_moment`` is ``E|v|^4`` (``None`` when no closed form is known),
    ``rho`` is the excess over the constant-magnitude value, i.e.
    ``E|v|^4 - delta^2 d^2``, and ``empirical_skew_vector`` is a Monte Carlo
    estimate of ``E[|v|^2 v]`` when the profile was measured from samples.
    """

    fourth_moment: float | None
    rho: float | None
    empirical_skew_vector: np.ndarray | None = field(default=None, compare=False)


class RngStream:
    """Seedable counter-based random stream.

    Wraps a Philox (counter-based) bit generator keyed by ``seed``.  The
    ``counter`` attribute is a monotone index of completed draw calls; a
    fresh stream with the same seed replays the identical sequence of
    draws byte for byte.  A stream must be owned by a single logical
    thread; use :func:`derive_seed` to split work across streams.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        self.seed = int(seed)
        self.counter = 0
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))

    def normals(self, shape) -> np.ndarray:
        """Standard normal draws with the given shape."""
        self.counter += 1
        return self._gen.standard_normal(shape)

    def uniforms(self, shape) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        self.counter += 1
        return self._gen.random(shape)

    def signs(self, n: int) -> np.ndarray:
        """Independent +/-1 draws with equal probability."""
        self.counter += 1
        return self._gen.integers(0, 2, size=n) * 2 - 1

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.integers(low, high, size=n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, counter={self.counter})"


def derive_seed(base: int, *tags: int) -> int:
    """Derive a child seed from a base seed and integer tags.

    Deterministic and collision-resistant (SeedSequence hashing), used to
    give parallel experiment cells independent streams.
    """
    state = np.random.SeedSequence((int(base),) + tuple(int(t) for t in tags)).generate_state(2, np.uint64)
    return int(state[0])


def _check_dim_delta(d: int, delta: float) -> None:
    if not (isinstance(d, (int, np.integer)) and d >= 1):
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta!r}")


def _squeeze(samples: np.ndarray, size: int | None) -> np.ndarray:
    return samples[0] if size is None else samples


def sample_gaussian(d: int, delta: float, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Sample v with i.i.d. N(0, delta) coordinates.

    Returns a single vector of shape ``(d,)``, or ``(size, d)`` when
    ``size`` is given.
    """
    _check_dim_delta(d, delta)
    n = 1 if size is None else int(size)
    v = math.sqrt(delta) * rng.normals((n, d))
    return _squeeze(v, size)


def sample_uniform_sphere(d: int, delta: float, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Sample v uniformly on the sphere of squared radius ``d * delta``."""
    _check_dim_delta(d, delta)
    n = 1 if size is None else int(size)
    g = rng.normals((n, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    v = math.sqrt(d * delta) * (g / norms)
    return _squeeze(v, size)


def sample_rademacher(d: int, delta: float, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Sample v with independent +/- sqrt(delta) coordinates."""
    _check_dim_delta(d, delta)
    n = 1 if size is None else int(size)
    v = math.sqrt(delta) * rng.signs(n * d).reshape(n, d).astype(float)
    return _squeeze(v, size)


def sample_coordinate(d: int, delta: float, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Sample v = sqrt(d*delta) * e_i with the coordinate i uniform.

    The sign is always positive (documented convention; the two-point
    estimator is insensitive to it as the perturbation step vanishes).
    """
    _check_dim_delta(d, delta)
    n = 1 if size is None else int(size)
    idx = rng.integers(0, d, n)
    v = np.zeros((n, d))
    v[np.arange(n), idx] = math.sqrt(d * delta)
    return _squeeze(v, size)


def project_onto_hyperplane(v: np.ndarray, u: np.ndarray, c: float) -> np.ndarray:
    """Orthogonally project ``v`` onto the hyperplane ``{w : u^T w = c}``.

    Uses the closed form ``v - u (u^T v - c) / |u|^2``.  Raises
    :class:`DegeneratePlaneError` when ``u`` is the zero vector.
    """
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    nrm_sq = float(u @ u)
    if nrm_sq == 0.0:
        raise DegeneratePlaneError("hyperplane normal must be nonzero")
    return v - u * ((v @ u - c) / nrm_sq)


def sample_dap(anchor: np.ndarray, d: int, delta: float, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Sample a directionally aligned perturbation for the given anchor.

    A sphere sample ``v_ini`` (squared radius ``d * delta``) is projected
    onto the random plane ``{v : a^T v = xi * sqrt(delta) * |a|}`` with
    ``xi`` uniform on {-1, +1}.  Every output satisfies
    ``(a^T v)^2 = delta * |a|^2`` exactly, and the second moment stays
    ``delta * I_d`` over repeated draws.  A zero anchor leaves the sphere
    sample unprojected (any scheme with the right second moment is
    acceptable at a stationary point).
    """
    anchor = np.asarray(anchor, dtype=float)
    if anchor.shape != (d,):
        raise ValueError(f"anchor has shape {anchor.shape}, expected ({d},)")
    _check_dim_delta(d, delta)
    n = 1 if size is None else int(size)
    g = rng.normals((n, d))
    v_ini = math.sqrt(d * delta) * (g / np.linalg.norm(g, axis=1, keepdims=True))
    nrm_sq = float(anchor @ anchor)
    if nrm_sq == 0.0:
        return _squeeze(v_ini, size)
    xi = rng.signs(n)
    c = xi * (math.sqrt(delta * nrm_sq))
    v = v_ini - anchor[None, :] * ((v_ini @ anchor - c) / nrm_sq)[:, None]
    return _squeeze(v, size)


def draw(
    scheme: PerturbationScheme,
    d: int,
    rng: RngStream,
    size: int | None = None,
    anchor: np.ndarray | None = None,
) -> np.ndarray:
    """Dispatch to the sampler for ``scheme.kind``.

    ``anchor`` is required for DAP schemes and ignored otherwise.
    """
    if scheme.kind is SchemeKind.GAUSSIAN:
        return sample_gaussian(d, scheme.delta, rng, size)
    if scheme.kind is SchemeKind.UNIFORM_SPHERE:
        return sample_uniform_sphere(d, scheme.delta, rng, size)
    if scheme.kind is SchemeKind.RADEMACHER:
        return sample_rademacher(d, scheme.delta, rng, size)
    if scheme.kind is SchemeKind.RANDOM_COORDINATE:
        return sample_coordinate(d, scheme.delta, rng, size)
    if scheme.kind is SchemeKind.DAP:
        if anchor is None:
            raise ValueError("DAP sampling requires an anchor vector")
        return sample_dap(anchor, d, scheme.delta, rng, size)
    raise ValueError(f"unknown scheme kind {scheme.kind!r}")


def moment_profile(scheme: PerturbationScheme, d: int) -> MomentProfile:
    """Analytic fourth-moment profile of a scheme, where a closed form exists.

    Constant-magnitude families have ``E|v|^4 = delta^2 d^2`` (zero excess),
    the Gaussian has ``delta^2 (d^2 + 2d)``.  The directionally aligned
    family has no anchor-independent closed form; use
    :func:`empirical_moment_profile` for it.
    """
    _check_dim_delta(d, scheme.delta)
    delta = scheme.delta
    base = delta * delta * d * d
    if scheme.kind in (SchemeKind.UNIFORM_SPHERE, SchemeKind.RADEMACHER, SchemeKind.RANDOM_COORDINATE):
        return MomentProfile(fourth_moment=base, rho=0.0)
    if scheme.kind is SchemeKind.GAUSSIAN:
        m4 = delta * delta * (d * d + 2 * d)
        return MomentProfile(fourth_moment=m4, rho=m4 - base)
    return MomentProfile(fourth_moment=None, rho=None)


def empirical_moment_profile(
    scheme: PerturbationScheme,
    d: int,
    n: int,
    rng: RngStream,
    anchor: np.ndarray | None = None,
    chunk: int = 1 << 17,
) -> MomentProfile:
    """Monte Carlo estimate of the fourth moment and skew ``E[|v|^2 v]``."""
    if n < 1:
        raise ValueError("n must be positive")
    total_m4 = 0.0
    total_skew = np.zeros(d)
    remaining = n
    while remaining > 0:
        m = min(chunk, remaining)
        v = draw(scheme, d, rng, size=m, anchor=anchor)
        norm_sq = np.einsum("ij,ij->i", v, v)
        total_m4 += float(np.sum(norm_sq * norm_sq))
        total_skew += norm_sq @ v
        remaining -= m
    m4 = total_m4 / n
    return MomentProfile(
        fourth_moment=m4,
        rho=m4 - scheme.delta**2 * d * d,
        empirical_skew_vector=total_skew / n,
    )
