"""Zeroth-order SGD with learning-rate guards derived from the theory.

The update is ``x_{t+1} = x_t - eta * g_t`` with ``g_t`` a batched two-point
estimate.  The maximum safe learning rates depend on the smoothness constant,
the perturbation scale, the dimension, and the excess fourth moment of the
perturbation law; both the non-convex and strongly convex guards are exposed
along with the schedule implied by the complexity analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import estimator
from .objectives import Objective
from .perturb import AnchorPolicy, PerturbationScheme, RngStream, SchemeKind

__all__ = [
    "SgdConfig",
    "StepSizeInputs",
    "TraceRecord",
    "SgdTrace",
    "DivergenceError",
    "zo_sgd",
    "max_step_nonconvex",
    "max_step_strongly_convex",
    "corollary_schedule",
    "gradient_noise_coefficient",
    "evaluation_noise_coefficient",
    "noise_floor_b2",
    "strongly_convex_gap_bound",
    "nonconvex_min_grad_bound",
]

DIVERGENCE_RADIUS = 1e12


class DivergenceError(RuntimeError):
    """An iterate became non-finite or unreasonably large; carries the step."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SgdConfig:
    """Hyperparameters of a zeroth-order SGD run."""

    eta: float
    mu: float
    steps: int
    batch: int
    scheme: PerturbationScheme
    seed: int
    record_every: int = 1

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    value: float
    grad_norm_sq: float | None


@dataclass
class SgdTrace:
    """Per-run record: sampled iterate summaries and the final point."""

    records: list[TraceRecord] = field(default_factory=list)
    final_point: np.ndarray | None = None
    min_grad_norm_sq: float | None = None


def zo_sgd(obj: Objective, x1: np.ndarray, cfg: SgdConfig) -> SgdTrace:
    """Run zeroth-order SGD from ``x1`` and return its trace.

    Gradient estimates come from the batched two-point estimator; a DAP
    scheme uses the exact oracle anchor under the exact-gradient policy and
    the two-stage pipeline under the estimated-gradient policy.  The true
    gradient norm is tracked whenever the objective has an oracle.  The run
    aborts with :class:`DivergenceError` if an iterate leaves the ball of
    radius ``1e12`` or turns non-finite.
    """
    x = np.array(x1, dtype=float, copy=True)
    if x.shape != (obj.dim,):
        raise ValueError(f"x1 has shape {x.shape}, expected ({obj.dim},)")
    rng = RngStream(cfg.seed)
    scheme = cfg.scheme
    use_pipeline = (
        scheme.kind is SchemeKind.DAP
        and scheme.dap_anchor_policy is AnchorPolicy.ESTIMATED_GRADIENT
    )
    trace = SgdTrace()
    min_gns: float | None = None
    for t in range(1, cfg.steps + 1):
        gns: float | None = None
        if obj.grad_oracle is not None:
            g = obj.grad_oracle(x)
            gns = float(g @ g)
            min_gns = gns if min_gns is None else min(min_gns, gns)
        if (t - 1) % cfg.record_every == 0 or t == cfg.steps:
            trace.records.append(TraceRecord(step=t, value=float(obj.eval(x)), grad_norm_sq=gns))
        if t == cfg.steps:
            break
        if use_pipeline:
            est = estimator.dap_pipeline(obj, x, cfg.batch, cfg.mu, scheme.delta, rng)
        else:
            est = estimator.batched(obj, x, scheme, cfg.batch, cfg.mu, rng)
        x = x - cfg.eta * est.gradient
        if not np.all(np.isfinite(x)) or float(x @ x) > DIVERGENCE_RADIUS**2:
            raise DivergenceError(f"iterate diverged at step {t}", step=t)
    trace.final_point = x
    trace.min_grad_norm_sq = min_gns
    return trace


@dataclass(frozen=True)
class StepSizeInputs:
    """Problem constants feeding the learning-rate guards.

    ``rho`` is the excess fourth moment of the perturbation law, ``c`` the
    strong-convexity constant (optional), ``T`` the horizon (needed by the
    non-convex guard), and ``f_gap_b2`` an optional externally supplied
    value of the gradient-noise floor for reporting.
    """

    L: float
    delta: float
    d: int
    rho: float
    T: int | None = None
    c: float | None = None
    f_gap_b2: float | None = None

    def __post_init__(self) -> None:
        if not self.L > 0:
            raise ValueError("L must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.T is not None and self.T < 1:
            raise ValueError("T must be >= 1")
        if self.c is not None and not self.c > 0:
            raise ValueError("c must be positive when given")


def max_step_nonconvex(inputs: StepSizeInputs) -> float:
    """Largest guarded learning rate for smooth non-convex objectives.

    ``min(1/(2L), 1/(L sqrt(2 T (2 delta^2 d + rho + 2 delta + 1))))``.
    """
    if inputs.T is None:
        raise ValueError("the non-convex guard needs the horizon T")
    L, delta, d, rho = inputs.L, inputs.delta, inputs.d, inputs.rho
    radicand = 2.0 * inputs.T * (2.0 * delta * delta * d + rho + 2.0 * delta + 1.0)
    return min(1.0 / (2.0 * L), 1.0 / (L * math.sqrt(radicand)))


def max_step_strongly_convex(inputs: StepSizeInputs) -> float:
    """Largest guarded learning rate under strong convexity.

    ``min(1/(2L), delta c / (4 L^2) * 1/(2 delta^2 d + 2 delta + 1 + rho))``.
    """
    if inputs.c is None:
        raise ValueError("the strongly convex guard needs the constant c")
    L, delta, d, rho, c = inputs.L, inputs.delta, inputs.d, inputs.rho, inputs.c
    second = (delta * c / (4.0 * L * L)) / (2.0 * delta * delta * d + 2.0 * delta + 1.0 + rho)
    return min(1.0 / (2.0 * L), second)


def corollary_schedule(
    epsilon: float,
    d: int,
    mode: str,
    k_eta: float = 1.0,
    k_mu: float = 1.0,
    k_T: float = 1.0,
) -> tuple[float, float, int]:
    """Hyperparameter schedule reaching accuracy ``epsilon`` at ``delta = 1``.

    Returns ``(eta, mu, T)`` with ``eta = k_eta * eps / d``,
    ``mu = k_mu * eps / d`` and ``T = ceil(k_T * d / eps^2)`` in the
    non-convex mode or ``ceil(k_T * d / eps)`` under strong convexity.
    The complexity analysis fixes only these scalings; the multipliers k
    are exposed and default to 1.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if d < 1:
        raise ValueError("d must be >= 1")
    if mode not in ("nonconvex", "strongly_convex"):
        raise ValueError(f"mode must be 'nonconvex' or 'strongly_convex', got {mode!r}")
    eta = k_eta * epsilon / d
    mu = k_mu * epsilon / d
    if mode == "nonconvex":
        horizon = math.ceil(k_T * d / (epsilon * epsilon))
    else:
        horizon = math.ceil(k_T * d / epsilon)
    return eta, mu, horizon


def gradient_noise_coefficient(delta: float, d: int, rho: float) -> float:
    """Coefficient of ``|grad f|^2`` in the estimator MSE upper bound."""
    return 2.0 * delta * delta * d + rho + 1.0 - 2.0 * delta


def evaluation_noise_coefficient(L: float, fourth_moment: float) -> float:
    """Coefficient of ``mu^2`` in the accumulated-error terms: ``L^3 E|v|^4``."""
    return L**3 * fourth_moment


def noise_floor_b2(L: float, f_star: float, mean_individual_min: float) -> float:
    """Gradient-noise floor ``2 L (f* - E inf_x f(x; xi))`` for stochastic objectives."""
    return 2.0 * L * (f_star - mean_individual_min)


def strongly_convex_gap_bound(
    inputs: StepSizeInputs,
    eta: float,
    mu: float,
    t: int,
    initial_gap: float,
    fourth_moment: float,
    b2: float = 0.0,
) -> float:
    """Guaranteed value gap after ``t`` steps under strong convexity.

    ``(1 - c delta eta / 2)^(t-1) * gap_1 + 2 eta / (c delta) *
    (L B^2 (1 + beta) + mu^2 alpha)`` with beta and alpha the noise
    coefficients above.
    """
    if inputs.c is None:
        raise ValueError("the strongly convex bound needs the constant c")
    beta = gradient_noise_coefficient(inputs.delta, inputs.d, inputs.rho)
    alpha = evaluation_noise_coefficient(inputs.L, fourth_moment)
    rate = 1.0 - 0.5 * inputs.c * inputs.delta * eta
    floor = (2.0 / (inputs.c * inputs.delta)) * eta * (inputs.L * b2 * (1.0 + beta) + mu * mu * alpha)
    return rate ** (t - 1) * initial_gap + floor


def nonconvex_min_grad_bound(
    inputs: StepSizeInputs,
    eta: float,
    mu: float,
    initial_gap: float,
    fourth_moment: float,
    b2: float = 0.0,
) -> float:
    """Guaranteed bound on the minimum squared gradient norm over the run."""
    if inputs.T is None:
        raise ValueError("the non-convex bound needs the horizon T")
    beta = gradient_noise_coefficient(inputs.delta, inputs.d, inputs.rho)
    alpha = evaluation_noise_coefficient(inputs.L, fourth_moment)
    return initial_gap / (inputs.delta * eta * inputs.T) + (2.0 * eta / inputs.delta) * (
        inputs.L * b2 * (1.0 + beta) + mu * mu * alpha
    )
