"""Two-point zeroth-order gradient estimators.

The single-draw estimator is ``(1/mu) [f(x + mu v) - f(x)] v``; the batched
form averages it over ``b`` independent perturbations while evaluating
``f(x)`` once.  The two-stage pipeline first estimates the gradient with
uniform sphere perturbations and then refines it with directionally aligned
perturbations anchored at that estimate, returning the average of the two
stage estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import EvaluationError, Objective
from .perturb import (
    AnchorPolicy,
    PerturbationScheme,
    RngStream,
    SchemeKind,
    draw,
)

__all__ = ["GradientEstimate", "EvaluationError", "two_point", "batched", "dap_pipeline"]


@dataclass(frozen=True)
class GradientEstimate:
    """A gradient estimate plus the provenance needed to reproduce it."""

    gradient: np.ndarray
    mu: float
    batch: int
    evals: int
    scheme_name: str
    seed: int


def _eval_one(obj: Objective, x: np.ndarray) -> float:
    value = float(obj.eval(x))
    if not np.isfinite(value):
        raise EvaluationError(f"objective returned non-finite value {value}", x)
    return value


def _eval_many(obj: Objective, points: np.ndarray) -> np.ndarray:
    if obj.eval_batch is not None:
        values = np.asarray(obj.eval_batch(points), dtype=float)
    else:
        values = np.array([float(obj.eval(p)) for p in points])
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.argmax(bad))
        raise EvaluationError(f"objective returned non-finite value {values[i]}", points[i])
    return values


def two_point(obj: Objective, x: np.ndarray, v: np.ndarray, mu: float) -> np.ndarray:
    """Single-draw two-point estimate ``(1/mu) [f(x + mu v) - f(x)] v``.

    Exact (equal to ``v v^T grad f(x)``) for affine objectives at any mu.
    """
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    fx = _eval_one(obj, x)
    fxv = _eval_one(obj, x + mu * v)
    return ((fxv - fx) / mu) * v


def _batched_from_draws(obj: Objective, x: np.ndarray, vs: np.ndarray, mu: float) -> np.ndarray:
    # f(x) is evaluated once and shared across the batch; the weighted
    # perturbations are reduced in a fixed order for reproducibility.
    fx = _eval_one(obj, x)
    fvals = _eval_many(obj, x[None, :] + mu * vs)
    weights = (fvals - fx) / mu
    return (weights[:, None] * vs).sum(axis=0) / vs.shape[0]


def batched(
    obj: Objective,
    x: np.ndarray,
    scheme: PerturbationScheme,
    b: int,
    mu: float,
    rng: RngStream,
    anchor: np.ndarray | None = None,
) -> GradientEstimate:
    """Batched two-point estimate with ``b`` draws from ``scheme``.

    For a DAP scheme with the exact-gradient policy the anchor defaults to
    the objective's gradient oracle at ``x``; an explicit ``anchor``
    overrides it.  The estimated-gradient policy is not a plain batch;
    use :func:`dap_pipeline` for it.
    """
    if b < 1:
        raise ValueError(f"batch size must be >= 1, got {b}")
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    x = np.asarray(x, dtype=float)
    if scheme.kind is SchemeKind.DAP and anchor is None:
        if scheme.dap_anchor_policy is AnchorPolicy.ESTIMATED_GRADIENT:
            raise ValueError("estimated-anchor DAP requires dap_pipeline, not batched")
        if obj.grad_oracle is None:
            raise ValueError("exact-anchor DAP requires a gradient oracle or explicit anchor")
        anchor = obj.grad_oracle(x)
    seed = rng.seed
    vs = draw(scheme, x.shape[0], rng, size=b, anchor=anchor)
    grad = _batched_from_draws(obj, x, vs, mu)
    return GradientEstimate(
        gradient=grad, mu=mu, batch=b, evals=b + 1, scheme_name=scheme.name, seed=seed
    )


def dap_pipeline(
    obj: Objective,
    x: np.ndarray,
    b: int,
    mu: float,
    delta: float,
    rng: RngStream,
) -> GradientEstimate:
    """Two-stage estimate: b/2 sphere draws anchor b/2 aligned draws.

    Stage one estimates the gradient with uniform sphere perturbations;
    stage two draws directionally aligned perturbations anchored at that
    estimate and forms a second batched estimate.  The result is the
    average of the two stage estimates, at a cost of ``b + 2`` function
    evaluations.  ``b`` must be even (the stages split evenly).
    """
    if b < 2 or b % 2 != 0:
        raise ValueError(f"pipeline batch size must be even and >= 2, got {b}")
    x = np.asarray(x, dtype=float)
    half = b // 2
    seed = rng.seed
    sphere = PerturbationScheme(SchemeKind.UNIFORM_SPHERE, delta=delta)
    stage1 = batched(obj, x, sphere, half, mu, rng)
    dap = PerturbationScheme(SchemeKind.DAP, delta=delta)
    vs = draw(dap, x.shape[0], rng, size=half, anchor=stage1.gradient)
    stage2 = _batched_from_draws(obj, x, vs, mu)
    grad = 0.5 * (stage1.gradient + stage2)
    return GradientEstimate(
        gradient=grad, mu=mu, batch=b, evals=b + 2, scheme_name="dap_estimated", seed=seed
    )
