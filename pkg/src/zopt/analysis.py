"""Variance bounds and error metrics for two-point gradient estimates.

The central quantities: for any perturbation law with ``E[v v^T] = delta I``
and a direction ``a``, the fourth-moment form ``E[a^T (v v^T)^2 a]`` is
bounded below by ``d delta^2 |a|^2`` and above by an expression in the
excess fourth moment ``rho = E|v|^4 - delta^2 d^2``.  In the small-step
limit the estimator's mean squared error attains the floor
``(delta^2 d - 2 delta + 1) |grad f|^2`` exactly when either the sample
norm or the alignment with the gradient is constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .objectives import Objective
from .perturb import AnchorPolicy, PerturbationScheme, RngStream, SchemeKind, draw

__all__ = [
    "TauMask",
    "VarianceBounds",
    "MseSummary",
    "variance_lower_bound",
    "variance_upper_bound",
    "variance_bounds",
    "min_variance_mse",
    "mse",
    "tau_mse",
    "empirical_estimator_mse",
]


@dataclass(frozen=True)
class TauMask:
    """Coordinate mask keeping entries where the reference exceeds tau."""

    tau: float
    mask: np.ndarray

    @classmethod
    def from_reference(cls, reference: np.ndarray, tau: float) -> "TauMask":
        if tau < 0:
            raise ValueError("tau must be nonnegative")
        reference = np.asarray(reference, dtype=float)
        return cls(tau=float(tau), mask=np.abs(reference) > tau)


@dataclass(frozen=True)
class VarianceBounds:
    """Lower/upper bounds on the fourth-moment form, plus the MSE floor."""

    lower: float
    upper: float
    min_mse: float


def variance_lower_bound(a: np.ndarray, delta: float, d: int) -> float:
    """Lower bound ``d * delta^2 * |a|^2`` on ``E[a^T (v v^T)^2 a]``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (d,):
        raise ValueError(f"direction has shape {a.shape}, expected ({d},)")
    return d * delta * delta * float(a @ a)


def variance_upper_bound(a: np.ndarray, delta: float, d: int, rho: float) -> float:
    """Upper bound on ``E[a^T (v v^T)^2 a]`` in terms of the excess moment.

    ``delta^2 d |a|^2 + |a|^2/2 * rho + |a|^2/2 * sqrt(rho^2 + 4 delta^2 (d-1) rho)``.
    """
    if rho < 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    a = np.asarray(a, dtype=float)
    norm_sq = float(a @ a)
    return (
        delta * delta * d * norm_sq
        + 0.5 * norm_sq * rho
        + 0.5 * norm_sq * math.sqrt(rho * rho + 4.0 * delta * delta * (d - 1) * rho)
    )


def variance_bounds(a: np.ndarray, delta: float, d: int, rho: float) -> VarianceBounds:
    a = np.asarray(a, dtype=float)
    return VarianceBounds(
        lower=variance_lower_bound(a, delta, d),
        upper=variance_upper_bound(a, delta, d, rho),
        min_mse=min_variance_mse(float(a @ a), delta, d),
    )


def min_variance_mse(grad_norm_sq: float, delta: float, d: int) -> float:
    """Small-step MSE floor ``(delta^2 d - 2 delta + 1) * |grad|^2``."""
    if grad_norm_sq < 0:
        raise ValueError("grad_norm_sq must be nonnegative")
    return (delta * delta * d - 2.0 * delta + 1.0) * grad_norm_sq


def mse(est: np.ndarray, truth: np.ndarray) -> float:
    """Squared Euclidean distance between an estimate and the truth."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    diff = est - truth
    return float(diff @ diff)


def tau_mse(est: np.ndarray, truth: np.ndarray, tau: float) -> float:
    """MSE restricted to coordinates where ``|truth_i| > tau`` strictly."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    mask = np.abs(truth) > tau
    diff = (est - truth)[mask]
    return float(diff @ diff)


@dataclass(frozen=True)
class MseSummary:
    """Mean and standard error of single-draw estimator errors."""

    scheme_name: str
    n: int
    mean_mse: float
    se_mse: float
    mean_tau_mse: float | None = None
    se_tau_mse: float | None = None


def empirical_estimator_mse(
    obj: Objective,
    x: np.ndarray,
    scheme: PerturbationScheme,
    mu: float,
    n: int,
    rng: RngStream,
    tau: float | None = None,
    chunk: int = 1 << 17,
) -> MseSummary:
    """Monte Carlo MSE of single-draw two-point estimates against the oracle.

    Draws ``n`` independent perturbations, forms the single-draw estimate
    for each, and summarizes the squared error (and the tau-masked squared
    error when ``tau`` is given) by mean and standard error.  DAP schemes
    are anchored at the exact oracle gradient; the estimated-anchor policy
    has no single-draw form and is rejected.
    """
    if obj.grad_oracle is None:
        raise ValueError("empirical MSE requires a gradient oracle")
    if n < 2:
        raise ValueError("n must be at least 2")
    if not mu > 0:
        raise ValueError("mu must be positive")
    if scheme.kind is SchemeKind.DAP and scheme.dap_anchor_policy is AnchorPolicy.ESTIMATED_GRADIENT:
        raise ValueError("estimated-anchor DAP has no single-draw estimator")
    x = np.asarray(x, dtype=float)
    grad = np.asarray(obj.grad_oracle(x), dtype=float)
    anchor = grad if scheme.kind is SchemeKind.DAP else None
    fx = float(obj.eval(x))
    mask = None if tau is None else (np.abs(grad) > tau)

    sums = np.zeros(2)
    sq_sums = np.zeros(2)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        vs = draw(scheme, x.shape[0], rng, size=m, anchor=anchor)
        if obj.eval_batch is not None:
            fvals = np.asarray(obj.eval_batch(x[None, :] + mu * vs), dtype=float)
        else:
            fvals = np.array([float(obj.eval(x + mu * v)) for v in vs])
        err = ((fvals - fx) / mu)[:, None] * vs - grad[None, :]
        sq = np.einsum("ij,ij->i", err, err)
        sums[0] += sq.sum()
        sq_sums[0] += (sq * sq).sum()
        if mask is not None:
            sq_tau = np.einsum("ij,ij->i", err[:, mask], err[:, mask])
            sums[1] += sq_tau.sum()
            sq_sums[1] += (sq_tau * sq_tau).sum()
        done += m

    def _mean_se(total: float, total_sq: float) -> tuple[float, float]:
        mean = total / n
        var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
        return mean, math.sqrt(var / n)

    mean_mse, se_mse = _mean_se(sums[0], sq_sums[0])
    if mask is None:
        return MseSummary(scheme.name, n, mean_mse, se_mse)
    mean_tau, se_tau = _mean_se(sums[1], sq_sums[1])
    return MseSummary(scheme.name, n, mean_mse, se_mse, mean_tau, se_tau)
