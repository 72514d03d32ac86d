"""Benchmark objectives with closed-form gradient oracles.

Provides the seeded quadratic ``x^T A x`` and coordinate-product benchmarks,
a central-difference gradient checker, a 2-D Poisson solver on tensor-product
grids with non-uniform spacing, and a mesh-adaptation objective that scores a
coarse grid by the maximum nodal gap to an interpolated fine-grid solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .perturb import RngStream

__all__ = [
    "Objective",
    "QuadraticSpec",
    "MeshProblem",
    "EvaluationError",
    "InvalidMeshError",
    "SolverError",
    "quadratic",
    "product",
    "affine",
    "squared_norm",
    "fd_gradient",
    "poisson_solve",
    "project_to_feasible",
    "mesh_objective",
]


class EvaluationError(RuntimeError):
    """An objective evaluation produced a non-finite value."""

    def __init__(self, message: str, point: np.ndarray):
        super().__init__(message)
        self.point = np.asarray(point)


class InvalidMeshError(ValueError):
    """Grid coordinates are not a valid tensor-product mesh."""


class SolverError(RuntimeError):
    """The discrete Poisson system could not be solved."""


@dataclass(frozen=True)
class Objective:
    """A scalar objective over R^d.

    ``eval`` maps a point to a value; ``eval_batch``, when present, maps an
    ``(n, d)`` array of points to ``(n,)`` values and lets estimators
    vectorize whole batches.  ``grad_oracle`` is the exact gradient where a
    closed form exists.  ``pure`` declares that concurrent evaluation at
    distinct points is safe.  ``smoothness_L`` is a Lipschitz constant of
    the gradient when known.
    """

    dim: int
    eval: Callable[[np.ndarray], float]
    grad_oracle: Callable[[np.ndarray], np.ndarray] | None = None
    eval_batch: Callable[[np.ndarray], np.ndarray] | None = None
    pure: bool = True
    smoothness_L: float | None = None
    name: str = ""

    def __call__(self, x: np.ndarray) -> float:
        return self.eval(x)


@dataclass(frozen=True)
class QuadraticSpec:
    """Recipe for a seeded quadratic benchmark ``f(x) = x^T A x``.

    ``A`` has i.i.d. entries uniform on [0, 1) drawn from ``matrix_seed``.
    Coordinates listed in ``sparsity_mask`` are forced to zero in every
    query point before evaluation, so the effective gradient is exactly
    zero along them.
    """

    matrix_seed: int
    dim: int
    sparsity_mask: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be positive")
        bad = [i for i in self.sparsity_mask if not 0 <= i < self.dim]
        if bad:
            raise ValueError(f"sparsity_mask entries out of range: {bad}")


def quadratic(spec: QuadraticSpec) -> Objective:
    """Quadratic objective with exact gradient oracle ``(A + A^T) x``."""
    d = spec.dim
    rng = RngStream(spec.matrix_seed)
    a_matrix = rng.uniforms((d, d))
    return quadratic_from_matrix(a_matrix, spec.sparsity_mask, name="quadratic")


def quadratic_from_matrix(
    a_matrix: np.ndarray, sparsity_mask: tuple[int, ...] = (), name: str = "quadratic"
) -> Objective:
    """Quadratic objective for an explicit matrix (testing convenience)."""
    a_matrix = np.asarray(a_matrix, dtype=float)
    d = a_matrix.shape[0]
    if a_matrix.shape != (d, d):
        raise ValueError("matrix must be square")
    mask = np.zeros(d, dtype=bool)
    mask[list(sparsity_mask)] = True
    keep = ~mask
    sym = a_matrix + a_matrix.T
    sym_masked = sym * keep[:, None] * keep[None, :]

    def _mask(x: np.ndarray) -> np.ndarray:
        return np.where(keep, x, 0.0)

    def f(x: np.ndarray) -> float:
        xm = _mask(np.asarray(x, dtype=float))
        return float(xm @ a_matrix @ xm)

    def grad(x: np.ndarray) -> np.ndarray:
        return sym_masked @ np.asarray(x, dtype=float)

    def f_batch(points: np.ndarray) -> np.ndarray:
        xm = np.asarray(points, dtype=float) * keep[None, :]
        return np.einsum("ni,ij,nj->n", xm, a_matrix, xm)

    return Objective(
        dim=d,
        eval=f,
        grad_oracle=grad,
        eval_batch=f_batch,
        smoothness_L=float(np.linalg.norm(sym_masked, 2)),
        name=name,
    )


def product(d: int) -> Objective:
    """Product objective ``f(x) = prod_i x_i`` with leave-one-out gradient."""
    if d < 2:
        raise ValueError("product objective needs d >= 2")

    def f(x: np.ndarray) -> float:
        return float(np.prod(np.asarray(x, dtype=float)))

    def grad(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.empty(d)
        for i in range(d):
            g[i] = np.prod(x[:i]) * np.prod(x[i + 1 :])
        return g

    def f_batch(points: np.ndarray) -> np.ndarray:
        return np.prod(np.asarray(points, dtype=float), axis=1)

    return Objective(dim=d, eval=f, grad_oracle=grad, eval_batch=f_batch, name="product")


def affine(weights: np.ndarray, intercept: float = 0.0) -> Objective:
    """Affine objective ``f(x) = w^T x + c``; its two-point estimates are exact."""
    w = np.asarray(weights, dtype=float)

    def f(x: np.ndarray) -> float:
        return float(w @ np.asarray(x, dtype=float) + intercept)

    def f_batch(points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ w + intercept

    return Objective(
        dim=w.shape[0],
        eval=f,
        grad_oracle=lambda x: w.copy(),
        eval_batch=f_batch,
        smoothness_L=0.0,
        name="affine",
    )


def squared_norm(d: int) -> Objective:
    """``f(x) = |x|^2``; gradient ``2x``, smooth with constant 2."""

    def f(x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ x)

    def f_batch(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.einsum("ni,ni->n", points, points)

    return Objective(
        dim=d,
        eval=f,
        grad_oracle=lambda x: 2.0 * np.asarray(x, dtype=float),
        eval_batch=f_batch,
        smoothness_L=2.0,
        name="squared_norm",
    )


def fd_gradient(obj: Objective, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient ``[f(x + h e_i) - f(x - h e_i)] / 2h``."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    g = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        step = np.zeros_like(x)
        step[i] = h
        fp = float(obj.eval(x + step))
        fm = float(obj.eval(x - step))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError("non-finite value in finite-difference stencil", x)
        g[i] = (fp - fm) / (2.0 * h)
    return g


# ---------------------------------------------------------------------------
# Poisson solver on tensor-product grids
# ---------------------------------------------------------------------------


def _second_difference_coeffs(grids: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Non-uniform 3-point second-derivative weights at interior nodes.

    ``grids`` has shape (..., n); returns (sub, diag, sup) of shape
    (..., n-2) with the weights on the left, center, and right neighbor.
    Exact for quadratics on any spacing.
    """
    h = np.diff(grids, axis=-1)
    hl = h[..., :-1]
    hr = h[..., 1:]
    sub = 2.0 / (hl * (hl + hr))
    sup = 2.0 / (hr * (hl + hr))
    diag = -2.0 / (hl * hr)
    return sub, diag, sup


def _tridiag(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray) -> np.ndarray:
    """Dense (batched) tridiagonal matrices from the stencil weights."""
    m = diag.shape[-1]
    out = np.zeros(diag.shape[:-1] + (m, m))
    idx = np.arange(m)
    out[..., idx, idx] = diag
    out[..., idx[1:], idx[:-1]] = sub[..., 1:]
    out[..., idx[:-1], idx[1:]] = sup[..., :-1]
    return out


def _laplacian_matrix(grid_x: np.ndarray, grid_y: np.ndarray) -> np.ndarray:
    """Dense interior Laplacian: Kronecker sum of the 1-D operators."""
    lx = _tridiag(*_second_difference_coeffs(grid_x))
    ly = _tridiag(*_second_difference_coeffs(grid_y))
    mx, my = lx.shape[-1], ly.shape[-1]
    return np.kron(lx, np.eye(my)) + np.kron(np.eye(mx), ly)


def _source_values(source, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if callable(source):
        return np.asarray(source(xs, ys), dtype=float) * np.ones(np.broadcast_shapes(xs.shape, ys.shape))
    return float(source) * np.ones(np.broadcast_shapes(xs.shape, ys.shape))


def _validate_grid(grid: np.ndarray, axis_name: str) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.shape[0] < 3:
        raise InvalidMeshError(f"{axis_name} grid needs at least 3 strictly increasing coordinates")
    if not np.all(np.diff(grid) > 0):
        raise InvalidMeshError(f"{axis_name} grid coordinates must be strictly increasing")
    if grid[0] != 0.0 or grid[-1] != 1.0:
        raise InvalidMeshError(f"{axis_name} grid must span [0, 1] with fixed endpoints")
    return grid


def poisson_solve(
    grid_x: np.ndarray,
    grid_y: np.ndarray,
    source=1.0,
    boundary: float = 0.0,
) -> np.ndarray:
    """Solve the 2-D Poisson equation ``lap(phi) = source`` on a tensor grid.

    Parameters
    ----------
    grid_x, grid_y:
        Strictly increasing node coordinates spanning [0, 1] with the
        endpoints fixed at 0 and 1.
    source:
        Right-hand side; a constant or a vectorized callable ``f(x, y)``.
    boundary:
        Constant Dirichlet value on the domain boundary.

    Returns
    -------
    A ``(len(grid_x), len(grid_y))`` array of nodal values, boundary
    nodes included.
    """
    grid_x = _validate_grid(grid_x, "x")
    grid_y = _validate_grid(grid_y, "y")
    # Constant Dirichlet data: solve the zero-boundary problem and shift,
    # since the Laplacian annihilates constants.
    mat = _laplacian_matrix(grid_x, grid_y)
    rhs = _source_values(source, grid_x[1:-1, None], grid_y[None, 1:-1])
    try:
        interior = np.linalg.solve(mat, rhs.ravel())
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"Poisson linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(interior)):
        raise SolverError("Poisson linear solve produced non-finite values")
    phi = np.full((grid_x.shape[0], grid_y.shape[0]), float(boundary))
    phi[1:-1, 1:-1] = interior.reshape(rhs.shape) + float(boundary)
    return phi


# ---------------------------------------------------------------------------
# Mesh-adaptation objective
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeshProblem:
    """Configuration of the coarse-vs-fine mesh adaptation benchmark.

    The decision vector holds the interior grid-line coordinates of the
    coarse tensor-product mesh, x lines first then y lines, so its
    dimension is ``2 * (coarse_n - 2)``.
    """

    coarse_n: int = 10
    fine_n: int = 20
    source: object = 1.0
    boundary: float = 0.0
    min_gap: float = 1e-3

    def __post_init__(self) -> None:
        if self.coarse_n < 3 or self.fine_n < 3:
            raise ValueError("grids need at least 3 lines per axis")
        if not self.min_gap > 0:
            raise ValueError("min_gap must be positive")
        if (self.coarse_n - 1) * self.min_gap >= 1.0:
            raise ValueError("min_gap too large for the number of grid lines")

    @property
    def dim(self) -> int:
        return 2 * (self.coarse_n - 2)

    def uniform_point(self) -> np.ndarray:
        """Decision vector of the uniform coarse mesh."""
        lines = np.linspace(0.0, 1.0, self.coarse_n)[1:-1]
        return np.concatenate([lines, lines])


def _project_lines(lines: np.ndarray, min_gap: float) -> np.ndarray:
    """Sort interior line coordinates and enforce min_gap spacing.

    Forward sweep with per-index caps so every line keeps enough headroom
    for the lines after it; gaps to the 0 and 1 boundaries are included.
    """
    k = lines.shape[-1]
    out = np.sort(lines, axis=-1)
    prev = np.zeros(out.shape[:-1])
    for i in range(k):
        cap = 1.0 - (k - i) * min_gap
        out[..., i] = np.minimum(np.maximum(out[..., i], prev + min_gap), cap)
        prev = out[..., i]
    return out


def project_to_feasible(z: np.ndarray, coarse_n: int, min_gap: float = 1e-3) -> np.ndarray:
    """Project a decision vector onto feasible strictly-increasing grids."""
    z = np.asarray(z, dtype=float)
    k = coarse_n - 2
    if z.shape[-1] != 2 * k:
        raise ValueError(f"decision vector must have length {2 * k}, got {z.shape[-1]}")
    out = np.array(z, dtype=float, copy=True)
    out[..., :k] = _project_lines(z[..., :k], min_gap)
    out[..., k:] = _project_lines(z[..., k:], min_gap)
    return out


def _interp_uniform_grid(values: np.ndarray, xq: np.ndarray, yq: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of ``values`` on the uniform [0,1] grid.

    ``values`` is (nf, nf); ``xq``/``yq`` are (b, n) query line positions.
    Returns (b, n, n) interpolated at the tensor product of the queries.
    """
    nf = values.shape[0]
    tx = np.clip(xq, 0.0, 1.0) * (nf - 1)
    kx = np.minimum(tx.astype(int), nf - 2)
    fx = tx - kx
    ty = np.clip(yq, 0.0, 1.0) * (nf - 1)
    ky = np.minimum(ty.astype(int), nf - 2)
    fy = ty - ky
    rows = (1.0 - fx)[:, :, None] * values[kx, :] + fx[:, :, None] * values[kx + 1, :]
    lo = np.take_along_axis(rows, ky[:, None, :], axis=2)
    hi = np.take_along_axis(rows, ky[:, None, :] + 1, axis=2)
    return (1.0 - fy)[:, None, :] * lo + fy[:, None, :] * hi


def _solve_interior_batch(grids_x: np.ndarray, grids_y: np.ndarray, source) -> np.ndarray:
    """Zero-boundary interior Poisson solves for a batch of tensor grids."""
    b = grids_x.shape[0]
    m = grids_x.shape[1] - 2
    lx = _tridiag(*_second_difference_coeffs(grids_x))
    ly = _tridiag(*_second_difference_coeffs(grids_y))
    eye = np.eye(m)
    mat = (
        lx[:, :, None, :, None] * eye[None, None, :, None, :]
        + eye[None, :, None, :, None] * ly[:, None, :, None, :]
    ).reshape(b, m * m, m * m)
    rhs = _source_values(source, grids_x[:, 1:-1, None], grids_y[:, None, 1:-1])
    try:
        interior = np.linalg.solve(mat, rhs.reshape(b, m * m, 1))[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"coarse-mesh linear solve failed: {exc}") from exc
    return interior.reshape(b, m, m)


def mesh_objective(problem: MeshProblem) -> Objective:
    """Maximum nodal gap between coarse and interpolated fine solutions.

    Evaluation projects the decision vector to a feasible grid, solves the
    Poisson problem on the resulting coarse mesh, bilinearly interpolates
    the cached fine-mesh solution at the coarse nodes, and returns the
    largest absolute nodal difference.  There is no gradient oracle; this
    objective is driven purely by function values.
    """
    k = problem.coarse_n - 2
    fine_lines = np.linspace(0.0, 1.0, problem.fine_n)
    fine = poisson_solve(fine_lines, fine_lines, problem.source, problem.boundary)
    # The constant boundary shift cancels in coarse-minus-fine differences,
    # so interior zero-boundary solves suffice for the coarse side.
    fine_shifted = fine - problem.boundary

    def _losses_block(points: np.ndarray) -> np.ndarray:
        z = project_to_feasible(points, problem.coarse_n, problem.min_gap)
        b = z.shape[0]
        n = problem.coarse_n
        ends = (np.zeros((b, 1)), np.ones((b, 1)))
        gx = np.concatenate([ends[0], z[:, :k], ends[1]], axis=1)
        gy = np.concatenate([ends[0], z[:, k:], ends[1]], axis=1)
        coarse = np.zeros((b, n, n))
        coarse[:, 1:-1, 1:-1] = _solve_interior_batch(gx, gy, problem.source)
        target = _interp_uniform_grid(fine_shifted, gx, gy)
        return np.max(np.abs(coarse - target), axis=(1, 2))

    def losses(points: np.ndarray) -> np.ndarray:
        # Chunked so huge batches keep the dense operator stacks bounded.
        points = np.asarray(points, dtype=float)
        chunk = 4096
        if points.shape[0] <= chunk:
            return _losses_block(points)
        return np.concatenate(
            [_losses_block(points[i : i + chunk]) for i in range(0, points.shape[0], chunk)]
        )

    def f(x: np.ndarray) -> float:
        return float(losses(np.asarray(x, dtype=float)[None, :])[0])

    return Objective(
        dim=problem.dim,
        eval=f,
        eval_batch=losses,
        name="mesh",
    )
