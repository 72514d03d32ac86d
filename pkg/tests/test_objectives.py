"""Tests for the benchmark objectives, Poisson solver, and mesh objective."""

import math

import numpy as np
import pytest

from zopt.objectives import (
    InvalidMeshError,
    MeshProblem,
    QuadraticSpec,
    affine,
    fd_gradient,
    mesh_objective,
    poisson_solve,
    product,
    project_to_feasible,
    quadratic,
    quadratic_from_matrix,
    squared_norm,
)
from zopt.perturb import RngStream

# loss of the uniform 10x10 coarse mesh against the 20x20 fine solution,
# frozen after the first verified computation
UNIFORM_MESH_BASELINE = 0.00019403271792522991


class TestQuadratic:
    def test_hand_example(self):
        obj = quadratic_from_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
        x = np.array([1.0, 2.0])
        assert obj.eval(x) == pytest.approx(2.0)
        assert np.allclose(obj.grad_oracle(x), [2.0, 1.0])

    def test_identity_matrix(self):
        obj = quadratic_from_matrix(np.eye(2))
        assert np.allclose(obj.grad_oracle(np.array([1.0, 1.0])), [2.0, 2.0])

    def test_sparsity_mask_zeroes_effective_gradient(self):
        spec = QuadraticSpec(matrix_seed=7, dim=16, sparsity_mask=tuple(range(8)))
        obj = quadratic(spec)
        x = RngStream(1).uniforms(16) + 0.5
        g = obj.grad_oracle(x)
        assert np.all(g[:8] == 0.0)
        assert np.all(np.abs(g[8:]) > 1e-4)
        # masked coordinates do not influence the value
        y = x.copy()
        y[:8] = 123.0
        assert obj.eval(y) == obj.eval(x)

    def test_seeded_matrix_reproducible(self):
        spec = QuadraticSpec(matrix_seed=3, dim=4)
        a = quadratic(spec)
        b = quadratic(spec)
        x = np.array([0.3, -1.0, 2.0, 0.1])
        assert a.eval(x) == b.eval(x)

    def test_batch_matches_scalar(self):
        spec = QuadraticSpec(matrix_seed=5, dim=6, sparsity_mask=(1, 4))
        obj = quadratic(spec)
        xs = RngStream(2).normals((10, 6))
        batch = obj.eval_batch(xs)
        assert np.allclose(batch, [obj.eval(x) for x in xs], rtol=1e-13)

    def test_mask_out_of_range(self):
        with pytest.raises(ValueError):
            QuadraticSpec(matrix_seed=0, dim=4, sparsity_mask=(7,))


class TestProduct:
    def test_hand_example(self):
        obj = product(3)
        x = np.array([2.0, 3.0, 4.0])
        assert obj.eval(x) == pytest.approx(24.0)
        assert np.allclose(obj.grad_oracle(x), [12.0, 8.0, 6.0])

    def test_two_zero_factors(self):
        obj = product(3)
        assert np.allclose(obj.grad_oracle(np.array([0.0, 0.0, 4.0])), np.zeros(3))

    def test_extreme_sparsity(self):
        obj = product(3)
        g = obj.grad_oracle(np.array([0.0, 3.0, 4.0]))
        assert np.allclose(g, [12.0, 0.0, 0.0])

    def test_needs_two_dims(self):
        with pytest.raises(ValueError):
            product(1)


class TestFdGradient:
    def test_quadratic(self):
        g = fd_gradient(squared_norm(2), np.array([1.0, 0.0]), 1e-5)
        assert np.allclose(g, [2.0, 0.0], atol=1e-8)

    def test_product_matches_oracle(self):
        obj = product(3)
        x = np.array([2.0, 3.0, 4.0])
        g = fd_gradient(obj, x, 1e-5)
        assert np.allclose(g, obj.grad_oracle(x), rtol=1e-6)

    def test_constant(self):
        const = affine(np.zeros(3), intercept=4.2)
        assert np.all(np.abs(fd_gradient(const, np.ones(3), 1e-5)) <= 1e-10)

    def test_positive_step_required(self):
        with pytest.raises(ValueError):
            fd_gradient(squared_norm(2), np.zeros(2), 0.0)


@pytest.mark.parametrize(
    "make",
    [
        lambda: quadratic(QuadraticSpec(matrix_seed=7, dim=16, sparsity_mask=tuple(range(8)))),
        lambda: quadratic(QuadraticSpec(matrix_seed=9, dim=8)),
        lambda: product(6),
        lambda: squared_norm(5),
        lambda: affine(np.arange(1.0, 5.0)),
    ],
)
def test_oracle_matches_finite_differences(make):
    # oracle vs central differences at 100 points with entries in [0.5, 1.5]
    obj = make()
    rng = RngStream(314)
    points = 0.5 + rng.uniforms((100, obj.dim))
    for x in points:
        fd = fd_gradient(obj, x, 1e-5)
        oracle = obj.grad_oracle(x)
        assert np.allclose(fd, oracle, rtol=1e-6, atol=1e-6)


class TestPoissonSolve:
    def test_symmetry_and_maximum_principle(self):
        g = np.linspace(0.0, 1.0, 10)
        phi = poisson_solve(g, g, 1.0, 0.0)
        assert np.allclose(phi, phi.T, atol=1e-13)
        assert np.allclose(phi, phi[::-1, :], atol=1e-13)
        assert np.allclose(phi, phi[:, ::-1], atol=1e-13)
        assert np.all(phi[1:-1, 1:-1] < 0.0)
        assert np.all(phi[0, :] == 0.0)

    def test_manufactured_solution_second_order(self):
        def source(x, y):
            return -2.0 * math.pi**2 * np.sin(math.pi * x) * np.sin(math.pi * y)

        errors = []
        for n in (17, 33):
            g = np.linspace(0.0, 1.0, n)
            phi = poisson_solve(g, g, source, 0.0)
            exact = np.sin(math.pi * g)[:, None] * np.sin(math.pi * g)[None, :]
            errors.append(float(np.max(np.abs(phi - exact))))
        ratio = errors[0] / errors[1]
        assert 3.5 <= ratio <= 4.5

    def test_constant_boundary_harmonic(self):
        g = np.linspace(0.0, 1.0, 8)
        phi = poisson_solve(g, g, 0.0, 7.0)
        assert np.allclose(phi, 7.0, atol=1e-11)

    def test_discrete_residual(self):
        # the discrete operator applied to the solution reproduces the source
        gx = np.concatenate([[0.0], np.sort(RngStream(6).uniforms(6)) * 0.8 + 0.1, [1.0]])
        gy = np.linspace(0.0, 1.0, 9)
        phi = poisson_solve(gx, gy, 1.0, 0.0)
        from zopt.objectives import _laplacian_matrix

        mat = _laplacian_matrix(gx, gy)
        residual = mat @ phi[1:-1, 1:-1].ravel() - np.ones((gx.size - 2) * (gy.size - 2))
        assert np.max(np.abs(residual)) <= 1e-10

    def test_non_monotone_grid_rejected(self):
        g = np.array([0.0, 0.6, 0.4, 1.0])
        with pytest.raises(InvalidMeshError):
            poisson_solve(g, np.linspace(0, 1, 4), 1.0, 0.0)

    def test_wrong_span_rejected(self):
        g = np.array([0.0, 0.3, 0.9])
        with pytest.raises(InvalidMeshError):
            poisson_solve(g, g, 1.0, 0.0)


class TestFeasibilityProjection:
    def test_feasible_input_fixed(self):
        prob = MeshProblem()
        z = prob.uniform_point()
        assert np.array_equal(project_to_feasible(z, 10), z)

    def test_sorts_and_separates(self):
        z = MeshProblem().uniform_point()
        z[0], z[3] = 0.9, 0.05
        out = project_to_feasible(z, 10)
        gx = np.concatenate([[0.0], out[:8], [1.0]])
        gy = np.concatenate([[0.0], out[8:], [1.0]])
        assert np.all(np.diff(gx) >= 1e-3 - 1e-12)
        assert np.all(np.diff(gy) >= 1e-3 - 1e-12)

    def test_out_of_range_clamped(self):
        z = np.concatenate([np.linspace(-2.0, 3.0, 8), np.linspace(-1.0, 2.0, 8)])
        out = project_to_feasible(z, 10)
        assert np.all(out > 0.0)
        assert np.all(out < 1.0)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            project_to_feasible(np.zeros(5), 10)


class TestMeshObjective:
    def test_baseline_regression(self):
        prob = MeshProblem()
        obj = mesh_objective(prob)
        loss = obj.eval(prob.uniform_point())
        assert loss == pytest.approx(UNIFORM_MESH_BASELINE, rel=1e-9)

    def test_deterministic_bits(self):
        prob = MeshProblem()
        obj = mesh_objective(prob)
        z = prob.uniform_point()
        assert obj.eval(z) == obj.eval(z)

    def test_loss_nonnegative(self):
        prob = MeshProblem()
        obj = mesh_objective(prob)
        zs = prob.uniform_point()[None, :] + 0.05 * RngStream(8).normals((16, 16))
        assert np.all(obj.eval_batch(zs) >= 0.0)

    def test_invariant_under_projection(self):
        prob = MeshProblem()
        obj = mesh_objective(prob)
        z = prob.uniform_point() + 0.03 * RngStream(9).normals(16)
        assert obj.eval(z) == obj.eval(project_to_feasible(z, 10))

    def test_batch_matches_scalar(self):
        prob = MeshProblem()
        obj = mesh_objective(prob)
        zs = prob.uniform_point()[None, :] + 0.02 * RngStream(10).normals((4, 16))
        batch = obj.eval_batch(zs)
        assert np.array_equal(batch, np.array([obj.eval(z) for z in zs]))

    def test_dimension_follows_grid(self):
        assert MeshProblem(coarse_n=6).dim == 8
        assert mesh_objective(MeshProblem(coarse_n=6)).dim == 8

    def test_invalid_problem(self):
        with pytest.raises(ValueError):
            MeshProblem(coarse_n=2)
        with pytest.raises(ValueError):
            MeshProblem(min_gap=0.2)
