"""Tests for the perturbation samplers and their moment properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zopt.perturb import (
    AnchorPolicy,
    DegeneratePlaneError,
    MomentProfile,
    PerturbationScheme,
    RngStream,
    SchemeKind,
    draw,
    empirical_moment_profile,
    moment_profile,
    project_onto_hyperplane,
    sample_coordinate,
    sample_dap,
    sample_gaussian,
    sample_rademacher,
    sample_uniform_sphere,
)

ALL_NAMES = ["uniform", "rademacher", "coordinate", "gaussian", "dap_exact"]
CONSTANT_MAGNITUDE = [sample_uniform_sphere, sample_rademacher, sample_coordinate]


def _draws(name, d, delta, n, seed=0, anchor=None):
    scheme = PerturbationScheme.from_name(name, delta)
    if scheme.kind is SchemeKind.DAP and anchor is None:
        anchor = np.zeros(d)
        anchor[0] = 0.2
        anchor[min(1, d - 1)] = 2.0
    return draw(scheme, d, RngStream(seed), size=n, anchor=anchor)


class TestRngStream:
    def test_same_seed_same_draws(self):
        a = RngStream(123)
        b = RngStream(123)
        x1, x2 = a.normals((3, 4)), a.normals((2,))
        y1, y2 = b.normals((3, 4)), b.normals((2,))
        assert np.array_equal(x1, y1)
        assert np.array_equal(x2, y2)
        assert a.counter == b.counter == 2

    def test_different_seeds_differ(self):
        assert not np.array_equal(RngStream(1).normals(8), RngStream(2).normals(8))

    def test_counter_tracks_calls(self):
        rng = RngStream(0)
        rng.signs(4)
        rng.uniforms(3)
        rng.integers(0, 5, 2)
        assert rng.counter == 3

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            RngStream(-1)


class TestGaussian:
    def test_fourth_moment_d4(self):
        # E|v|^4 = d^2 + 2d = 24 at d=4, delta=1
        vs = sample_gaussian(4, 1.0, RngStream(11), size=1_000_000)
        m4 = np.mean(np.sum(vs * vs, axis=1) ** 2)
        assert m4 == pytest.approx(24.0, rel=0.02)

    def test_unit_variance_d1(self):
        vs = sample_gaussian(1, 1.0, RngStream(12), size=1_000_000)
        assert np.mean(vs**2) == pytest.approx(1.0, rel=0.02)

    def test_covariance_identity_d16(self):
        vs = sample_gaussian(16, 1.0, RngStream(13), size=100_000)
        cov = vs.T @ vs / vs.shape[0]
        assert np.linalg.norm(cov - np.eye(16)) <= 0.1

    @pytest.mark.parametrize("bad", [0, -3])
    def test_invalid_dimension(self, bad):
        with pytest.raises(ValueError):
            sample_gaussian(bad, 1.0, RngStream(0))

    def test_invalid_delta(self):
        with pytest.raises(ValueError):
            sample_gaussian(4, 0.0, RngStream(0))


class TestUniformSphere:
    def test_exact_norm(self):
        vs = sample_uniform_sphere(16, 1.0, RngStream(21), size=10_000)
        norms = np.sum(vs * vs, axis=1)
        assert np.max(np.abs(norms / 16.0 - 1.0)) <= 1e-12

    def test_fourth_moment_constant(self):
        vs = sample_uniform_sphere(16, 1.0, RngStream(22), size=10_000)
        m4 = np.sum(vs * vs, axis=1) ** 2
        assert np.max(np.abs(m4 / 256.0 - 1.0)) <= 1e-12

    def test_zero_mean_d2(self):
        vs = sample_uniform_sphere(2, 1.0, RngStream(23), size=1_000_000)
        assert np.all(np.abs(vs.mean(axis=0)) <= 0.01)


class TestRademacher:
    def test_values_on_cube(self):
        vs = sample_rademacher(3, 1.0, RngStream(31), size=1000)
        assert set(np.unique(vs)) == {-1.0, 1.0}

    def test_trace_identity(self):
        # E[Tr((vv^T)^2)] = sum_i E[v_i^4] + d(d-1) = 16 + 240 = 256 at d=16
        vs = sample_rademacher(16, 1.0, RngStream(32), size=100_000)
        trace = np.mean(np.sum(vs * vs, axis=1) ** 2)
        assert trace == pytest.approx(256.0, rel=0.02)

    def test_scaling(self):
        vs = sample_rademacher(1, 4.0, RngStream(33), size=500)
        assert set(np.unique(np.abs(vs))) == {2.0}


class TestCoordinate:
    def test_one_hot_positive(self):
        vs = sample_coordinate(4, 1.0, RngStream(41), size=2000)
        nonzero = np.count_nonzero(vs, axis=1)
        assert np.all(nonzero == 1)
        assert np.all(vs.max(axis=1) == 2.0)

    def test_frequencies(self):
        vs = sample_coordinate(4, 1.0, RngStream(42), size=100_000)
        freqs = (vs != 0).mean(axis=0)
        assert np.all(np.abs(freqs - 0.25) <= 0.01)

    def test_d1(self):
        vs = sample_coordinate(1, 1.0, RngStream(43), size=100)
        assert np.all(vs == 1.0)


class TestProjection:
    def test_hand_example(self):
        out = project_onto_hyperplane(np.array([1.0, 1.0]), np.array([1.0, 0.0]), 0.5)
        assert np.allclose(out, [0.5, 1.0], rtol=0, atol=1e-15)

    def test_point_on_plane_unchanged(self):
        v = np.array([2.0, -1.0, 3.0])
        u = np.array([1.0, 1.0, 1.0])
        out = project_onto_hyperplane(v, u, float(u @ v))
        assert np.allclose(out, v, rtol=1e-15)

    def test_zero_normal(self):
        with pytest.raises(DegeneratePlaneError):
            project_onto_hyperplane(np.ones(3), np.zeros(3), 1.0)

    @given(
        st.integers(2, 8),
        st.integers(0, 2**32 - 1),
        st.floats(-10.0, 10.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_idempotent_and_on_plane(self, d, seed, c):
        rng = RngStream(seed)
        v = 10.0 * rng.normals(d)
        u = rng.normals(d)
        if np.linalg.norm(u) < 1e-3:
            u[0] += 1.0
        w = project_onto_hyperplane(v, u, c)
        scale = max(1.0, abs(c), abs(float(u @ v)))
        assert abs(float(u @ w) - c) <= 1e-12 * scale
        again = project_onto_hyperplane(w, u, c)
        assert np.allclose(again, w, rtol=0, atol=1e-12 * max(1.0, float(np.max(np.abs(w)))))


class TestDap:
    def test_alignment_unit_anchor(self):
        a = np.array([1.0, 0.0])
        vs = sample_dap(a, 2, 1.0, RngStream(51), size=20_000)
        assert np.max(np.abs(np.abs(vs[:, 0]) - 1.0)) <= 1e-9

    def test_alignment_diagonal_anchor(self):
        a = np.array([1.0, 1.0])
        vs = sample_dap(a, 2, 1.0, RngStream(52), size=20_000)
        dots = vs @ a
        assert np.max(np.abs(np.abs(dots) - math.sqrt(2.0))) <= 1e-9

    def test_covariance_identity_figure_anchor(self):
        a = np.array([0.2, 2.0])
        vs = sample_dap(a, 2, 1.0, RngStream(53), size=100_000)
        cov = vs.T @ vs / vs.shape[0]
        assert np.linalg.norm(cov - np.eye(2)) <= 0.05

    def test_zero_anchor_falls_back_to_sphere(self):
        vs = sample_dap(np.zeros(8), 8, 1.0, RngStream(54), size=1000)
        norms = np.sum(vs * vs, axis=1)
        assert np.max(np.abs(norms / 8.0 - 1.0)) <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sample_dap(np.ones(3), 2, 1.0, RngStream(0))


class TestSchemeAndDraw:
    def test_from_name_round_trip(self):
        for name in ALL_NAMES + ["dap_estimated"]:
            scheme = PerturbationScheme.from_name(name, 0.5)
            assert scheme.name == name
            assert scheme.delta == 0.5

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            PerturbationScheme.from_name("levy")

    def test_dap_requires_anchor(self):
        with pytest.raises(ValueError):
            draw(PerturbationScheme(SchemeKind.DAP), 2, RngStream(0))

    def test_nonpositive_delta(self):
        with pytest.raises(ValueError):
            PerturbationScheme(SchemeKind.GAUSSIAN, delta=-1.0)

    @pytest.mark.parametrize("name", ALL_NAMES)
    def test_determinism(self, name):
        assert np.array_equal(_draws(name, 8, 1.0, 100, seed=5), _draws(name, 8, 1.0, 100, seed=5))

    def test_single_sample_is_first_batch_row(self):
        one = sample_gaussian(4, 1.0, RngStream(9))
        row = sample_gaussian(4, 1.0, RngStream(9), size=3)[0]
        assert np.array_equal(one, row)


@pytest.mark.parametrize("d", [2, 8, 16])
@pytest.mark.parametrize("delta_kind", ["one", "inverse_d"])
@pytest.mark.parametrize("name", ALL_NAMES)
def test_delta_unbiasedness_grid(name, d, delta_kind):
    delta = 1.0 if delta_kind == "one" else 1.0 / d
    vs = _draws(name, d, delta, 100_000, seed=77)
    cov = vs.T @ vs / vs.shape[0]
    assert np.linalg.norm(cov / delta - np.eye(d)) <= 0.1


@pytest.mark.parametrize("d,delta", [(16, 1.0), (16, 1.0 / 16.0), (8, 1.0)])
@pytest.mark.parametrize("sampler", CONSTANT_MAGNITUDE)
def test_constant_magnitude_exact(sampler, d, delta):
    vs = sampler(d, delta, RngStream(88), size=5000)
    norms = np.sum(vs * vs, axis=1)
    assert np.max(np.abs(norms / (d * delta) - 1.0)) <= 1e-12


@pytest.mark.parametrize("name", ALL_NAMES)
def test_moment_lower_bound(name):
    # E|v|^4 >= delta^2 d^2 up to Monte Carlo error (skew term dropped)
    d, delta = 16, 1.0
    vs = _draws(name, d, delta, 200_000, seed=99)
    norm4 = np.sum(vs * vs, axis=1) ** 2
    m4 = float(np.mean(norm4))
    rel_se = float(np.std(norm4, ddof=1) / math.sqrt(norm4.shape[0])) / m4
    assert m4 >= (delta * d) ** 2 * (1.0 - 3.0 * rel_se) - 1e-9


class TestMomentProfile:
    def test_gaussian_profile(self):
        prof = moment_profile(PerturbationScheme.from_name("gaussian"), 4)
        assert prof.fourth_moment == pytest.approx(24.0)
        assert prof.rho == pytest.approx(8.0)

    def test_sphere_profile(self):
        prof = moment_profile(PerturbationScheme.from_name("uniform"), 16)
        assert prof.fourth_moment == pytest.approx(256.0)
        assert prof.rho == 0.0

    def test_constant_magnitude_profiles_scale(self):
        for name in ("rademacher", "coordinate"):
            prof = moment_profile(PerturbationScheme.from_name(name, 0.25), 8)
            assert prof.fourth_moment == pytest.approx((0.25 * 8) ** 2)
            assert prof.rho == 0.0

    def test_dap_profile_unknown(self):
        prof = moment_profile(PerturbationScheme.from_name("dap_exact"), 2)
        assert prof.fourth_moment is None
        assert prof.rho is None

    def test_dap_empirical_profile(self):
        scheme = PerturbationScheme.from_name("dap_exact")
        prof = empirical_moment_profile(scheme, 2, 1_000_000, RngStream(123), anchor=np.array([0.2, 2.0]))
        assert prof.fourth_moment >= 4.0
        assert prof.rho == pytest.approx(prof.fourth_moment - 4.0)
        # zero-mean scheme: skew stays near the origin
        assert np.all(np.abs(prof.empirical_skew_vector) <= 0.05)

    def test_profile_invariant_rho(self):
        prof = MomentProfile(fourth_moment=300.0, rho=44.0)
        assert prof.fourth_moment - 256.0 == pytest.approx(prof.rho)
