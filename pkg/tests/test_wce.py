import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpman import gp
from gpman.kernels import KernelSpec, gram, gram_diag, intrinsic_weights
from gpman.wce import (EXTRINSIC_APPROX, INTRINSIC_APPROX, INTRINSIC_EXACT, WceField,
                       prior_worst_case, spatial_stats, wce_extrinsic_approx, wce_intrinsic,
                       wce_spatial_stats, wce_trace_mean)
from tests.test_kernels import analytic_circle_spectrum

NOISE = 0.0005


def test_no_data_is_prior(sphere3_spectrum, sphere_kernel):
    t = np.arange(642)
    f = wce_intrinsic(sphere_kernel, sphere3_spectrum, [], t, NOISE)
    np.testing.assert_allclose(f.values, gram_diag(sphere_kernel, sphere3_spectrum, t), rtol=1e-12)
    np.testing.assert_allclose(prior_worst_case(sphere_kernel, sphere3_spectrum, t), f.values)
    assert f.model_tag == INTRINSIC_EXACT


def test_matches_posterior_variance(sphere3_spectrum, sphere_kernel, rng):
    x = rng.choice(642, 80, replace=False)
    t = np.arange(642)
    f = wce_intrinsic(sphere_kernel, sphere3_spectrum, x, t, NOISE)
    fit = gp.fit(sphere_kernel, sphere3_spectrum, gp.Dataset(x, np.zeros(80), NOISE))
    np.testing.assert_allclose(f.values, gp.predict_variance(fit, t), atol=1e-10)
    assert np.all(f.values <= gram_diag(sphere_kernel, sphere3_spectrum, t) + 1e-12)


def test_adding_point_never_hurts(circle_spectrum, circle_kernel, rng):
    order = rng.permutation(512)
    t = np.arange(512)
    prev = wce_intrinsic(circle_kernel, circle_spectrum, [], t, NOISE).values
    for k in range(1, 12):
        cur = wce_intrinsic(circle_kernel, circle_spectrum, order[:k], t, NOISE).values
        assert np.all(cur <= prev + 1e-9)
        prev = cur


@pytest.mark.parametrize("fixture,n_data", [("circle", 20), ("sphere3", 100)])
def test_self_consistency_full_rank(fixture, n_data, request):
    m = request.getfixturevalue(fixture)
    full = request.getfixturevalue(fixture + "_spectrum")
    J = 32 if fixture == "circle" else 100
    sp = full.truncated(J)
    spec = KernelSpec("intrinsic", 2.5, 1.0 if fixture == "circle" else 0.25, 1.0, J, m.dim)
    x = np.sort(np.random.default_rng(1).choice(m.n_vertices, n_data, replace=False))
    t = np.arange(m.n_vertices)
    exact = wce_intrinsic(spec, sp, x, t, NOISE)
    approx = wce_extrinsic_approx(spec, spec, sp, x, t, t, NOISE)
    assert approx.model_tag == INTRINSIC_APPROX
    assert approx.metadata["rank"] == J
    np.testing.assert_allclose(approx.values, exact.values, atol=1e-6, rtol=0)


def rkhs_ball_error(spec, spectrum, x, t, noise, coeffs):
    """Expected squared error at t of the posterior mean for truths with given coefficients."""
    sw = intrinsic_weights(spec, spectrum)
    mu = spec.variance * sw.weights / sw.normalizer
    F = spectrum.eigenvectors[:, :spec.truncation]
    fit = gp.fit(spec, spectrum, gp.Dataset(x, np.zeros(len(x)), noise))
    Ktx = gram(spec, spectrum, [t], x)
    import scipy.linalg
    alpha = scipy.linalg.cho_solve((fit.chol, True), Ktx.T).ravel()
    out = []
    for c in coeffs:
        c = c / math.sqrt(np.sum(c * c / mu))  # unit RKHS norm
        f = F @ c
        out.append((alpha @ f[x] - f[t]) ** 2 + noise * alpha @ alpha)
    return np.array(out), mu, F, alpha


def test_monte_carlo_rkhs_bound(circle_spectrum, circle_kernel):
    x = np.arange(0, 512, 40)
    t = 17
    v = wce_intrinsic(circle_kernel, circle_spectrum, x, [t], NOISE).values[0]
    r = np.random.default_rng(5)
    sw = intrinsic_weights(circle_kernel, circle_spectrum)
    coeffs = r.standard_normal((100, 32)) * np.sqrt(sw.weights)
    errs, mu, F, alpha = rkhs_ball_error(circle_kernel, circle_spectrum, x, t, NOISE, coeffs)
    assert errs.max() <= v + 1e-6
    # the supremum is attained by the normalized residual representer
    g = mu * (F[t] - alpha @ F[x])
    best, *_ = rkhs_ball_error(circle_kernel, circle_spectrum, x, t, NOISE, [g])
    assert best[0] == pytest.approx(v, rel=1e-8)


def test_hand_sized_oracle(circle_spectrum, circle_kernel):
    xp, x, t, noise = [3, 150, 333], [40], [222], 0.01
    eval_spec = KernelSpec("extrinsic", 1.5, 0.8)
    coords = _circle_coords()
    got = wce_extrinsic_approx(eval_spec, circle_kernel, circle_spectrum, x, t, xp, noise,
                               coords).values[0]
    mpmath.mp.dps = 40
    C = lambda a, b: mpmath.mpf(float(gram(circle_kernel, circle_spectrum, [a], [b])[0, 0]))
    r_tx = float(np.linalg.norm(coords[t[0]] - coords[x[0]]))
    s3 = mpmath.sqrt(3) * r_tx / mpmath.mpf(0.8)
    k_tx = (1 + s3) * mpmath.exp(-s3)
    alpha = k_tx / (1 + noise)  # single datum: K_XX = 1
    g = mpmath.matrix([C(p, t[0]) - alpha * C(p, x[0]) for p in xp])
    Cpp = mpmath.matrix([[C(a, b) for b in xp] for a in xp])
    ref = (g.T * mpmath.inverse(Cpp) * g)[0] + noise * alpha**2
    assert got == pytest.approx(float(ref), rel=1e-12, abs=1e-12)


def _circle_coords():
    from gpman.mesh import gen_circle
    return gen_circle(512).vertices


def test_no_data_extrinsic_reduction(circle_spectrum, circle_kernel):
    xp = np.arange(0, 512, 4)
    f = wce_extrinsic_approx(KernelSpec("extrinsic", 3.0, 1.0), circle_kernel, circle_spectrum,
                             [], xp, xp, NOISE, _circle_coords())
    np.testing.assert_allclose(f.values, gram_diag(circle_kernel, circle_spectrum, xp),
                               rtol=1e-8)


def test_trace_mean_matches_pointwise(circle_spectrum, circle_kernel):
    r = np.random.default_rng(2)
    x = np.sort(r.choice(512, 20, replace=False))
    xp = np.sort(r.choice(512, 128, replace=False))
    coords = _circle_coords()
    for spec in (circle_kernel, KernelSpec("extrinsic", 3.0, 0.7)):
        pointwise = wce_extrinsic_approx(spec, circle_kernel, circle_spectrum, x, xp, xp,
                                         NOISE, coords)
        trace = wce_trace_mean(spec, circle_kernel, circle_spectrum, x, xp, NOISE, coords)
        assert abs(trace - pointwise.mean) <= 1e-10
        mean, std = wce_spatial_stats(spec, circle_kernel, circle_spectrum, x, xp, NOISE, coords)
        assert mean == trace and std == pointwise.spatial_std


def test_constant_field_has_zero_spatial_std():
    sp = analytic_circle_spectrum(64, 11)
    spec = KernelSpec("intrinsic", 2.5, 1.0, 1.0, 11, 1)
    f = wce_intrinsic(spec, sp, [], np.arange(64), NOISE)
    assert f.spatial_std < 1e-12
    assert f.mean == pytest.approx(1.0, rel=1e-12)


def test_variance_scaling_is_linear(circle_spectrum, circle_kernel):
    xp = np.arange(0, 512, 8)
    base = wce_extrinsic_approx(circle_kernel, circle_kernel, circle_spectrum, [], xp, xp, NOISE)
    big = circle_kernel.with_variance(2.0)
    scaled = wce_extrinsic_approx(big, big, circle_spectrum, [], xp, xp, NOISE)
    assert scaled.mean == pytest.approx(2.0 * base.mean, rel=1e-10)


def test_noise_term_isolated(circle_spectrum, circle_kernel):
    r = np.random.default_rng(4)
    x = np.sort(r.choice(512, 15, replace=False))
    xp = np.sort(r.choice(512, 64, replace=False))
    t = np.arange(512)
    spec = KernelSpec("extrinsic", 3.0, 0.9)
    coords = _circle_coords()
    with_noise = wce_extrinsic_approx(spec, circle_kernel, circle_spectrum, x, t, xp, NOISE,
                                      coords)
    without = wce_extrinsic_approx(spec, circle_kernel, circle_spectrum, x, t, xp, NOISE, coords,
                                   include_noise=False)
    fit = gp.fit(spec, coords, gp.Dataset(x, np.zeros(15), NOISE))
    import scipy.linalg
    alpha = scipy.linalg.cho_solve((fit.chol, True), gram(spec, coords, t, x).T).T
    np.testing.assert_allclose(with_noise.values - without.values,
                               NOISE * np.sum(alpha**2, axis=1), atol=1e-12)


def test_gap_shrinks_on_nested_xprime(sphere3_spectrum, sphere_kernel):
    r = np.random.default_rng(9)
    x = np.sort(r.choice(642, 60, replace=False))
    order = r.permutation(642)
    t = np.arange(642)
    exact = wce_intrinsic(sphere_kernel, sphere3_spectrum, x, t, NOISE).values
    gaps = []
    for size in (30, 60, 100):
        approx = wce_extrinsic_approx(sphere_kernel, sphere_kernel, sphere3_spectrum, x, t,
                                      order[:size], NOISE)
        gaps.append(np.abs(exact - approx.values).mean())
    assert gaps[0] >= gaps[1] - 1e-10 and gaps[1] >= gaps[2] - 1e-10


def test_extrinsic_tag_and_metadata(dumbbell_small, dumbbell_small_spectrum):
    spec_i = KernelSpec("intrinsic", 2.5, 2.0, 1.0, 80, 1)
    spec_e = KernelSpec("extrinsic", 3.0, 1.0)
    f = wce_extrinsic_approx(spec_e, spec_i, dumbbell_small_spectrum, [1, 50, 100],
                             np.arange(400), np.arange(0, 400, 9), NOISE, dumbbell_small.vertices)
    assert f.model_tag == EXTRINSIC_APPROX
    assert f.metadata["xprime_size"] == 45 and f.metadata["rank_rtol"] == 1e-10
    assert np.all(f.values >= 0)
    mean, std = spatial_stats(f.values)
    assert abs(mean - f.mean) <= 1e-12 and abs(std - f.spatial_std) <= 1e-12


def test_errors(circle_spectrum, circle_kernel):
    with pytest.raises(ValueError):
        wce_extrinsic_approx(circle_kernel, circle_kernel, circle_spectrum, [1], [2], [], NOISE)
    with pytest.raises(ValueError):
        wce_extrinsic_approx(KernelSpec("extrinsic", 1.5, 1.0), circle_kernel, circle_spectrum,
                             [1], [2], [3], NOISE)
    with pytest.raises(ValueError):
        wce_intrinsic(KernelSpec("extrinsic", 1.5, 1.0), circle_spectrum, [1], [2], NOISE)
    with pytest.raises(ValueError):
        wce_intrinsic(circle_kernel, circle_spectrum, [1, 1], [2], NOISE)


def test_negative_clamp():
    f = WceField.from_values(INTRINSIC_EXACT, [0, 1], [-5e-11, 0.5])
    assert f.values[0] == 0.0
    with pytest.raises(ArithmeticError):
        WceField.from_values(INTRINSIC_EXACT, [0, 1], [-1e-6, 0.5])


@settings(max_examples=25, deadline=None)
@given(values=st.lists(st.floats(0, 10), min_size=1, max_size=50))
def test_spatial_stats_recomputable(values):
    f = WceField.from_values(INTRINSIC_EXACT, np.arange(len(values)), values)
    v = np.array(values)
    assert f.mean == pytest.approx(v.mean(), abs=1e-12)
    assert f.spatial_std == pytest.approx(v.std(), abs=1e-12)
