import math

import numpy as np
import pytest
import scipy.sparse as sparse

from gpman.mesh import DiscreteManifold, gen_circle, gen_dumbbell, gen_icosphere
from gpman.spectral import (ConvergenceError, Spectrum, block_lanczos, load_spectrum,
                            rayleigh_residuals, save_spectrum, solve_eigs,
                            spectrum_cache_key, weyl_check)


def circle_oracle(J):
    k = np.arange(J)
    return ((k + 1) // 2).astype(float) ** 2


def sphere_oracle(J):
    values = []
    l = 0
    while len(values) < J:
        values += [l * (l + 1.0)] * (2 * l + 1)
        l += 1
    return np.array(values[:J])


def mass_gram(spectrum, mass_diag):
    F = spectrum.eigenvectors
    return F.T @ (mass_diag[:, None] * F)


def test_circle_spectrum(circle):
    sp = solve_eigs(circle, 11)
    assert sp.eigenvalues[0] == 0.0
    np.testing.assert_allclose(sp.eigenvalues[1:], circle_oracle(11)[1:], rtol=0.01)


def test_sphere_spectrum():
    m = gen_icosphere(4)
    sp = solve_eigs(m, 16)
    np.testing.assert_allclose(sp.eigenvalues[1:], sphere_oracle(16)[1:], rtol=0.02)
    assert abs(sp.eigenvalues[0]) <= 1e-8 * sp.eigenvalues[1]
    np.testing.assert_allclose(mass_gram(sp, m.mass_diag), np.eye(16), atol=1e-8)


@pytest.mark.parametrize("make", [lambda: gen_circle(100), lambda: gen_icosphere(2),
                                  lambda: gen_dumbbell(60)])
def test_constant_mode(make):
    m = make()
    sp = solve_eigs(m, 1)
    np.testing.assert_allclose(sp.eigenvectors[:, 0], 1 / math.sqrt(m.total_mass), rtol=1e-6)
    assert sp.eigenvalues[0] == pytest.approx(0.0, abs=1e-10)


def test_invariants(sphere3, sphere3_spectrum):
    sp = sphere3_spectrum
    assert np.all(np.diff(sp.eigenvalues) >= 0)
    assert np.all(sp.eigenvalues >= 0)
    np.testing.assert_allclose(mass_gram(sp, sphere3.mass_diag), np.eye(sp.size), atol=1e-8)
    resid = rayleigh_residuals(sphere3.stiffness, sphere3.mass_diag, sp.eigenvalues,
                               sp.eigenvectors)
    assert resid.max() <= 1e-8
    assert sp.total_mass == sphere3.total_mass


def test_sign_convention(circle_spectrum):
    F = circle_spectrum.eigenvectors
    idx = np.argmax(np.abs(F), axis=0)
    assert np.all(F[idx, np.arange(F.shape[1])] > 0)


def test_reindexing_invariance():
    m = gen_icosphere(2)
    perm = np.random.default_rng(3).permutation(m.n_vertices)
    a = solve_eigs(m, 30)
    b = solve_eigs(m.reindexed(perm), 30)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-8)


def test_prefix_stability(circle):
    small = solve_eigs(circle, 9)
    large = solve_eigs(circle, 40)
    np.testing.assert_allclose(small.eigenvalues, large.eigenvalues[:9], atol=1e-8)


def test_joint_scaling_leaves_spectrum_unchanged(circle):
    scaled = DiscreteManifold(1, circle.vertices, circle.cells, 3.0 * circle.stiffness,
                              3.0 * circle.mass_diag)
    a, b = solve_eigs(circle, 40), solve_eigs(scaled, 40)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-10, atol=1e-12)
    assert weyl_check(a, 1).slope == pytest.approx(weyl_check(b, 1).slope, abs=1e-10)


def subspace_distance(A, B, mass):
    """Largest principal-angle sine between two mass-orthonormal bases."""
    s = np.linalg.svd(A.T @ (mass[:, None] * B), compute_uv=False)
    return math.sqrt(max(0.0, 1.0 - s.min() ** 2))


def test_lanczos_matches_dense():
    m = gen_icosphere(3)
    dense = solve_eigs(m, 36)
    lanczos = solve_eigs(m, 36, dense_max=100)
    assert lanczos.metadata["solver"] == "block_lanczos"
    np.testing.assert_allclose(lanczos.eigenvalues, dense.eigenvalues, atol=1e-10)
    # compare invariant subspaces per exact cluster l(l+1), l = 0..5
    start = 0
    for l in range(6):
        stop = start + 2 * l + 1
        d = subspace_distance(dense.eigenvectors[:, start:stop],
                              lanczos.eigenvectors[:, start:stop], m.mass_diag)
        assert d < 1e-6
        start = stop


def test_block_lanczos_diagonal():
    diag = np.concatenate([np.arange(1.0, 11.0), np.linspace(50.0, 300.0, 290)])
    values, vectors, info = block_lanczos(lambda x: diag[:, None] * x, 300, 10, block_size=4)
    np.testing.assert_allclose(values, diag[:10], atol=1e-10)
    resid = np.linalg.norm(diag[:, None] * vectors - vectors * values, axis=0)
    assert resid.max() <= 1e-10 * 300
    np.testing.assert_allclose(vectors.T @ vectors, np.eye(10), atol=1e-12)
    np.testing.assert_allclose(np.abs(vectors[:10]), np.eye(10), atol=1e-6)


def test_invalid_J(circle):
    with pytest.raises(ValueError):
        solve_eigs(circle, 0)
    with pytest.raises(ValueError):
        solve_eigs(circle, circle.n_vertices + 1)


def test_lanczos_cap_raises(monkeypatch):
    import functools

    import gpman.spectral as spectral

    capped = functools.partial(spectral.block_lanczos, max_dim=48)
    monkeypatch.setattr(spectral, "block_lanczos", lambda *a, **kw: capped(*a, **kw))
    m = gen_icosphere(3)
    with pytest.raises(ConvergenceError) as info:
        solve_eigs(m, 40, dense_max=10)
    assert info.value.residuals.max() > 0


def test_block_lanczos_cap():
    diag = np.arange(1.0, 301.0)
    with pytest.raises(ConvergenceError):
        block_lanczos(lambda x: diag[:, None] * x, 300, 10, block_size=4, max_dim=40)


def test_weyl_circle():
    sp = solve_eigs(gen_circle(2048), 128)
    fit = weyl_check(sp, 1)
    assert fit.expected_slope == 2.0
    assert 1.9 <= fit.slope <= 2.1


def test_weyl_needs_32(circle):
    with pytest.raises(ValueError):
        weyl_check(solve_eigs(circle, 31), 1)


def test_cache_roundtrip(tmp_path, circle):
    a = solve_eigs(circle, 20, cache_dir=tmp_path)
    files = list(tmp_path.glob("spectrum_*.bin"))
    assert len(files) == 1
    b = solve_eigs(circle, 20, cache_dir=tmp_path)
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
    np.testing.assert_array_equal(a.eigenvectors, b.eigenvectors)
    assert b.total_mass == a.total_mass
    assert spectrum_cache_key(circle, 20) != spectrum_cache_key(circle, 21)
    assert spectrum_cache_key(circle, 20) in files[0].name


def test_cache_header(tmp_path, circle_spectrum):
    path = tmp_path / "s.bin"
    save_spectrum(circle_spectrum, path, "ab" * 32)
    raw = path.read_bytes()
    assert raw[:8] == b"GPMSPEC\x00"
    n, J = circle_spectrum.n_vertices, circle_spectrum.size
    assert len(raw) == 8 + 4 + 8 + 8 + 32 + 8 + 8 * J * (n + 1)
    back = load_spectrum(path)
    np.testing.assert_array_equal(back.eigenvectors, circle_spectrum.eigenvectors)


def test_cache_rejects_garbage(tmp_path):
    path = tmp_path / "s.bin"
    path.write_bytes(b"not a spectrum file at all, definitely not" * 3)
    with pytest.raises(ValueError):
        load_spectrum(path)


def test_truncated(circle_spectrum):
    t = circle_spectrum.truncated(5)
    assert t.size == 5
    np.testing.assert_array_equal(t.eigenvectors, circle_spectrum.eigenvectors[:, :5])
    with pytest.raises(ValueError):
        circle_spectrum.truncated(circle_spectrum.size + 1)
