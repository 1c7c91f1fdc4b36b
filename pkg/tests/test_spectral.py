import numpy as np
import pytest

from cplx_stgcn.errors import DegenerateDecompositionError
from cplx_stgcn.spectral import (SpectralBasis, gft, igft, pseudospectral_radius, sigma_min,
                                 spectral_decompose)

from gsp_util import crandn, random_admittance, random_symmetric_complex


@pytest.mark.parametrize("seed", range(5))
def test_complex_orthogonal_decomposition(seed):
    rng = np.random.default_rng(seed)
    S = random_admittance(9, rng)
    b = spectral_decompose(S)
    np.testing.assert_allclose(b.U.T @ b.U, np.eye(9), atol=1e-8)
    np.testing.assert_allclose(b.U @ np.diag(b.eigenvalues) @ b.U.T, S, atol=1e-9 * np.abs(S).max())
    assert np.all(np.diff(b.frequencies) >= -1e-12)


def test_real_symmetric_falls_back_to_orthogonal_basis():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((6, 6))
    b = spectral_decompose(A + A.T)
    np.testing.assert_allclose(b.U.conj().T @ b.U, np.eye(6), atol=1e-12)
    np.testing.assert_allclose(b.eigenvalues.imag, 0)


def test_repeated_eigenvalues_are_orthogonalized():
    rng = np.random.default_rng(2)
    Q = spectral_decompose(random_symmetric_complex(5, rng)).U
    S = Q @ np.diag([1 + 1j, 1 + 1j, 2, 3j, -4]) @ Q.T
    b = spectral_decompose(S)
    np.testing.assert_allclose(b.U.T @ b.U, np.eye(5), atol=1e-8)
    np.testing.assert_allclose(b.U @ np.diag(b.eigenvalues) @ b.U.T, S, atol=1e-9)


def test_quasi_null_eigenvector_rejected():
    # [[1, i], [i, -1]] is nilpotent with the isotropic eigenvector (1, i)
    with pytest.raises(DegenerateDecompositionError):
        spectral_decompose(np.array([[1, 1j], [1j, -1]]) + 0.5 * np.eye(2))


def test_ordering_ties_broken_by_angle():
    b = spectral_decompose(np.diag([1j, -1.0, 1.0, 0.5]))
    np.testing.assert_allclose(b.eigenvalues, [0.5, 1.0, 1j, -1.0])


def test_non_symmetric_rejected():
    with pytest.raises(ValueError):
        spectral_decompose(np.array([[0, 1], [2, 0]], dtype=complex))
    with pytest.raises(ValueError):
        spectral_decompose(np.ones((2, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_gft_roundtrip(seed):
    rng = np.random.default_rng(seed)
    b = spectral_decompose(random_admittance(8, rng))
    x = crandn(rng, 8)
    np.testing.assert_allclose(igft(b, gft(b, x)), x, rtol=1e-9, atol=1e-9 * np.linalg.norm(x))
    with pytest.raises(ValueError):
        gft(b, np.ones(7))


def test_basis_json_roundtrip():
    b = spectral_decompose(random_admittance(5, np.random.default_rng(0)))
    back = SpectralBasis.from_json(b.to_json())
    np.testing.assert_array_equal(back.U, b.U)
    np.testing.assert_array_equal(back.eigenvalues, b.eigenvalues)


def test_pseudospectral_radius_of_normal_matrix():
    # for normal S the eps-pseudospectrum is the union of eps-discs
    S = np.diag([1j, 0.3, -0.8 + 0.2j])
    for eps in (1e-3, 0.1, 0.5):
        assert pseudospectral_radius(S, eps) == pytest.approx(1 + eps, abs=1e-8)


def test_pseudospectral_radius_eps_zero_and_domain():
    S = np.array([[0, 1], [0, 0]], dtype=complex)
    assert pseudospectral_radius(S, 0.0) == 0.0
    with pytest.raises(ValueError):
        pseudospectral_radius(S, -0.1)


def test_pseudospectral_radius_of_jordan_block():
    # sigma_min(zI - J) = eps  <=>  (|z|^2 - eps^2)^2 = eps^2, so rho_eps = sqrt(eps (1 + eps))
    J = np.array([[0, 1], [0, 0]], dtype=complex)
    for eps in (0.01, 0.1, 0.3):
        assert pseudospectral_radius(J, eps) == pytest.approx(np.sqrt(eps * (1 + eps)), abs=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_pseudospectral_radius_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    S = crandn(rng, 5, 5) / 2
    eps = 0.2
    r = pseudospectral_radius(S, eps)
    # grid oracle: every sampled point inside the pseudospectrum has |z| <= r
    lim = np.linalg.norm(S, 2) + eps
    xs = np.linspace(-lim, lim, 161)
    inside = [abs(complex(x, y)) for x in xs for y in xs
              if sigma_min(complex(x, y) * np.eye(5) - S) <= eps]
    assert max(inside) <= r + 1e-9
    assert max(inside) >= r - 2 * (xs[1] - xs[0])
    # Monte Carlo: eigenvalues of perturbed matrices stay inside
    for _ in range(200):
        E = crandn(rng, 5, 5)
        E *= eps / np.linalg.norm(E, 2)
        assert np.max(np.abs(np.linalg.eigvals(S + E))) <= r + 1e-9
