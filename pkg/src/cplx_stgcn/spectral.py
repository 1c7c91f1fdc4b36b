"""Complex-orthogonal eigenbasis of a complex symmetric GSO, GFT, pseudospectral radius."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegenerateDecompositionError

QUASI_NULL = 1e-10


@dataclass
class SpectralBasis:
    eigenvalues: np.ndarray   # sorted by |lambda| ascending, ties by angle
    U: np.ndarray             # columns are eigenvectors, U^T U = I
    order: np.ndarray         # permutation applied to the raw eigensolver output

    @property
    def frequencies(self) -> np.ndarray:
        return np.abs(self.eigenvalues)

    def to_json(self) -> str:
        return json.dumps({
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "U": [[[float(z.real), float(z.imag)] for z in row] for row in self.U],
            "order": self.order.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "SpectralBasis":
        d = json.loads(text)
        lam = np.array([complex(*p) for p in d["eigenvalues"]])
        U = np.array([[complex(*p) for p in row] for row in d["U"]])
        return cls(lam, U, np.array(d["order"], dtype=int))


def _check_symmetric(S: np.ndarray) -> None:
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"GSO must be square, got shape {S.shape}")
    scale = max(1.0, np.linalg.norm(S))
    if np.linalg.norm(S - S.T) > 1e-12 * scale:
        raise ValueError("GSO is not complex symmetric (S != S^T)")


def _bilinear_gram_schmidt(V: np.ndarray) -> np.ndarray:
    # orthonormalise w.r.t. the bilinear form <a, b> = a^T b
    out = []
    for col in V.T:
        w = col.astype(complex)
        for q in out:
            w = w - (q @ w) * q
        nrm = w @ w
        if abs(nrm) < QUASI_NULL * max(1.0, np.vdot(w, w).real):
            raise DegenerateDecompositionError("quasi-null vector inside a repeated eigenspace")
        out.append(w / np.sqrt(nrm))
    return np.column_stack(out)


def spectral_decompose(S) -> SpectralBasis:
    """S = U diag(lambda) U^T with U^T U = I, eigenvalues ordered by modulus.

    Real symmetric input falls back to the orthogonal eigendecomposition.
    Raises :class:`DegenerateDecompositionError` if some eigenvector has
    |v^T v| < 1e-10 (after scaling to unit 2-norm).
    """
    S = np.asarray(S)
    _check_symmetric(S)
    n = S.shape[0]
    if not np.iscomplexobj(S) or not np.any(S.imag):
        lam, V = np.linalg.eigh(np.real(S))
        lam = lam.astype(complex)
        V = V.astype(complex)
    else:
        lam, V = np.linalg.eig(S)
        V = V / np.linalg.norm(V, axis=0)
        scale = max(np.max(np.abs(lam)), 1.0)
        # repeated eigenvalues: eig gives an arbitrary basis of the eigenspace
        done = np.zeros(n, dtype=bool)
        for i in range(n):
            if done[i]:
                continue
            cluster = np.flatnonzero(np.abs(lam - lam[i]) <= 1e-8 * scale)
            done[cluster] = True
            if cluster.size > 1:
                V[:, cluster] = _bilinear_gram_schmidt(V[:, cluster])
            else:
                v = V[:, i]
                vtv = v @ v
                if abs(vtv) < QUASI_NULL:
                    raise DegenerateDecompositionError(
                        f"eigenvector {i} is quasi-null: |v^T v| = {abs(vtv):.2e}")
                V[:, i] = v / np.sqrt(vtv)

    mod = np.abs(lam)
    key_mod = np.round(mod / max(mod.max(), 1e-300), 12)
    order = np.lexsort((np.angle(lam), key_mod))
    lam, V = lam[order], V[:, order]

    if np.linalg.norm(V.T @ V - np.eye(n)) > 1e-8:
        raise DegenerateDecompositionError("eigenbasis is not complex-orthogonal to 1e-8")
    return SpectralBasis(lam, V, order)


def gft(basis: SpectralBasis, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != basis.U.shape[0]:
        raise ValueError("signal length does not match the basis")
    return basis.U.T @ x


def igft(basis: SpectralBasis, x_tilde) -> np.ndarray:
    x_tilde = np.asarray(x_tilde)
    if x_tilde.shape[0] != basis.U.shape[0]:
        raise ValueError("spectrum length does not match the basis")
    return basis.U @ x_tilde


def sigma_min(M: np.ndarray) -> float:
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def _outer_crossing(S: np.ndarray, SH: np.ndarray, eps: float, theta: float) -> float:
    """Largest r >= 0 with sigma_min(r e^{i theta} I - S) = eps, or -inf.

    Such r are the real eigenvalues of [[e^{it} S^H, eps e^{it} I], [eps e^{-it} I, e^{-it} S]].
    """
    n = S.shape[0]
    w = np.exp(1j * theta)
    I = np.eye(n)
    B = np.block([[w * SH, eps * w * I], [eps * np.conj(w) * I, np.conj(w) * S]])
    ev = np.linalg.eigvals(B)
    scale = max(np.linalg.norm(S, 2), eps, 1e-300)
    cand = np.sort(ev.real[(np.abs(ev.imag) <= 1e-6 * scale) & (ev.real >= -1e-12 * scale)])[::-1]
    for r in cand:
        r = max(float(r), 0.0)
        if abs(sigma_min(r * w * I - S) - eps) <= 1e-6 * scale:
            return r
    return -np.inf


def pseudospectral_radius(S, eps: float, tol: float = 1e-8, n_angles: int | None = None) -> float:
    """rho_eps(S) = max{|z| : sigma_min(zI - S) <= eps}.

    Angular grid over the plane; on each ray the outermost boundary crossing
    is found exactly, then the best rays are refined by bounded scalar search.
    The result is clamped to [rho(S) + eps, sigma_max(S) + eps], which always
    contains the true value.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    S = np.asarray(S, dtype=complex)
    rho = float(np.max(np.abs(np.linalg.eigvals(S))))
    if eps == 0:
        return rho
    smax = float(np.linalg.norm(S, 2))
    n = S.shape[0]
    SH = S.conj().T
    n_angles = n_angles or max(64, 12 * n)
    thetas = np.linspace(-np.pi, np.pi, n_angles, endpoint=False)
    vals = np.array([_outer_crossing(S, SH, eps, t) for t in thetas])
    best = float(np.max(vals))

    step = thetas[1] - thetas[0]
    top = np.argsort(vals)[::-1][:4]
    xatol = max(1e-12, min(1e-4, np.sqrt(tol / max(best, 1e-12))))
    for k in top:
        if not np.isfinite(vals[k]):
            continue
        res = minimize_scalar(lambda t: -max(_outer_crossing(S, SH, eps, t), 0.0),
                              bounds=(thetas[k] - step, thetas[k] + step),
                              method="bounded", options={"xatol": xatol})
        if np.isfinite(res.fun):
            best = max(best, -float(res.fun))
    return float(min(max(best, rho + eps), smax + eps))
