"""Polynomial graph filters and graph-temporal filters of a complex GSO."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .spectral import SpectralBasis


@dataclass
class FilterCoefficients:
    """h[k, t]: spatial power k = 0..K, temporal lag t = 0..K_t-1."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if h.ndim == 1:
            h = h[:, None]
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise ValueError("coefficients must be (K+1, K_t) with K >= 0, K_t >= 1")
        if not np.all(np.isfinite(h)):
            raise ValueError("non-finite filter coefficient")
        self.h = h

    @property
    def order(self) -> int:
        return self.h.shape[0] - 1

    @property
    def temporal_length(self) -> int:
        return self.h.shape[1]

    def to_json(self) -> str:
        return json.dumps({"re": self.h.real.tolist(), "im": self.h.imag.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "FilterCoefficients":
        d = json.loads(text)
        return cls(np.array(d["re"]) + 1j * np.array(d["im"]))


def _as_coeffs(h) -> np.ndarray:
    h = np.atleast_1d(np.asarray(h, dtype=complex))
    if h.ndim != 1 or h.size == 0:
        raise ValueError("filter taps must be a non-empty vector")
    return h


def apply_polynomial_filter(S, h, x) -> np.ndarray:
    """w = sum_k h_k S^k x by Horner's rule; x may be a vector or an (n, m) matrix."""
    S = np.asarray(S)
    h = _as_coeffs(h)
    x = np.asarray(x)
    if x.shape[0] != S.shape[1]:
        raise ValueError(f"signal length {x.shape[0]} does not match GSO size {S.shape[1]}")
    w = h[-1] * x
    for hk in h[-2::-1]:
        w = S @ w + hk * x
    return w


def filter_matrix(S, h) -> np.ndarray:
    """Dense H(S) = sum_k h_k S^k (Horner on matrices)."""
    S = np.asarray(S)
    return apply_polynomial_filter(S, h, np.eye(S.shape[0], dtype=complex))


def transfer_function(basis: SpectralBasis, h) -> np.ndarray:
    """h~(lambda_i) = sum_k h_k lambda_i^k at every graph frequency."""
    h = _as_coeffs(h)
    return np.polyval(h[::-1], basis.eigenvalues)


def apply_temporal_graph_filter(S, coeffs, X) -> np.ndarray:
    """Causal graph-temporal convolution w_t = sum_tau H_tau(S) x_{t - tau}.

    ``X`` is (n, T); samples before t = 0 are zero.
    """
    c = coeffs if isinstance(coeffs, FilterCoefficients) else FilterCoefficients(coeffs)
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("series must be (n, T) with T >= 1")
    if X.shape[0] != np.shape(S)[0]:
        raise ValueError("series node count does not match GSO")
    T = X.shape[1]
    W = np.zeros_like(X)
    for tau in range(min(c.temporal_length, T)):
        shifted = np.zeros_like(X)
        shifted[:, tau:] = X[:, :T - tau]
        W += apply_polynomial_filter(S, c.h[:, tau], shifted)
    return W


def joint_transfer(basis: SpectralBasis, coeffs, z: complex) -> np.ndarray:
    """Diagonal of the joint GFT/z-domain response: sum_t sum_k h_{k,t} lambda^k z^{-t}."""
    if z == 0:
        raise ValueError("z must be nonzero")
    c = coeffs if isinstance(coeffs, FilterCoefficients) else FilterCoefficients(coeffs)
    # H_k(z) for each spatial power, then evaluate the polynomial in lambda
    hz = c.h @ (complex(z) ** -np.arange(c.temporal_length))
    return np.polyval(hz[::-1], basis.eigenvalues)
