"""Perturbation bounds for complex graph filters and GCN layers, with Monte-Carlo falsifiers.

Checks that matter for correctness use only the constant-free forms:
the spectral-radius transfer bound, the explicit-M permutation bound and the
intermediate chain inequality for a GCN layer followed by dense layers.
The norm-equivalence constants (mu, zeta) are plain parameters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from math import comb
from typing import Callable, Sequence

import numpy as np

from .errors import BoundDomainError
from .filters import filter_matrix
from .nn import crelu
from .spectral import pseudospectral_radius

SLACK = 1e-9
KINDS = ("transfer", "permutation", "gcn", "layer")


@dataclass
class BernsteinMap:
    order: int
    radius: float
    M: np.ndarray

    def bound(self, delta) -> float:
        """max_i [M^{-1} |delta|]_i, the Bernstein-coefficient ceiling of sum |delta_k| x^k on [0, radius]."""
        d = np.abs(np.asarray(delta))
        if d.shape != (self.order + 1,):
            raise ValueError(f"expected {self.order + 1} coefficients, got {d.shape}")
        b = np.linalg.solve(self.M, d) if self.order else d / self.M[0, 0]
        return float(np.max(b))


def build_bernstein_map(K: int, radius: float) -> BernsteinMap:
    """Lower-triangular M with M b = |delta| for p(xi) = sum_k b_k C(K,k) xi^k (1-xi)^(K-k).

    Matching k-th derivatives at xi = 0 gives
    M[k, j] = C(K, k) C(k, j) (-1)^(k-j) / radius^k  for j <= k.
    """
    if radius <= 0:
        raise BoundDomainError("Bernstein map needs a positive radius")
    if K < 0:
        raise ValueError("K must be >= 0")
    M = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        for j in range(k + 1):
            M[k, j] = comb(K, k) * comb(k, j) * (-1) ** (k - j) / radius ** k
    return BernsteinMap(K, float(radius), M)


def transfer_error_bound(h, h_hat, radius: float) -> float:
    """Bound on rho(H_hat(S_hat) - H(S_hat)) given the pseudospectral radius of S_hat's neighbourhood."""
    h, h_hat = np.asarray(h), np.asarray(h_hat)
    if h.shape != h_hat.shape or h.ndim != 1:
        raise ValueError("coefficient vectors must have the same length")
    delta = h_hat - h
    if not np.any(delta):
        return 0.0
    return build_bernstein_map(h.size - 1, radius).bound(delta)


def permutation_constant(h, sigma_max_S: float) -> float:
    """max_{l=0..K} sum_{k>=l} |h_k| C(k, l) sigma_max^(k-l)."""
    if sigma_max_S < 0:
        raise ValueError("sigma_max must be >= 0")
    a = np.abs(np.asarray(h))
    K = a.size - 1
    return float(max(sum(a[k] * comb(k, l) * sigma_max_S ** (k - l) for k in range(l, K + 1))
                     for l in range(K + 1)))


def permutation_error_bound(h, S, eps: float) -> float:
    """M * eps (1 - eps^K) / (1 - eps), valid for ||E||_2 <= eps < 1."""
    if not 0 <= eps < 1:
        raise BoundDomainError(f"geometric series form needs 0 <= eps < 1, got {eps}")
    K = np.asarray(h).size - 1
    if eps == 0 or K == 0:
        return 0.0
    M = permutation_constant(h, float(np.linalg.norm(S, 2)))
    return M * eps * (1 - eps ** K) / (1 - eps)


def gcn_permutation_bound(h, h_hat, S, eps: float, mu1: float = 1.0, zeta1: float = 0.0,
                          radius: float | str | None = None) -> float:
    """mu1 * (transfer bound + zeta1) + permutation bound.

    ``radius`` defaults to the eps-pseudospectral radius of S; ``"norm"`` uses
    sigma_max(S) + eps, which bounds ||S_hat||_2 and makes mu1 = 1, zeta1 = 0 valid
    for the 2-norm of the difference.
    """
    S = np.asarray(S)
    if radius is None:
        radius = pseudospectral_radius(S, eps)
    elif radius == "norm":
        radius = float(np.linalg.norm(S, 2)) + eps
    return mu1 * (transfer_error_bound(h, h_hat, radius) + zeta1) + permutation_error_bound(h, S, eps)


# -- layered network ------------------------------------------------------------

@dataclass
class GcnStack:
    """One graph filter (with CReLU) followed by complex dense layers with CReLU between them."""

    h: np.ndarray
    thetas: list

    def forward(self, S, x):
        out = crelu(filter_matrix(S, self.h) @ x)
        for i, th in enumerate(self.thetas):
            if i:
                out = crelu(out)
            out = th @ out
        return out


@dataclass
class LayerBound:
    delta_L: float
    chain: float
    per_layer: list = field(default_factory=list)


def layer_propagation_bound(model: GcnStack, perturbed: GcnStack, S, eps: float, S_hat=None,
                            mu1: float = 1.0, zeta1: float = 0.0, mu2: float = 1.0, zeta2: float = 0.0,
                            radius: float | None = None) -> LayerBound:
    """Delta_L recursion with its constants, plus the constant-free chain value.

    Delta_1 = dw_1 Psi_1 + sigma(Theta_1) Psi_2 and
    Delta_l = sigma(Theta_l) Delta_{l-1} + dw_l prod_{j<l} sigma(Theta_hat_j) Psi_1.
    The chain replaces Psi_2 by ||H(S) - H_hat(S_hat)||_2 and Psi_1 by
    ||H_hat(S_hat)||_2, which needs the realised S_hat.
    """
    S = np.asarray(S)
    if len(model.thetas) != len(perturbed.thetas) or not model.thetas:
        raise ValueError("models must have the same, nonzero number of dense layers")
    if radius is None:
        radius = pseudospectral_radius(S, eps)
    h, h_hat = np.asarray(model.h), np.asarray(perturbed.h)
    psi1 = mu2 * (build_bernstein_map(h_hat.size - 1, radius).bound(h_hat) + zeta2)
    psi2 = mu1 * (transfer_error_bound(h, h_hat, radius) + zeta1) + permutation_error_bound(h, S, eps)

    S_hat = S if S_hat is None else np.asarray(S_hat)
    Hs, Hh = filter_matrix(S, h), filter_matrix(S_hat, h_hat)
    c_psi2 = float(np.linalg.norm(Hs - Hh, 2))
    c_psi1 = float(np.linalg.norm(Hh, 2))

    sig = [float(np.linalg.norm(t, 2)) for t in model.thetas]
    sig_hat = [float(np.linalg.norm(t, 2)) for t in perturbed.thetas]
    dw = [float(np.linalg.norm(t - u, 2)) for t, u in zip(model.thetas, perturbed.thetas)]

    delta = dw[0] * psi1 + sig[0] * psi2
    chain = dw[0] * c_psi1 + sig[0] * c_psi2
    per_layer = [delta]
    prod_hat = sig_hat[0]
    for l in range(1, len(sig)):
        delta = sig[l] * delta + dw[l] * prod_hat * psi1
        chain = sig[l] * chain + dw[l] * prod_hat * c_psi1
        prod_hat *= sig_hat[l]
        per_layer.append(delta)
    return LayerBound(delta, chain, per_layer)


def unit_ball_inputs(n: int, count: int, rng) -> np.ndarray:
    """Complex vectors uniform in the unit 2-norm ball, as columns (n, count)."""
    g = rng.standard_normal((n, count)) + 1j * rng.standard_normal((n, count))
    g /= np.linalg.norm(g, axis=0)
    r = rng.random(count) ** (1.0 / (2 * n))
    return g * r


def empirical_output_distance(model: GcnStack, perturbed: GcnStack, S, S_hat, inputs) -> float:
    """max over input columns of ||y - y_hat||_2; inputs must have norm <= 1."""
    X = np.asarray(inputs)
    if np.any(np.linalg.norm(X, axis=0) > 1 + 1e-12):
        raise ValueError("inputs must satisfy ||x|| <= 1")
    d = model.forward(S, X) - perturbed.forward(S_hat, X)
    return float(np.max(np.linalg.norm(d, axis=0)))


# -- Monte-Carlo falsifier ------------------------------------------------------

def random_perturbation(n: int, eps: float, rng, symmetric: bool = False) -> np.ndarray:
    """Complex Gaussian matrix rescaled to spectral norm exactly eps."""
    E = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    if symmetric:
        E = E + E.T
    nrm = np.linalg.norm(E, 2)
    return E * (eps / nrm) if eps > 0 else np.zeros_like(E)


def empirical_worst_case(S, quantity: Callable[[np.ndarray], float], eps: float, trials: int,
                         seed: int = 0, symmetric: bool = False, running: bool = False):
    """Max of quantity(S + E) over ``trials`` random E with ||E||_2 = eps.

    With ``running=True`` also returns the running maxima.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    S = np.asarray(S, dtype=complex)
    rng = np.random.default_rng(seed)
    best, hist = -np.inf, []
    for _ in range(trials):
        E = random_perturbation(S.shape[0], eps, rng, symmetric)
        best = max(best, float(quantity(S + E)))
        hist.append(best)
    return (best, hist) if running else best


def spectral_radius(A) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def transfer_quantity(h, h_hat):
    delta = np.asarray(h_hat) - np.asarray(h)
    return lambda S_hat: spectral_radius(filter_matrix(S_hat, delta))


def permutation_quantity(h, S):
    HS = filter_matrix(S, h)
    return lambda S_hat: float(np.linalg.norm(filter_matrix(S_hat, h) - HS, 2))


def gcn_quantity(h, h_hat, S):
    HS = filter_matrix(S, h)
    return lambda S_hat: float(np.linalg.norm(filter_matrix(S_hat, h_hat) - HS, 2))


# -- reports / sweeps -----------------------------------------------------------

@dataclass
class BoundReport:
    experiment: str
    kind: str               # transfer | permutation | gcn | layer
    theoretical: float
    empirical: float
    trials: int
    satisfied: bool
    config: dict

    def to_row(self) -> dict:
        row = {k: v for k, v in asdict(self).items() if k != "config"}
        row.update(self.config)
        return row


def satisfied(empirical: float, theoretical: float) -> bool:
    return empirical <= theoretical * (1 + SLACK) + 1e-15


def random_symmetric(n: int, rng, scale: float = 1.0) -> np.ndarray:
    """Complex symmetric Gaussian matrix normalised to spectral norm ``scale``."""
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    S = (G + G.T) / 2
    return S * (scale / np.linalg.norm(S, 2))


def run_bound_experiment(kind: str, n: int, K: int, eps: float, seed: int, trials: int = 100,
                         n_inputs: int = 500, hidden: Sequence[int] = (6,)) -> BoundReport:
    """One randomized instance of a bound and its Monte-Carlo check.

    Retrained quantities move with the perturbation: h_hat = h + eps*d and
    Theta_hat = Theta + eps*D, so eps = 0 gives identical models.
    """
    if not 0 <= eps < 1:
        raise BoundDomainError(f"eps must lie in [0, 1), got {eps}")
    if kind not in KINDS:
        raise ValueError(f"unknown bound kind {kind!r}")
    rng = np.random.default_rng([seed, n, K, int(round(eps * 1e6)), KINDS.index(kind)])
    S = random_symmetric(n, rng)
    h = (rng.standard_normal(K + 1) + 1j * rng.standard_normal(K + 1)) / (K + 1)
    d = rng.standard_normal(K + 1) + 1j * rng.standard_normal(K + 1)
    h_hat = h + eps * d / np.linalg.norm(d)
    cfg = {"n": n, "K": K, "eps": eps, "seed": seed}
    sub_seed = int(rng.integers(2 ** 31))
    name = f"{kind}-n{n}-K{K}-eps{eps:g}-s{seed}"

    if kind == "transfer":
        radius = pseudospectral_radius(S, eps)
        theo = transfer_error_bound(h, h_hat, radius)
        emp = empirical_worst_case(S, transfer_quantity(h, h_hat), eps, trials, sub_seed)
        cfg["rho_eps"] = radius
    elif kind == "permutation":
        theo = permutation_error_bound(h, S, eps)
        emp = empirical_worst_case(S, permutation_quantity(h, S), eps, trials, sub_seed)
    elif kind == "gcn":
        theo = gcn_permutation_bound(h, h_hat, S, eps, radius="norm")
        emp = empirical_worst_case(S, gcn_quantity(h, h_hat, S), eps, trials, sub_seed)
    elif kind == "layer":
        widths = [n, *hidden]
        thetas = [(rng.standard_normal((o, i)) + 1j * rng.standard_normal((o, i))) / np.sqrt(i)
                  for i, o in zip(widths[:-1], widths[1:])]
        thetas_hat = [t + eps * (rng.standard_normal(t.shape) + 1j * rng.standard_normal(t.shape)) / np.sqrt(t.size)
                      for t in thetas]
        net, net_hat = GcnStack(h, thetas), GcnStack(h_hat, thetas_hat)
        X = unit_ball_inputs(n, n_inputs, rng)
        # one realised perturbation per trial; bound is the chain value for that S_hat
        prng = np.random.default_rng(sub_seed)
        radius = pseudospectral_radius(S, eps)
        theo, emp, worst_gap = 0.0, 0.0, -np.inf
        for _ in range(max(1, trials // 10)):
            S_hat = S + random_perturbation(n, eps, prng)
            lb = layer_propagation_bound(net, net_hat, S, eps, S_hat=S_hat, radius=radius)
            e = empirical_output_distance(net, net_hat, S, S_hat, X)
            if e - lb.chain > worst_gap:
                worst_gap, theo, emp = e - lb.chain, lb.chain, e
                cfg["delta_L"] = lb.delta_L
        trials = max(1, trials // 10) * n_inputs
    return BoundReport(name, kind, float(theo), float(emp), trials, satisfied(emp, theo), cfg)


def bound_sweep(kinds: Sequence[str], sizes: Sequence[int], orders: Sequence[int],
                eps_ladder: Sequence[float], seeds: Sequence[int], trials: int = 100) -> list:
    for e in eps_ladder:
        if not 0 <= e < 1:
            raise BoundDomainError(f"eps ladder entry {e} outside [0, 1)")
    reports = []
    for kind in kinds:
        for n in sizes:
            for K in orders:
                for eps in eps_ladder:
                    for seed in seeds:
                        reports.append(run_bound_experiment(kind, n, K, eps, seed, trials))
    return reports


def reports_to_json(reports) -> str:
    return json.dumps([asdict(r) for r in reports], indent=1)
