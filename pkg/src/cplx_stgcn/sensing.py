"""Sensor placement, regularized least-squares recovery and stealthy FDI attacks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NoNullSpaceError
from .grid import AdmittanceModel, MeasurementOperator, PhasorSeries, observe
from .spectral import SpectralBasis

NULL_TOL = 1e-10
RCOND = 1e-12


# -- placement ----------------------------------------------------------------

@dataclass
class SensorPlan:
    buses: list
    k: int
    sigma_min: float
    history: list = field(default_factory=list)   # sigma_min after each greedy step

    def __post_init__(self):
        if len(set(self.buses)) != len(self.buses):
            raise ValueError("sensor plan has duplicate buses")
        if len(self.buses) < self.k:
            raise ValueError("sensor plan needs at least k buses")

    def to_json(self) -> str:
        return json.dumps({"buses": [int(b) for b in self.buses], "sigma_min": self.sigma_min,
                           "k": self.k, "history": self.history})

    @classmethod
    def from_json(cls, text: str) -> "SensorPlan":
        d = json.loads(text)
        return cls(list(d["buses"]), int(d["k"]), float(d["sigma_min"]), list(d.get("history", [])))


def selection_score(UK: np.ndarray, rows) -> float:
    """sigma_min of the selected rows of U_K.

    With fewer rows than columns the matrix is compared through its
    min(rows, cols) singular values, i.e. its smallest nonzero one.
    """
    sv = np.linalg.svd(UK[list(rows)], compute_uv=False)
    return float(sv[min(len(rows), UK.shape[1]) - 1])


def greedy_sensor_placement(basis: SpectralBasis, k: int, m: int) -> SensorPlan:
    """Forward selection of m buses maximizing sigma_min(F_A U_K).

    U_K holds the eigenvectors of the k lowest graph frequencies. Ties go to
    the lowest bus index.
    """
    n = basis.U.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"frequency count k={k} out of range for {n} buses")
    if m < k:
        raise ValueError("need m >= k sensors")
    if m > n:
        raise ValueError(f"cannot place {m} sensors on {n} buses")
    UK = basis.U[:, :k]
    chosen: list = []
    history = []
    for _ in range(m):
        best, best_bus = -1.0, -1
        for b in range(n):
            if b in chosen:
                continue
            s = selection_score(UK, chosen + [b])
            if s > best * (1 + 1e-12) + 1e-15:
                best, best_bus = s, b
        chosen.append(best_bus)
        history.append(best)
    return SensorPlan(chosen, k, history[-1], history)


def exhaustive_placement(basis: SpectralBasis, k: int, m: int) -> tuple:
    """Brute-force optimum (buses, sigma_min); only sensible for tiny graphs."""
    from itertools import combinations
    UK = basis.U[:, :k]
    best = (None, -1.0)
    for rows in combinations(range(UK.shape[0]), m):
        s = selection_score(UK, rows)
        if s > best[1]:
            best = (list(rows), s)
    return best


# -- recovery -----------------------------------------------------------------

def rls_operator(H, S, mu1: float) -> np.ndarray:
    """(H^H H + mu1 S)^+ H^H, the linear map z -> x_hat."""
    if mu1 < 0:
        raise ValueError("mu1 must be >= 0")
    H = np.asarray(H)
    G = H.conj().T @ H + mu1 * np.asarray(S)
    return np.linalg.pinv(G, rcond=RCOND) @ H.conj().T


def rls_recover(z, H, S, mu1: float) -> np.ndarray:
    """x_hat = (H^H H + mu1 S)^+ H^H z; z may be a vector or an (m, T) matrix."""
    return rls_operator(H, S, mu1) @ np.asarray(z)


# -- attacks ------------------------------------------------------------------

@dataclass
class AttackInstance:
    compromised: list
    delta: np.ndarray        # (n,), zero outside the compromised set
    alpha: float

    def support(self) -> np.ndarray:
        return np.flatnonzero(np.abs(self.delta) > 0)


def honest_buses(A, C) -> np.ndarray:
    cs = set(int(c) for c in C)
    return np.array([int(a) for a in A if int(a) not in cs], dtype=int)


def attack_null_space(Y, A, C) -> np.ndarray:
    """Orthonormal basis (|C|, d) of null(Y_PC), P = A minus C."""
    C = np.asarray(list(C), dtype=int)
    P = honest_buses(A, C)
    if C.size == 0:
        return np.zeros((0, 0), dtype=complex)
    if P.size == 0:
        return np.eye(C.size, dtype=complex)
    Ypc = np.asarray(Y)[np.ix_(P, C)]
    _, sv, Vh = np.linalg.svd(Ypc)
    smax = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > NULL_TOL * smax)) if smax > 0 else 0
    return Vh[rank:].conj().T


def stealthy_attack(model: AdmittanceModel, A, C, alpha: float = 0.1, seed=None) -> AttackInstance:
    """Random stealthy perturbation on C with Y_PC dx_C = 0 and ||dx_C||_inf = alpha."""
    A = [int(a) for a in A]
    C = [int(c) for c in C]
    if not set(C) <= set(A):
        raise ValueError("compromised buses must be metered (C subset of A)")
    if len(set(C)) != len(C):
        raise ValueError("duplicate compromised bus")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    delta = np.zeros(model.node_count, dtype=complex)
    if not C or alpha == 0:
        return AttackInstance(C, delta, float(alpha))
    N = attack_null_space(model.Y, A, C)
    if N.shape[1] == 0:
        raise NoNullSpaceError(f"Y_PC has full column rank for C={C}; no stealthy attack exists")
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(N.shape[1]) + 1j * rng.standard_normal(N.shape[1])
    dc = N @ (c / np.linalg.norm(c))
    dc = dc * (alpha / np.max(np.abs(dc)))
    delta[C] = dc
    return AttackInstance(C, delta, float(alpha))


def attack_is_full_support(model: AdmittanceModel, A, C, tol: float = 1e-6) -> bool:
    """True if a generic null-space vector is nonzero on every bus of C."""
    N = attack_null_space(model.Y, A, C)
    if N.shape[1] == 0:
        return False
    return bool(np.all(np.linalg.norm(N, axis=1) > tol))


def sample_attack_set(model: AdmittanceModel, A, size: int, rng, max_tries: int = 2000) -> list:
    """Random C subset of A, size ``size``, admitting a stealthy attack touching all of C."""
    A = [int(a) for a in A]
    if size > len(A):
        raise ValueError("cannot compromise more buses than are metered")
    if size == 0:
        return []
    for _ in range(max_tries):
        C = sorted(int(c) for c in rng.choice(A, size, replace=False))
        if attack_is_full_support(model, A, C):
            return C
    raise NoNullSpaceError(f"no feasible stealthy set of size {size} found in {max_tries} draws")


def make_labels(delta, A) -> np.ndarray:
    """Binary vector over A: 1 where the perturbation is nonzero."""
    delta = np.asarray(delta)
    return (np.abs(delta[np.asarray(list(A), dtype=int)]) > 0).astype(float)


# -- datasets -----------------------------------------------------------------

@dataclass
class WindowedDataset:
    t: np.ndarray            # (N,) index of the last step of each window
    z: np.ndarray            # (N, 2|A|, T) received measurements
    inputs: np.ndarray       # (N, n, T) RLS recoveries of each column of z
    targets: np.ndarray      # (N, n) true state at t + H
    labels: np.ndarray       # (N, |A|) attack indicators at t
    hypothesis: np.ndarray   # (N,) 0 = no attack, 1 = attack
    v_meas: np.ndarray       # (N, |A|) received voltages at t + H
    i_meas: np.ndarray       # (N, |A|) received currents at t + H
    observed: np.ndarray
    window: int
    horizon: int

    def __len__(self):
        return len(self.t)

    def subset(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx)
        return WindowedDataset(self.t[idx], self.z[idx], self.inputs[idx], self.targets[idx],
                               self.labels[idx], self.hypothesis[idx], self.v_meas[idx],
                               self.i_meas[idx], self.observed, self.window, self.horizon)


def build_dataset(series: PhasorSeries, operator: MeasurementOperator, model: AdmittanceModel,
                  mode: str = "clean", *, window: int = 10, horizon: int = 0, mu1: float = 1e-6,
                  rate: float = 0.5, attack_size: int = 0, alpha: float = 0.1,
                  attack_set=None, seed: int = 0) -> WindowedDataset:
    """Sliding windows of noisy (possibly attacked) measurements with RLS inputs.

    Each attacked sample uses one compromised set C for its whole window,
    either the fixed ``attack_set`` or a feasible set of ``attack_size``
    buses drawn per sample, and a fresh stealthy perturbation for every time
    step. Hybrid mode attacks each sample with probability ``rate``.
    """
    if mode not in ("clean", "attacked", "hybrid"):
        raise ValueError(f"unknown dataset mode {mode!r}")
    if window < 1 or horizon < 0:
        raise ValueError("window must be >= 1 and horizon >= 0")
    if not 0 <= rate <= 1:
        raise ValueError("hybrid rate must be in [0, 1]")
    V = series.values
    n, steps = V.shape
    if steps < window + horizon:
        raise ValueError(f"series of {steps} steps is shorter than window + horizon = {window + horizon}")
    A = operator.observed
    a = A.size
    rng = np.random.default_rng(seed)
    noise_seed = int(rng.integers(2 ** 63))
    Hb = operator.H_bus
    Z = observe(operator, V, seed=noise_seed)            # (2a, steps)
    R = rls_operator(Hb, model.Y, mu1)

    fixed = None if attack_set is None else sorted(int(c) for c in attack_set)
    can_attack = bool(fixed) if fixed is not None else attack_size > 0
    count = steps - window - horizon + 1
    ts = np.arange(window - 1, window - 1 + count)
    if mode == "clean":
        hyp = np.zeros(count, dtype=int)
    elif mode == "attacked":
        hyp = np.full(count, int(can_attack))
    else:
        hyp = (rng.random(count) < rate).astype(int) * int(can_attack)

    z = np.empty((count, 2 * a, window), dtype=complex)
    labels = np.zeros((count, a))
    for s, t in enumerate(ts):
        zs = Z[:, t - window + 1:t + 1].copy()
        if hyp[s]:
            C = fixed if fixed is not None else sample_attack_set(model, A, attack_size, rng)
            for j in range(window):
                att = stealthy_attack(model, A, C, alpha, seed=rng.integers(2 ** 63))
                zs[:, j] += Hb @ att.delta
            labels[s] = make_labels(att.delta, A)
        z[s] = zs
    inputs = np.einsum("vm,smt->svt", R, z)
    tgt = ts + horizon
    return WindowedDataset(
        t=ts, z=z, inputs=inputs, targets=V[:, tgt].T.copy(), labels=labels, hypothesis=hyp,
        v_meas=Z[a:, tgt].T.copy(), i_meas=Z[:a, tgt].T.copy(), observed=A.copy(),
        window=window, horizon=horizon)


def _pairs(a) -> list:
    a = np.asarray(a)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def write_dataset_jsonl(path, data: WindowedDataset) -> None:
    with open(path, "w") as fh:
        for s in range(len(data)):
            zt = np.concatenate([data.i_meas[s], data.v_meas[s]])
            rec = {"t": int(data.t[s]), "z": _pairs(data.z[s]), "target": _pairs(data.targets[s]),
                   "labels": data.labels[s].astype(int).tolist(), "hypothesis": int(data.hypothesis[s]),
                   "z_target": _pairs(zt)}
            fh.write(json.dumps(rec) + "\n")


def read_dataset_jsonl(path) -> list:
    """Raw records with complex arrays restored."""
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            z = np.asarray(rec["z"])
            tg = np.asarray(rec["target"])
            zt = np.asarray(rec["z_target"])
            rec["z"] = z[..., 0] + 1j * z[..., 1]
            rec["target"] = tg[..., 0] + 1j * tg[..., 1]
            rec["z_target"] = zt[..., 0] + 1j * zt[..., 1]
            rec["labels"] = np.asarray(rec["labels"], dtype=float)
            out.append(rec)
    return out


def dataset_from_records(records: list, operator: MeasurementOperator, model: AdmittanceModel,
                         mu1: float, horizon: int = 0) -> WindowedDataset:
    """Rebuild a :class:`WindowedDataset` from JSON-lines records."""
    if not records:
        raise ValueError("dataset file has no samples")
    a = operator.observed.size
    z = np.stack([r["z"] for r in records])
    zt = np.stack([r["z_target"] for r in records])
    if z.shape[1] != 2 * a:
        raise ValueError("dataset measurements do not match the sensor plan")
    R = rls_operator(operator.H_bus, model.Y, mu1)
    return WindowedDataset(
        t=np.array([r["t"] for r in records]), z=z, inputs=np.einsum("vm,smt->svt", R, z),
        targets=np.stack([r["target"] for r in records]),
        labels=np.stack([r["labels"] for r in records]),
        hypothesis=np.array([r["hypothesis"] for r in records]),
        v_meas=zt[:, a:], i_meas=zt[:, :a], observed=operator.observed.copy(),
        window=z.shape[2], horizon=horizon)
