"""Bus admittance matrix, power flow, synthetic loads and the measurement model."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectedGridError, GridError, PowerFlowError

DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    admittance: complex
    shunt_from: complex = 0j
    shunt_to: complex = 0j


@dataclass
class AdmittanceModel:
    node_count: int
    Y: np.ndarray
    slack: int = 0
    branches: tuple = ()
    bus_shunts: np.ndarray | None = None

    @property
    def non_slack(self) -> np.ndarray:
        return np.array([i for i in range(self.node_count) if i != self.slack])

    def shunt_vector(self) -> np.ndarray:
        """Total shunt admittance per bus (bus shunts plus branch shunt halves)."""
        sh = np.zeros(self.node_count, dtype=complex)
        if self.bus_shunts is not None:
            sh += self.bus_shunts
        for br in self.branches:
            sh[br.from_bus] += br.shunt_from
            sh[br.to_bus] += br.shunt_to
        return sh


def build_admittance(branches: Sequence[Branch], node_count: int, slack: int = 0,
                     bus_shunts=None) -> AdmittanceModel:
    """Assemble Y from a branch list.

    Parallel branches are summed. Raises :class:`GridError` on bad indices or
    zero admittance and :class:`DisconnectedGridError` if the graph is not
    connected.
    """
    if not branches:
        raise GridError("branch list is empty")
    if not 0 <= slack < node_count:
        raise GridError(f"slack bus {slack} out of range")
    Y = np.zeros((node_count, node_count), dtype=complex)
    for br in branches:
        i, j = br.from_bus, br.to_bus
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise GridError(f"branch ({i}, {j}) references a bus outside 0..{node_count - 1}")
        if i == j:
            raise GridError(f"branch ({i}, {j}) is a self loop")
        if br.admittance == 0:
            raise GridError(f"branch ({i}, {j}) has zero series admittance")
        y = complex(br.admittance)
        Y[i, i] += y + br.shunt_from
        Y[j, j] += y + br.shunt_to
        Y[i, j] -= y
        Y[j, i] -= y
    shunts = None
    if bus_shunts is not None:
        shunts = np.asarray(bus_shunts, dtype=complex)
        if shunts.shape != (node_count,):
            raise GridError("bus shunt vector has wrong length")
        Y[np.diag_indices(node_count)] += shunts

    rows = [b.from_bus for b in branches]
    cols = [b.to_bus for b in branches]
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(node_count, node_count))
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise DisconnectedGridError(f"grid has {n_comp} connected components")
    return AdmittanceModel(node_count, Y, slack, tuple(branches), shunts)


def apparent_power(v, model_or_Y) -> np.ndarray:
    """s = v * conj(Y v), elementwise. Accepts a vector or a (n, T) matrix."""
    Y = model_or_Y.Y if isinstance(model_or_Y, AdmittanceModel) else np.asarray(model_or_Y)
    v = np.asarray(v, dtype=complex)
    if v.shape[0] != Y.shape[0]:
        raise ValueError(f"voltage length {v.shape[0]} does not match {Y.shape[0]} buses")
    return v * np.conj(Y @ v)


def solve_voltages(model: AdmittanceModel, injections, slack_voltage: complex = 1.0 + 0j,
                   tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Fixed-point current-injection power flow.

    ``injections`` is the net complex power injection at every bus (the slack
    entry is ignored) or at the non-slack buses only, in bus order.
    Iterates v_N <- Y_NN^{-1}((s_N / v_N)^* - Y_NS v_S) from a flat start.
    """
    n = model.node_count
    ns = model.non_slack
    s = np.asarray(injections, dtype=complex)
    if s.shape == (n,):
        s_n = s[ns]
    elif s.shape == (n - 1,):
        s_n = s
    else:
        raise ValueError(f"expected {n} or {n - 1} injections, got {s.shape}")

    Y_nn = model.Y[np.ix_(ns, ns)]
    y_ns = model.Y[ns, model.slack]
    lu, piv = scipy.linalg.lu_factor(Y_nn, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-13 * d.max():
        raise PowerFlowError("Y_NN is singular")

    v_n = np.full(n - 1, slack_voltage, dtype=complex)
    const = -y_ns * slack_voltage
    for _ in range(max_iter):
        v_new = scipy.linalg.lu_solve((lu, piv), np.conj(s_n / v_n) + const)
        if not np.all(np.isfinite(v_new)):
            break
        step = np.max(np.abs(v_new - v_n))
        v_n = v_new
        if step < tol:
            v = np.empty(n, dtype=complex)
            v[model.slack] = slack_voltage
            v[ns] = v_n
            resid = np.max(np.abs(s_n - apparent_power(v, model)[ns]))
            if resid > 1e-6:
                raise PowerFlowError(f"converged iterate has power residual {resid:.3e}")
            return v
    raise PowerFlowError(f"power flow did not converge in {max_iter} iterations (infeasible loading?)")


@dataclass
class LoadProfile:
    base_load: float = 0.04      # mean active load per bus, p.u.
    spread: float = 0.5          # per-bus base varies in base*(1 +/- spread)
    amplitude: float = 0.3       # relative daily swing; 0 gives constant loads
    period: int = 24
    q_ratio: float = 0.35        # reactive / active
    noise: float = 0.3           # relative AR(1) noise, scaled by amplitude
    ar_coef: float = 0.8
    max_load: float = 0.5


def synth_load_series(node_count: int, steps: int, seed: int, profile: LoadProfile | None = None,
                      slack: int = 0) -> np.ndarray:
    """Seeded complex injection series, shape (node_count, steps).

    Loads are negative injections: base * (1 + amplitude*(daily sinusoid +
    noise*AR(1))), with a fixed reactive ratio. The slack row is zero.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    p = profile or LoadProfile()
    rng = np.random.default_rng(seed)
    base = p.base_load * (1 + p.spread * rng.uniform(-1, 1, node_count))
    phase = rng.uniform(-0.6, 0.6, node_count)
    t = np.arange(steps)
    daily = np.sin(2 * np.pi * t[None, :] / p.period + phase[:, None])
    ar = np.zeros((node_count, steps))
    shocks = rng.standard_normal((node_count, steps)) * np.sqrt(1 - p.ar_coef ** 2)
    ar[:, 0] = rng.standard_normal(node_count)
    for k in range(1, steps):
        ar[:, k] = p.ar_coef * ar[:, k - 1] + shocks[:, k]
    level = base[:, None] * (1 + p.amplitude * (daily + p.noise * ar))
    level = np.clip(level, 0.0, p.max_load)
    s = -(level + 1j * p.q_ratio * level)
    s[slack] = 0
    return s


@dataclass
class PhasorSeries:
    values: np.ndarray            # (n_bus, T)
    quantity: str = "voltage"     # voltage | current | injection
    step_hours: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ValueError("phasor series must be (n_bus, T) with T >= 1")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("phasor series has non-finite entries")
        if self.quantity not in ("voltage", "current", "injection"):
            raise ValueError(f"unknown quantity {self.quantity!r}")


def simulate_series(model: AdmittanceModel, injections: np.ndarray, slack_voltage=1.0 + 0j):
    """Solve the power flow for each column; returns (voltages, currents) series."""
    V = np.column_stack([solve_voltages(model, injections[:, k], slack_voltage)
                         for k in range(injections.shape[1])])
    return PhasorSeries(V, "voltage"), PhasorSeries(model.Y @ V, "current")


@dataclass
class MeasurementOperator:
    observed: np.ndarray          # A, in the chosen order
    unobserved: np.ndarray        # U, ascending
    H: np.ndarray                 # (2|A|, n) in block order (A then U)
    noise_sd: float = 0.0
    perm: np.ndarray = field(default=None)

    @property
    def H_bus(self) -> np.ndarray:
        """H with columns in natural bus order, so z = H_bus @ v."""
        out = np.empty_like(self.H)
        out[:, self.perm] = self.H
        return out


def build_measurement_operator(model: AdmittanceModel, observed, noise_sd: float = 0.0) -> MeasurementOperator:
    A = np.asarray(list(observed), dtype=int)
    n = model.node_count
    if A.size == 0:
        raise ValueError("observed bus set is empty")
    if len(set(A.tolist())) != A.size or A.min() < 0 or A.max() >= n:
        raise ValueError("observed buses must be distinct indices in range")
    U = np.array(sorted(set(range(n)) - set(A.tolist())), dtype=int)
    perm = np.concatenate([A, U])
    a = A.size
    H = np.zeros((2 * a, n), dtype=complex)
    H[:a] = model.Y[np.ix_(A, perm)]
    H[a:, :a] = np.eye(a)
    return MeasurementOperator(A, U, H, float(noise_sd), perm)


def observe(op: MeasurementOperator, v, seed=None) -> np.ndarray:
    """z = H v + eps with circular complex Gaussian noise of sd ``op.noise_sd``.

    ``v`` may be one state vector or a (n, T) matrix of states.
    """
    v = np.asarray(v, dtype=complex)
    Hb = op.H_bus
    if v.shape[0] != Hb.shape[1]:
        raise ValueError("state dimension does not match operator")
    z = Hb @ v
    if op.noise_sd > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((2,) + z.shape) * (op.noise_sd / np.sqrt(2))
        z = z + noise[0] + 1j * noise[1]
    return z


# -- file formats -------------------------------------------------------------

def load_grid(path) -> AdmittanceModel:
    with open(path) as fh:
        spec = json.load(fh)
    return grid_from_dict(spec)


def grid_from_dict(spec: dict, drop_branch: int | None = None) -> AdmittanceModel:
    n = int(spec["node_count"])
    branches = []
    for k, b in enumerate(spec["branches"]):
        if k == drop_branch:
            continue
        y = 1.0 / complex(b["r"], b["x"])
        half = 0.5j * b.get("b", 0.0)
        branches.append(Branch(int(b["from"]), int(b["to"]), y, half, half))
    shunts = np.zeros(n, dtype=complex)
    for sh in spec.get("shunts", []):
        shunts[int(sh["bus"])] += complex(sh.get("g", 0.0), sh.get("b", 0.0))
    return build_admittance(branches, n, int(spec.get("slack", 0)), shunts)


def bundled_grid_path(n: int) -> Path:
    return DATA_DIR / f"grid{n}.json"


def synthetic_grid_spec(n: int, seed: int, extra_edges: int | None = None) -> dict:
    """Random radial backbone plus a few meshing branches, in grid-file form."""
    rng = np.random.default_rng(seed)
    if extra_edges is None:
        extra_edges = max(1, n // 4)
    edges = []
    for k in range(1, n):
        lo = max(0, k - 4)
        edges.append((int(rng.integers(lo, k)), k))
    existing = {frozenset(e) for e in edges}
    while len(edges) < n - 1 + extra_edges:
        i, j = (int(x) for x in rng.choice(n, 2, replace=False))
        if frozenset((i, j)) not in existing:
            existing.add(frozenset((i, j)))
            edges.append((min(i, j), max(i, j)))
    branches = []
    for i, j in edges:
        x = float(np.round(rng.uniform(0.04, 0.15), 4))
        r = float(np.round(x * rng.uniform(0.2, 0.5), 4))
        branches.append({"from": i, "to": j, "r": r, "x": x, "b": 0.0})
    return {"node_count": n, "slack": 0, "branches": branches, "shunts": []}


def write_series_csv(path, series: Sequence[PhasorSeries]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bus", "re", "im", "quantity"])
        for ser in series:
            n, T = ser.values.shape
            for t in range(T):
                for b in range(n):
                    val = ser.values[b, t]
                    w.writerow([t, b, repr(float(val.real)), repr(float(val.imag)), ser.quantity])


def read_series_csv(path, step_hours: float = 1.0) -> dict:
    rows: dict = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(rec["quantity"], []).append(
                (int(rec["t"]), int(rec["bus"]), float(rec["re"]), float(rec["im"])))
    out = {}
    for q, recs in rows.items():
        n = max(r[1] for r in recs) + 1
        T = max(r[0] for r in recs) + 1
        vals = np.zeros((n, T), dtype=complex)
        for t, b, re, im in recs:
            vals[b, t] = complex(re, im)
        out[q] = PhasorSeries(vals, q, step_hours)
    return out
