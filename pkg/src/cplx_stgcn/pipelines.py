"""Experiment pipelines: data generation, training/evaluation, bound sweeps, topology transfer."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bounds
from .grid import (AdmittanceModel, LoadProfile, PhasorSeries, build_measurement_operator,
                   bundled_grid_path, grid_from_dict, simulate_series, synth_load_series,
                   write_series_csv)
from .metrics import MetricsReport, compute_metrics, constant_baseline_accuracy
from .nn import (StgcnConfig, StgcnModel, TrainConfig, TrainingSet, forward, load_checkpoint,
                 normalized_gso, save_checkpoint, train)
from .sensing import (SensorPlan, WindowedDataset, build_dataset, dataset_from_records,
                      greedy_sensor_placement, read_dataset_jsonl, write_dataset_jsonl)
from .spectral import spectral_decompose

MODES = ("pssf", "fdi", "verify-bounds", "datagen", "place")
SPLIT = (0.70, 0.15)


@dataclass
class RunConfig:
    grid: str = "bundled:30"
    seed: int = 0
    mode: str = "pssf"
    out: str = "runs"
    # data
    steps: int = 800
    window: int = 10
    horizon: int = 0
    noise_sd: float = 0.01
    base_load: float = 0.04
    n_frequencies: int = 8
    n_sensors: int = 15
    mu1: float = 1e-6
    # attacks
    attack_size: int = 5
    attack_sizes: tuple = (3, 5, 8)
    alpha: float = 0.1
    hybrid_rate: float = 0.5
    fdi_dataset: str = "attacked"
    # model and training
    graph_taps: int = 5
    temporal_channels: int = 10
    graph_channels: int = 10
    hidden: tuple = (64, 64)
    mu2: float = 1e-4
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 32
    threshold: float = 0.5
    # bounds
    bound_kinds: tuple = bounds.KINDS
    bound_sizes: tuple = (8,)
    bound_orders: tuple = (1, 2, 4)
    eps_ladder: tuple = (0.0, 0.01, 0.05, 0.1)
    bound_seeds: tuple = (0, 1)
    bound_trials: int = 100
    # topology transfer
    tripped_line: int | None = None

    def __post_init__(self):
        for name in ("attack_sizes", "hidden", "bound_kinds", "bound_sizes", "bound_orders",
                     "eps_ladder", "bound_seeds"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.window < 1:
            raise ValueError("window T must be >= 1")
        if self.horizon < 0:
            raise ValueError("horizon H must be >= 0")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")
        if self.mu1 < 0 or self.mu2 < 0:
            raise ValueError("mu1 and mu2 must be >= 0")
        if self.noise_sd < 0 or self.alpha < 0 or self.base_load < 0:
            raise ValueError("noise_sd, alpha and base_load must be >= 0")
        if not 0 <= self.hybrid_rate <= 1:
            raise ValueError("hybrid_rate must be in [0, 1]")
        if self.fdi_dataset not in ("attacked", "hybrid"):
            raise ValueError("fdi_dataset must be 'attacked' or 'hybrid'")
        if self.n_sensors < self.n_frequencies:
            raise ValueError("n_sensors must be >= n_frequencies")
        if self.steps < self.window + self.horizon:
            raise ValueError("steps must be >= window + horizon")
        for e in self.eps_ladder:
            if not 0 <= e < 1:
                raise ValueError(f"eps ladder entry {e} outside [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


# -- shared setup -------------------------------------------------------------

def load_grid_spec(config: RunConfig) -> dict:
    if config.grid.startswith("bundled:"):
        path = bundled_grid_path(int(config.grid.split(":", 1)[1]))
    else:
        path = Path(config.grid)
    if not path.exists():
        raise ValueError(f"grid file {path} not found")
    with open(path) as fh:
        return json.load(fh)


@dataclass
class Benchmark:
    spec: dict
    model: AdmittanceModel
    plan: SensorPlan
    voltages: PhasorSeries
    currents: PhasorSeries
    injections: np.ndarray = field(repr=False)


def place(model: AdmittanceModel, config: RunConfig) -> SensorPlan:
    if config.n_sensors > model.node_count:
        raise ValueError(f"n_sensors={config.n_sensors} exceeds bus count {model.node_count}")
    return greedy_sensor_placement(spectral_decompose(model.Y), config.n_frequencies, config.n_sensors)


def profile_for(config: RunConfig) -> LoadProfile:
    # the per-bus clip scales with the base so heavy-load configs are not silently capped
    return LoadProfile(base_load=config.base_load, max_load=12.5 * config.base_load)


def prepare_benchmark(config: RunConfig, drop_branch: int | None = None,
                      plan: SensorPlan | None = None) -> Benchmark:
    spec = load_grid_spec(config)
    model = grid_from_dict(spec, drop_branch=drop_branch)
    plan = plan or place(model, config)
    inj = synth_load_series(model.node_count, config.steps, config.seed, profile_for(config),
                            model.slack)
    V, I = simulate_series(model, inj)
    return Benchmark(spec, model, plan, V, I, inj)


def make_dataset(bench: Benchmark, config: RunConfig, mode: str, attack_size: int | None = None) -> WindowedDataset:
    op = build_measurement_operator(bench.model, bench.plan.buses, config.noise_sd)
    return build_dataset(bench.voltages, op, bench.model, mode, window=config.window,
                         horizon=config.horizon, mu1=config.mu1, rate=config.hybrid_rate,
                         attack_size=config.attack_size if attack_size is None else attack_size,
                         alpha=config.alpha, seed=config.seed)


def split_indices(n: int) -> tuple:
    """Chronological 70/15/15 split of window indices (no shuffling across time)."""
    a = int(round(SPLIT[0] * n))
    b = int(round((SPLIT[0] + SPLIT[1]) * n))
    return np.arange(a), np.arange(a, b), np.arange(b, n)


def disjoint_split(data: WindowedDataset) -> tuple:
    """Train/val/test windows whose time spans (including the target step) do not overlap.

    Windows overlap by T - 1 steps, so the first T - 1 + H windows of the
    validation and test blocks are dropped.
    """
    tr, va, te = split_indices(len(data))
    span = data.window + data.horizon - 1

    def after(idx, prev):
        if len(prev) == 0 or len(idx) == 0:
            return idx
        last = data.t[prev[-1]] + data.horizon
        return idx[data.t[idx] - data.window + 1 > last]

    va = after(va, tr)
    te = after(te, va if len(va) else tr)
    if min(len(tr), len(te)) == 0:
        raise ValueError(f"series too short for a train/test split with span {span}")
    return tr, va, te


def _training_set(data: WindowedDataset, task: str) -> TrainingSet:
    if task == "pssf":
        return TrainingSet(data.inputs, data.targets, data.v_meas, data.i_meas, data.observed)
    return TrainingSet(data.inputs, data.labels)


def new_model(n_nodes: int, n_outputs: int, task: str, config: RunConfig, train_data: WindowedDataset) -> StgcnModel:
    cfg = StgcnConfig(n_nodes, config.window, config.temporal_channels, config.graph_taps,
                      config.graph_channels, config.hidden,
                      "regression" if task == "pssf" else "classification", n_outputs)
    model = StgcnModel.init(cfg, config.seed)
    X = train_data.inputs
    offset = X.mean(axis=(0, 2))
    model.input_offset = offset
    model.input_scale = float(np.std(X - offset[None, :, None])) or 1.0
    if task == "pssf":
        model.target_offset = train_data.targets.mean(axis=0)
        # tanh saturates near +-1: leave room for excursions beyond the training range
        model.target_scale = float(4 * np.std(train_data.targets - model.target_offset)) or 1.0
    return model


def fit(task: str, data: WindowedDataset, model_grid: AdmittanceModel, config: RunConfig, log=None):
    """Train on the chronological split. Returns (model, trace, (train, val, test) indices)."""
    tr, va, te = disjoint_split(data)
    n_out = model_grid.node_count if task == "pssf" else data.observed.size
    model = new_model(model_grid.node_count, n_out, task, config, data.subset(tr))
    tc = TrainConfig(lr=config.lr, epochs=config.epochs, batch_size=config.batch_size,
                     seed=config.seed, mu2=config.mu2)
    S_layer = normalized_gso(model_grid.Y)
    best, trace = train(model, _training_set(data.subset(tr), task), tc, S_layer, model_grid.Y,
                        val=_training_set(data.subset(va), task) if len(va) else None, log=log)
    return best, trace, (tr, va, te)


def evaluate(task: str, model: StgcnModel, data: WindowedDataset, Y, threshold: float = 0.5) -> dict:
    """Metrics of ``model`` on ``data`` using GSO ``Y`` (plus baselines)."""
    pred, _ = forward(model, normalized_gso(Y), data.inputs)
    if task == "pssf":
        rep = compute_metrics(pred, data.targets, "regression")
        # RLS estimate of the latest step; for H > 0 it serves as a persistence forecast
        rls = compute_metrics(data.inputs[:, :, -1], data.targets, "regression")
        return {"model": rep, "rls_mse": rls.mse, "samples": len(data)}
    rep = compute_metrics(pred, data.labels, "classification", threshold)
    return {"model": rep, "zeros_accuracy": constant_baseline_accuracy(data.labels, 0),
            "ones_accuracy": constant_baseline_accuracy(data.labels, 1), "samples": len(data)}


# -- in-process experiments ---------------------------------------------------

def run_pssf(config: RunConfig, bench: Benchmark | None = None) -> dict:
    """Train the regression head on clean data; held-out MSE against the RLS baseline."""
    bench = bench or prepare_benchmark(config)
    data = make_dataset(bench, config, "clean")
    model, trace, (_, _, te) = fit("pssf", data, bench.model, config)
    ev = evaluate("pssf", model, data.subset(te), bench.model.Y)
    return {"model": model, "trace": trace, "mse": ev["model"].mse, "rls_mse": ev["rls_mse"],
            "test_samples": ev["samples"], "bench": bench, "data": data, "test_idx": te}


def run_fdi(config: RunConfig, attack_size: int | None = None, bench: Benchmark | None = None) -> dict:
    """Train the localization head; held-out per-label metrics and constant baselines."""
    bench = bench or prepare_benchmark(config)
    data = make_dataset(bench, config, config.fdi_dataset, attack_size)
    model, trace, (_, _, te) = fit("fdi", data, bench.model, config)
    ev = evaluate("fdi", model, data.subset(te), bench.model.Y, config.threshold)
    return {"model": model, "trace": trace, "report": ev["model"], "zeros_accuracy": ev["zeros_accuracy"],
            "ones_accuracy": ev["ones_accuracy"], "test_samples": ev["samples"], "bench": bench,
            "data": data, "test_idx": te}


def topology_transfer(config: RunConfig, model: StgcnModel, line: int, bench: Benchmark | None = None,
                      task: str = "pssf") -> list:
    """Evaluate fixed parameters on the original, tripped and restored topologies.

    The tripped case re-simulates the same loads on the new grid and swaps in
    its GSO; the trained parameters are untouched.
    """
    bench = bench or prepare_benchmark(config)
    n_br = len(bench.spec["branches"])
    if not 0 <= line < n_br:
        raise ValueError(f"line index {line} out of range (grid has {n_br} branches)")
    rows = []
    for label, drop in (("original", None), ("tripped", line), ("restored", None)):
        # the restored grid is rebuilt from the file, not reused
        b = bench if label == "original" else prepare_benchmark(config, drop_branch=drop, plan=bench.plan)
        data = make_dataset(b, config, "clean" if task == "pssf" else config.fdi_dataset)
        _, _, te = disjoint_split(data)
        ev = evaluate(task, model, data.subset(te), b.model.Y, config.threshold)
        rep = ev["model"]
        rows.append({"topology": label, "tripped_line": line if drop is not None else None,
                     "mse": rep.mse, "accuracy": rep.accuracy, "samples": ev["samples"],
                     "finite": bool(np.isfinite(rep.mse if task == "pssf" else rep.accuracy))})
    base = rows[0]["mse"] if task == "pssf" else rows[0]["accuracy"]
    for r in rows:
        val = r["mse"] if task == "pssf" else r["accuracy"]
        r["inflation"] = float(val / base) if base else float("inf")
    return rows


def default_trip_line(spec: dict) -> int:
    """First branch whose removal keeps the grid connected."""
    from .errors import GridError
    for k in range(len(spec["branches"])):
        try:
            grid_from_dict(spec, drop_branch=k)
            return k
        except GridError:
            continue
    raise ValueError("every branch is a bridge; no line can be tripped")


# -- file outputs -------------------------------------------------------------

def _outdir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, rows: list) -> None:
    keys: list = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})


def cmd_place(config: RunConfig) -> SensorPlan:
    spec = load_grid_spec(config)
    plan = place(grid_from_dict(spec), config)
    with open(_outdir(config) / "plan.json", "w") as fh:
        fh.write(plan.to_json() + "\n")
    return plan


def cmd_datagen(config: RunConfig) -> dict:
    """Phasor series, sensor plan, clean/attacked/hybrid datasets and a manifest."""
    out = _outdir(config)
    bench = prepare_benchmark(config)
    write_series_csv(out / "series.csv", [bench.voltages, bench.currents])
    with open(out / "plan.json", "w") as fh:
        fh.write(bench.plan.to_json() + "\n")
    files = {}
    counts = {}
    for mode in ("clean", "attacked", "hybrid"):
        data = make_dataset(bench, config, mode)
        name = f"dataset_{mode}.jsonl"
        write_dataset_jsonl(out / name, data)
        files[mode] = name
        counts[mode] = len(data)
    cfg = {k: v for k, v in config.to_dict().items() if k != "out"}
    manifest = {"config": cfg, "seed": config.seed, "series": "series.csv",
                "plan": "plan.json", "datasets": files, "samples": counts,
                "node_count": bench.model.node_count,
                "expected_samples": config.steps - config.window - config.horizon + 1}
    _write_json(out / "manifest.json", manifest)
    return manifest


def _load_generated(config: RunConfig, data_dir, task: str):
    d = Path(data_dir)
    man_path = d / "manifest.json"
    if not man_path.exists():
        raise FileNotFoundError(f"{man_path} missing; run datagen first")
    with open(man_path) as fh:
        manifest = json.load(fh)
    gen = RunConfig.from_dict(manifest["config"])
    spec = load_grid_spec(gen)
    model = grid_from_dict(spec)
    with open(d / manifest["plan"]) as fh:
        plan = SensorPlan.from_json(fh.read())
    op = build_measurement_operator(model, plan.buses, gen.noise_sd)
    mode = "clean" if task == "pssf" else config.fdi_dataset
    recs = read_dataset_jsonl(d / manifest["datasets"][mode])
    data = dataset_from_records(recs, op, model, gen.mu1, gen.horizon)
    return gen, model, plan, data


def _task(config: RunConfig) -> str:
    return "fdi" if config.mode == "fdi" else "pssf"


def _metric_rows(task: str, ev: dict, extra: dict) -> list:
    rep: MetricsReport = ev["model"]
    row = dict(extra)
    if task == "pssf":
        row.update(estimator="cplx-stgcn", mse=rep.mse)
        return [row, dict(extra, estimator="rls", mse=ev["rls_mse"])]
    row.update(estimator="cplx-stgcn", accuracy=rep.accuracy, precision=rep.precision,
               recall=rep.recall, f1=rep.f1, tp=rep.tp, fp=rep.fp, fn=rep.fn, tn=rep.tn,
               flags=rep.flags)
    return [row, dict(extra, estimator="all-zeros", accuracy=ev["zeros_accuracy"]),
            dict(extra, estimator="all-ones", accuracy=ev["ones_accuracy"])]


def cmd_train_eval(config: RunConfig, data_dir=None, log=None) -> dict:
    """Train on generated data (``data_dir``) or a fresh benchmark; write checkpoint and metrics."""
    out = _outdir(config)
    task = _task(config)
    if data_dir is not None:
        gen, grid_model, _, data = _load_generated(config, data_dir, task)
        if gen.window != config.window:
            raise ValueError("config window differs from the generated dataset")
        datasets = {gen.attack_size: data}
    else:
        bench = prepare_benchmark(config)
        grid_model = bench.model
        sizes = config.attack_sizes if task == "fdi" else (0,)
        datasets = {c: make_dataset(bench, config, "clean" if task == "pssf" else config.fdi_dataset, c)
                    for c in sizes}
    rows = []
    t0 = time.time()
    for c, data in datasets.items():
        model, trace, (_, _, te) = fit(task, data, grid_model, config, log=log)
        ev = evaluate(task, model, data.subset(te), grid_model.Y, config.threshold)
        extra = {"seed": config.seed, "task": task, "test_samples": ev["samples"]}
        if task == "fdi":
            extra["attack_size"] = c
        rows += _metric_rows(task, ev, extra)
        ck = "checkpoint.json" if len(datasets) == 1 else f"checkpoint_c{c}.json"
        save_checkpoint(model, out / ck, {"task": task, "seed": config.seed, "attack_size": c,
                                          "epochs": len(trace)})
    _write_csv(out / "metrics.csv", rows)
    result = {"task": task, "rows": rows, "seconds": time.time() - t0}
    _write_json(out / "metrics.json", {"task": task, "rows": rows})
    return result


def cmd_eval(config: RunConfig, checkpoint, data_dir=None) -> dict:
    """Evaluate a saved checkpoint on the held-out split."""
    out = _outdir(config)
    task = _task(config)
    model = load_checkpoint(checkpoint)
    if data_dir is not None:
        _, grid_model, _, data = _load_generated(config, data_dir, task)
    else:
        bench = prepare_benchmark(config)
        grid_model = bench.model
        data = make_dataset(bench, config, "clean" if task == "pssf" else config.fdi_dataset)
    _, _, te = disjoint_split(data)
    ev = evaluate(task, model, data.subset(te), grid_model.Y, config.threshold)
    rows = _metric_rows(task, ev, {"seed": config.seed, "task": task, "test_samples": ev["samples"]})
    _write_csv(out / "eval.csv", rows)
    _write_json(out / "eval.json", {"task": task, "rows": rows})
    return {"task": task, "rows": rows}


def cmd_verify_bounds(config: RunConfig) -> list:
    """One CSV/JSON row per (kind, size, K, eps, seed)."""
    out = _outdir(config)
    reports = bounds.bound_sweep(config.bound_kinds, config.bound_sizes, config.bound_orders,
                                 config.eps_ladder, config.bound_seeds, config.bound_trials)
    rows = [r.to_row() for r in reports]
    _write_csv(out / "bounds.csv", rows)
    with open(out / "bounds.json", "w") as fh:
        fh.write(bounds.reports_to_json(reports) + "\n")
    return reports


def cmd_topology_transfer(config: RunConfig, checkpoint=None, line: int | None = None) -> list:
    """Old-GSO / new-GSO / restored metrics for one tripped line."""
    out = _outdir(config)
    task = _task(config)
    bench = prepare_benchmark(config)
    if checkpoint is not None:
        model = load_checkpoint(checkpoint)
    else:
        res = run_pssf(config, bench) if task == "pssf" else run_fdi(config, bench=bench)
        model = res["model"]
    if line is None:
        line = config.tripped_line if config.tripped_line is not None else default_trip_line(bench.spec)
    rows = topology_transfer(config, model, line, bench, task)
    _write_csv(out / "transfer.csv", rows)
    _write_json(out / "transfer.json", {"task": task, "rows": rows})
    return rows
