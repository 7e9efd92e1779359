"""Reproducible experiment runner and report writers."""
from dataclasses import asdict, dataclass, field
import csv
import json
from pathlib import Path
import time

import numpy as np
import yaml

from .bandits import EnvironmentSpec, InvalidEnvironmentError
from .netslice import DEFAULT_C1_RANGE, DEFAULT_C2_RANGE
from .rng import split
from .samplers import ConfigError, RptsConfig
from .simulate import run_netslice, run_particle_bandit, run_ts_beta, run_ts_kalman
from .survival import divergence_diagram, drift_matrix, survival_condition_check

ALGORITHMS = ("ts_beta", "ts_kalman", "pts", "rpts", "ctx_pts", "ctx_rpts")
_COMPATIBLE = {
    "ts_beta": ("bernoulli",),
    "ts_kalman": ("linear",),
    "pts": ("bernoulli", "max_bernoulli", "linear"),
    "rpts": ("bernoulli", "max_bernoulli", "linear"),
    "ctx_pts": ("netslice",),
    "ctx_rpts": ("netslice",),
}
REGRET_HEADER = ("t", "mean_avg_regret", "stderr_avg_regret", "mean_cum_regret", "stderr_cum_regret")


@dataclass
class RecordFlags:
    log_weights: bool = False
    arm_frequency: bool = True
    particle_snapshots: bool = False
    traces: bool = False


@dataclass
class ExperimentConfig:
    env: dict
    algorithm: str
    N: int = 100
    rpts: RptsConfig = field(default_factory=RptsConfig)
    horizon: int = 1000
    runs: int = 200
    base_seed: int = 0
    record: RecordFlags = field(default_factory=RecordFlags)
    record_stride: int = 10
    output_dir: str = "out"
    particle_method: str = "whole_particle"
    c1_range: tuple = DEFAULT_C1_RANGE
    c2_range: tuple = DEFAULT_C2_RANGE

    _KEYS = {
        "env", "algorithm", "N", "rpts", "horizon", "runs", "base_seed", "record",
        "record_stride", "output_dir", "particle_method", "c1_range", "c2_range",
    }

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping at top level")
        unknown = set(raw) - cls._KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("env", "algorithm"):
            if key not in raw:
                raise ConfigError(f"missing required key {key!r}")
        d = dict(raw)
        if not isinstance(d["env"], dict):
            raise ConfigError("'env' must be a mapping")
        d["env"] = dict(d["env"])
        try:
            d["rpts"] = RptsConfig(**(d.get("rpts") or {}))
        except TypeError as exc:
            raise ConfigError(f"rpts: {exc}") from None
        rec = d.get("record") or {}
        bad = set(rec) - set(RecordFlags.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown record flags: {sorted(bad)}")
        d["record"] = RecordFlags(**{k: bool(v) for k, v in rec.items()})
        for key in ("N", "horizon", "runs", "base_seed", "record_stride"):
            if key in d and (isinstance(d[key], bool) or not isinstance(d[key], int)):
                raise ConfigError(f"{key!r} must be an integer, got {d[key]!r}")
        for key in ("c1_range", "c2_range"):
            if key in d:
                d[key] = tuple(float(x) for x in d[key])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        kind = self.env.get("kind")
        if kind not in _COMPATIBLE[self.algorithm]:
            raise ConfigError(f"algorithm {self.algorithm!r} is incompatible with env kind {kind!r}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be >= 1")
        if self.algorithm in ("rpts", "ctx_rpts"):
            self.rpts.check(self.N)
        if not self.random_theta:
            try:
                EnvironmentSpec.from_dict(self.env)
            except (InvalidEnvironmentError, TypeError) as exc:
                raise ConfigError(f"env: {exc}") from None
        elif kind != "netslice":
            raise ConfigError("theta_star: random is only supported for netslice")

    @property
    def random_theta(self):
        return self.env.get("theta_star") == "random"

    def env_for_seed(self, seed):
        """Environment of one run; a random netslice ``theta_star`` is drawn from the run seed."""
        if not self.random_theta:
            return EnvironmentSpec.from_dict(self.env)
        env = dict(self.env)
        counts = tuple(env["block_counts"])
        env["theta_star"] = split(seed, 4)[3].random(2 * sum(counts))
        return EnvironmentSpec.from_dict(env)

    def to_dict(self):
        d = asdict(self)
        d["c1_range"] = list(self.c1_range)
        d["c2_range"] = list(self.c2_range)
        return d


def load_config(path):
    text = Path(path).read_text(encoding="utf-8")
    raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    return ExperimentConfig.from_dict(raw)


@dataclass
class AggregateResult:
    mean_avg_regret: np.ndarray
    stderr_avg_regret: np.ndarray
    mean_cum_regret: np.ndarray
    stderr_cum_regret: np.ndarray
    runs: int
    wall_clock: float = 0.0


def aggregate(traces):
    cum = np.array([tr.cumulative for tr in traces])
    avg = np.array([tr.running_average for tr in traces])
    n = cum.shape[0]

    def stderr(x):
        if n < 2:
            return np.zeros(x.shape[1])
        return x.std(axis=0, ddof=1) / np.sqrt(n)

    return AggregateResult(avg.mean(axis=0), stderr(avg), cum.mean(axis=0), stderr(cum), n)


def run_one(cfg, seed):
    env = cfg.env_for_seed(seed)
    stride = cfg.record_stride if cfg.record.log_weights else 0
    alg = cfg.algorithm
    if alg == "ts_beta":
        return run_ts_beta(env, cfg.horizon, seed)
    if alg == "ts_kalman":
        return run_ts_kalman(env, cfg.horizon, seed)
    if alg in ("pts", "rpts"):
        return run_particle_bandit(
            env, cfg.N, cfg.horizon, seed, rpts=cfg.rpts if alg == "rpts" else None,
            stride=stride, method=cfg.particle_method,
        )
    return run_netslice(env, cfg.N, cfg.horizon, seed, rpts=cfg.rpts if alg == "ctx_rpts" else None,
                        c1_range=cfg.c1_range, c2_range=cfg.c2_range)


def _run_one_star(args):
    return run_one(*args)


def run_experiment(cfg, workers=1, write=True):
    """Run ``cfg.runs`` seeded simulations and aggregate; returns ``(AggregateResult, records)``."""
    start = time.perf_counter()
    seeds = [cfg.base_seed + r for r in range(cfg.runs)]
    if workers > 1:
        from multiprocessing import get_context

        with get_context("spawn").Pool(workers) as pool:
            records = pool.map(_run_one_star, [(cfg, s) for s in seeds])
    else:
        records = [run_one(cfg, s) for s in seeds]
    result = aggregate([r.regret for r in records])
    result.wall_clock = time.perf_counter() - start
    if write:
        write_outputs(cfg, result, records)
    return result, records


def fmt(x):
    """Shortest repr that parses back to the same float."""
    return repr(float(x))


def _write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_regret_csv(path, result):
    rows = (
        (t + 1, fmt(result.mean_avg_regret[t]), fmt(result.stderr_avg_regret[t]),
         fmt(result.mean_cum_regret[t]), fmt(result.stderr_cum_regret[t]))
        for t in range(result.mean_avg_regret.shape[0])
    )
    _write_csv(Path(path), REGRET_HEADER, rows)


def read_regret_csv(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != REGRET_HEADER:
        raise ValueError(f"unexpected header in {path}")
    arr = np.array([[float(x) for x in row[1:]] for row in rows[1:]])
    return AggregateResult(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], runs=0)


def write_trace_csv(path, trace):
    inst, cum, avg = trace.instantaneous, trace.cumulative, trace.running_average
    rows = ((t + 1, fmt(inst[t]), fmt(cum[t]), fmt(avg[t])) for t in range(trace.T))
    _write_csv(Path(path), ("t", "instantaneous", "cumulative", "running_average"), rows)


def read_trace_csv(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(x) for x in row[1:]] for row in rows])


def write_outputs(cfg, result, records):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_regret_csv(out / "regret.csv", result)

    summary = []
    for rec in records:
        row = [rec.seed, fmt(rec.regret.cumulative[-1]), fmt(rec.regret.running_average[-1]), len(rec.regen_steps)]
        if cfg.record.arm_frequency and rec.arm_counts is not None:
            row.append(" ".join(str(int(c)) for c in rec.arm_counts))
        summary.append(row)
    header = ["seed", "final_cum_regret", "final_avg_regret", "regenerations"]
    if cfg.record.arm_frequency:
        header.append("arm_counts")
    _write_csv(out / "runs.csv", header, summary)

    for rec in records:
        tag = f"seed_{rec.seed}"
        if cfg.record.traces:
            write_trace_csv(out / "traces" / f"{tag}.csv", rec.regret)
        if cfg.record.log_weights and rec.log_weight_trace is not None:
            lw = rec.log_weight_trace
            n = lw.shape[1]
            rows = ((k * rec.stride, *(fmt(x) for x in lw[k])) for k in range(lw.shape[0]))
            _write_csv(out / "log_weights" / f"{tag}.csv", ["t"] + [f"p{i}" for i in range(n)], rows)
        if cfg.record.particle_snapshots and rec.final_particles is not None:
            write_particle_snapshot(out / "particles" / f"{tag}.csv", rec)


def write_particle_snapshot(path, rec):
    init = np.asarray(rec.initial_particles).reshape(len(rec.final_log_weights.reshape(-1)), -1)
    final = np.asarray(rec.final_particles).reshape(init.shape[0], -1)
    avg = rec.avg_weights if rec.avg_weights is not None else np.full(init.shape[0], np.nan)
    lw = rec.final_log_weights.reshape(-1)
    k = init.shape[1]
    header = (["particle"] + [f"init_{j}" for j in range(k)] + [f"final_{j}" for j in range(k)]
              + ["avg_weight", "final_log_weight"])
    rows = ((i, *(fmt(x) for x in init[i]), *(fmt(x) for x in final[i]), fmt(avg[i]), fmt(lw[i]))
            for i in range(init.shape[0]))
    _write_csv(Path(path), header, rows)


def read_particle_snapshot(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    arr = np.array([[float(x) for x in row] for row in rows[1:]])
    k = sum(1 for h in header if h.startswith("init_"))
    return {
        "initial": arr[:, 1:1 + k],
        "final": arr[:, 1 + k:1 + 2 * k],
        "avg_weight": arr[:, 1 + 2 * k],
        "final_log_weight": arr[:, 2 + 2 * k],
    }


def envelope_report(theta_star, particles):
    """Rows ``(breakpoint, particle_a, particle_b, in_contraction_set)``; ``particle_b`` empty at boundaries."""
    diagram = divergence_diagram(theta_star, particles)
    in_r = set(diagram.contraction_set)
    rows = []
    for r, parts in zip(diagram.breakpoints, diagram.breakpoint_particles):
        b = parts[1] if len(parts) == 2 else ""
        rows.append((r, parts[0], b, r in in_r))
    return rows


def write_envelope_csv(fh, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("breakpoint", "particle_a", "particle_b", "in_contraction_set"))
    for r, a, b, flag in rows:
        w.writerow((fmt(r), a, b, int(flag)))


def survival_report(run_dir, tol=0.01):
    """Drift-matrix survival check for every recorded particle snapshot in ``run_dir``.

    Uses the recorded running-average weights as the empirical ``pi``. Writes
    ``survival.csv`` (one verdict per run) and ``survival_detail.csv`` (per
    particle ``pi`` and ``(pi D)``) and returns the per-run rows.
    """
    run_dir = Path(run_dir)
    cfg = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    snap_dir = run_dir / "particles"
    files = sorted(snap_dir.glob("seed_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise FileNotFoundError(f"no particle snapshots under {snap_dir}; run with record.particle_snapshots")
    env = EnvironmentSpec.from_dict(cfg["env"])
    summary, detail = [], []
    for f in files:
        seed = int(f.stem.split("_")[1])
        snap = read_particle_snapshot(f)
        pi = snap["avg_weight"] / snap["avg_weight"].sum()
        rep = survival_condition_check(pi, drift_matrix(env, snap["final"]), tol)
        summary.append((seed, rep.verdict, len(rep.support), fmt(tol)))
        for i in range(pi.size):
            detail.append((seed, i, fmt(pi[i]), fmt(rep.pi_d[i]), fmt(rep.gaps[i]), int(i in rep.support)))
    _write_csv(run_dir / "survival.csv", ("seed", "verdict", "survivors", "tol"), summary)
    _write_csv(run_dir / "survival_detail.csv", ("seed", "particle", "pi", "pi_D", "gap", "supported"), detail)
    return summary
