"""Seeded experiment runs and the tab-separated metrics format.

Metrics files have one header line followed by one line per step. Floats
are written with ``repr`` so a parse recovers them bit for bit. Columns::

    run_id step usage usage_power power_w subarrays latency_s loss reward
    term_usage term_latency term_loss critic_loss q wall_ms discarded
    violations generated delivered flags

``flags`` is a bit mask: 1 when latency exceeds ``t_max``, 2 when loss
exceeds ``l_max`` (only for thresholds that are configured).

The optional topology dump holds ``run_id slot src dst distance_m`` rows.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from glove.agent import GloveAgent
from glove.config import ScenarioConfig, dump_config, substream
from glove.env import ResourceAction, UavEnv
from glove.network import topology_records


class RunAborted(RuntimeError):
    """A module error stopped a run; ``step`` is the index that failed."""

    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"run aborted at step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class StepMetrics:
    run_id: str
    step: int
    usage: float
    usage_power: float
    power_w: float
    subarrays: float
    latency_s: float
    loss: int
    reward: float
    term_usage: float
    term_latency: float
    term_loss: float
    critic_loss: float
    q: float
    wall_ms: float
    discarded: int
    violations: int
    generated: int
    delivered: int
    flags: int = 0


FIELDS = [f.name for f in dataclasses.fields(StepMetrics)]
_TYPES = {f.name: f.type for f in dataclasses.fields(StepMetrics)}
DETERMINISTIC_FIELDS = [f for f in FIELDS if f != "wall_ms"]


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def format_record(m: StepMetrics) -> str:
    return "\t".join(_fmt(getattr(m, f)) for f in FIELDS)


def parse_record(line: str) -> StepMetrics:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != len(FIELDS):
        raise ValueError(f"expected {len(FIELDS)} columns, got {len(parts)}")
    conv = {"str": str, "int": int, "float": float}
    return StepMetrics(**{f: conv[_TYPES[f]](v) for f, v in zip(FIELDS, parts)})


def emit_metrics(records: Iterable[StepMetrics], path, append: bool = False) -> Path:
    """Write records as TSV. With ``append``, the header is only written to a new file."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not (append and path.exists() and path.stat().st_size > 0)
        with path.open("a" if append else "w") as fh:
            if fresh:
                fh.write("\t".join(FIELDS) + "\n")
            for m in records:
                fh.write(format_record(m) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
    return path


def read_metrics(path) -> list[StepMetrics]:
    """Parse a metrics file; repeated header lines (concatenated runs) are skipped."""
    header = "\t".join(FIELDS)
    out = []
    for line in Path(path).read_text().splitlines():
        if not line or line == header:
            continue
        out.append(parse_record(line))
    return out


class MetricsWriter:
    """Streams records to disk as they are produced."""

    def __init__(self, path):
        self.path = Path(path)
        emit_metrics([], self.path)

    def write(self, m: StepMetrics) -> None:
        with self.path.open("a") as fh:
            fh.write(format_record(m) + "\n")


@dataclass
class RunResult:
    metrics: list[StepMetrics]
    agent: GloveAgent | None
    out_dir: Path | None


def threshold_flags(cfg: ScenarioConfig, latency: float, loss: int) -> int:
    flags = 0
    if cfg.t_max is not None and latency > cfg.t_max:
        flags |= 1
    if cfg.l_max is not None and loss > cfg.l_max:
        flags |= 2
    return flags


def _record(cfg, run_id, step, action: ResourceAction, report, reward, usage, wall, diag=None) -> StepMetrics:
    terms = reward.terms
    return StepMetrics(
        run_id=run_id,
        step=step,
        usage=usage.mean,
        usage_power=float(np.mean(usage.U_P)),
        power_w=float(np.mean(action.power.sum(axis=1))),
        subarrays=float(np.mean(action.subarrays)),
        latency_s=report.mean_latency,
        loss=int(report.total_lost),
        reward=reward.r,
        term_usage=terms[0],
        term_latency=terms[1],
        term_loss=terms[2],
        critic_loss=diag.critic_loss if diag else 0.0,
        q=diag.q if diag else 0.0,
        wall_ms=wall * 1e3,
        discarded=diag.discarded if diag else 0,
        violations=diag.violations if diag else 0,
        generated=int(report.total_generated),
        delivered=int(report.total_delivered),
        flags=threshold_flags(cfg, report.mean_latency, int(report.total_lost)),
    )


def _run(
    cfg: ScenarioConfig,
    mode: str,
    steps: int,
    out_dir=None,
    run_id: str | None = None,
    checkpoint=None,
    topology: bool = False,
) -> RunResult:
    run_id = run_id or f"{mode}-s{cfg.seed}"
    env = UavEnv(cfg, horizon=max(steps + 1, 16))
    env.reset()
    agent = None if mode == "baseline" else GloveAgent(cfg, substream(cfg.seed, "init"))
    if checkpoint is not None and agent is not None:
        agent.load(checkpoint)
    explore = substream(cfg.seed, "exploration")

    writer = topo_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.txt").write_text(dump_config(cfg))
        writer = MetricsWriter(out_dir / "metrics.tsv")
        if topology:
            topo_fh = (out_dir / "topology.tsv").open("w")
            topo_fh.write("run_id\tslot\tsrc\tdst\tdistance_m\n")

    records: list[StepMetrics] = []
    try:
        for step in range(steps):
            if topo_fh is not None:
                for slot, i, j, d in topology_records(env.topology):
                    topo_fh.write(f"{run_id}\t{slot}\t{i}\t{j}\t{d!r}\n")
            t0 = time.perf_counter()
            try:
                if mode == "train":
                    _, reward, report, usage, action, diag = agent.train_step(env, explore)
                else:
                    if mode == "baseline":
                        action = env.baseline_action()
                    else:
                        action, _ = agent.act(env)
                    diag = None
                    violations = env.violations(action)
                    _, reward, report, usage = env.step(action)
            except Exception as exc:
                raise RunAborted(step, exc) from exc
            m = _record(cfg, run_id, step, action, report, reward, usage, time.perf_counter() - t0, diag)
            if diag is None:
                m.violations = violations
            records.append(m)
            if writer is not None:
                writer.write(m)
    finally:
        if topo_fh is not None:
            topo_fh.close()
    if out_dir is not None and agent is not None and mode == "train":
        agent.save(out_dir / "checkpoint.txt")
    return RunResult(records, agent, out_dir)


def run_training(cfg: ScenarioConfig, out_dir=None, steps: int | None = None, **kw) -> RunResult:
    """Train for ``steps`` (default ``cfg.steps``) slots; writes metrics and a final checkpoint."""
    return _run(cfg, "train", cfg.steps if steps is None else steps, out_dir, **kw)


def run_eval(cfg: ScenarioConfig, checkpoint=None, steps: int | None = None, out_dir=None, **kw) -> RunResult:
    """Run a fixed policy without noise or updates. No checkpoint means the safe-init policy."""
    return _run(cfg, "eval", cfg.steps if steps is None else steps, out_dir, checkpoint=checkpoint, **kw)


def run_baseline(cfg: ScenarioConfig, steps: int | None = None, out_dir=None, **kw) -> RunResult:
    """Uniform allocation: full power split over bands, sub-arrays split evenly."""
    return _run(cfg, "baseline", cfg.steps if steps is None else steps, out_dir, **kw)


def same_except_wall_time(a: Iterable[StepMetrics], b: Iterable[StepMetrics]) -> bool:
    a, b = list(a), list(b)
    if len(a) != len(b):
        return False
    key = lambda m: tuple(getattr(m, f) for f in DETERMINISTIC_FIELDS)  # noqa: E731
    return all(key(x) == key(y) for x, y in zip(a, b))


def summarize(records: list[StepMetrics]) -> dict[str, float]:
    if not records:
        return {}
    u = np.array([m.usage for m in records])
    lat = np.array([m.latency_s for m in records])
    gen = sum(m.generated for m in records)
    lost = sum(m.loss for m in records)
    return {
        "steps": len(records),
        "usage_first10": float(u[:10].mean()),
        "usage_last50": float(u[-50:].mean()),
        "max_latency_s": float(lat.max()),
        "lost": lost,
        "loss_fraction": lost / gen if gen else 0.0,
        "violations": sum(m.violations for m in records),
        "median_wall_ms": float(np.median([m.wall_ms for m in records])),
    }


def iter_runs(records: list[StepMetrics]) -> Iterator[tuple[str, list[StepMetrics]]]:
    runs: dict[str, list[StepMetrics]] = {}
    for m in records:
        runs.setdefault(m.run_id, []).append(m)
    yield from runs.items()
