"""Experiment orchestration for the six-agent matrix: configs, seeded runs, reports, world checks."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .agent import TEXT_ONLY, WITH_KG, TrainingConfig, train_a2c
from .cells import CellConfig, archive_to_bytes, train_goexplore
from .chain import ChainConfig, train_chained
from .world import INVENTORY, WorldSpec, fixture_path, load_world

# agent -> (state variant, exploration mode)
AGENTS: dict[str, tuple[str, str]] = {
    "a2c": (TEXT_ONLY, "plain"),
    "kg-a2c": (WITH_KG, "plain"),
    "a2c-chained": (TEXT_ONLY, "chained"),
    "kg-a2c-chained": (WITH_KG, "chained"),
    "a2c-explore": (TEXT_ONLY, "explore"),
    "kg-a2c-explore": (WITH_KG, "explore"),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    world: str = str(fixture_path("minigrue"))
    agent: str = "kg-a2c-chained"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    budget: int = 50_000
    bottleneck_score: int | None = None
    # training
    lr: float = 3e-3
    gamma: float = 0.9
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    batch_size: int | None = None
    max_grad_norm: float = 5.0
    reward_scale: float = 0.1
    # chaining
    patience: int = 35
    buffer_size: int = 40
    explore_prob: float = 0.3
    # cells
    cell_step_size: int = 30

    def validate(self) -> None:
        if self.agent not in AGENTS:
            raise ConfigError(f"unknown agent {self.agent!r}; expected one of {', '.join(AGENTS)}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.budget <= 0:
            raise ConfigError("budget must be positive")
        if self.patience < 1 or self.buffer_size < 1 or self.cell_step_size < 1:
            raise ConfigError("patience, buffer_size and cell_step_size must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def variant(self) -> str:
        return AGENTS[self.agent][0]

    @property
    def mode(self) -> str:
        return AGENTS[self.agent][1]

    def effective_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 1 if self.mode == "explore" else 32

    def training(self) -> TrainingConfig:
        return TrainingConfig(lr=self.lr, gamma=self.gamma, entropy_coef=self.entropy_coef,
                              value_coef=self.value_coef, batch_size=self.effective_batch_size(),
                              max_grad_norm=self.max_grad_norm, reward_scale=self.reward_scale)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Stable over everything except the seed list."""
        d = self.to_dict()
        d.pop("seeds")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in doc.items():
            key = k.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {k!r}")
            kwargs[key] = v
        cfg = cls(**kwargs)
        cfg.seeds = [int(s) for s in cfg.seeds]
        cfg.validate()
        return cfg


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    doc.update(overrides or {})
    return ExperimentConfig.from_mapping(doc)


def coerce_value(text: str) -> Any:
    """Parse a ``key=value`` override; JSON literals first, bare strings otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


# -- runs ------------------------------------------------------------------

def asymptotic(series) -> float:
    """Mean of the final 10% of the series (at least one point)."""
    if len(series) == 0:
        return 0.0
    k = max(1, math.ceil(len(series) / 10))
    return float(np.mean(series[-k:]))


@dataclass
class RunRecord:
    agent: str
    seed: int
    config_digest: str
    series: list[int]
    terminal: str
    wall_clock: float
    asymptotic: float
    max_score: int
    steps_used: int
    events: list[dict] = field(default_factory=list)
    fault: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunRecord":
        return cls(**d)


@dataclass
class RunArtifacts:
    """Large by-products kept out of the record itself."""
    log: list[dict] = field(default_factory=list)
    archive: bytes | None = None
    checkpoints: list[bytes] = field(default_factory=list)


def run_seed(config: ExperimentConfig, seed: int, world: WorldSpec | None = None,
             log: Callable[[dict], None] | None = None) -> tuple[RunRecord, RunArtifacts]:
    """One seeded run; module faults end up in ``record.fault`` instead of propagating."""
    config.validate()
    world = world or load_world(config.world)
    art = RunArtifacts()

    def sink(rec):
        art.log.append(rec)
        if log:
            log(rec)

    t0 = time.perf_counter()
    series: list[int] = []
    events: list[dict] = []
    terminal, steps, best, fault = "fault", 0, 0, None
    try:
        if config.mode == "plain":
            r = train_a2c(world, config.variant, config.training(), seed, config.budget, log=sink)
            series, terminal, steps = r.peaks, r.terminal, r.steps_used
            best = max(r.peaks, default=0)
        elif config.mode == "chained":
            cc = ChainConfig(config.training(), config.patience, config.buffer_size, config.explore_prob)
            r = train_chained(world, cc, config.variant, seed, config.budget, log=sink)
            series, terminal, steps = r.peaks, r.terminal, r.steps_used
            best = max(r.peaks, default=0)
            events = [e for e in r.events if "event" in e]
            art.checkpoints = [s.params_blob for s in r.chain.segments]
        else:
            r = train_goexplore(world, CellConfig(config.training(), config.cell_step_size),
                                config.variant, seed, config.budget, log=sink)
            series, terminal, steps = r.scores, r.terminal, r.steps_used
            best = r.archive.best_score
            art.archive = archive_to_bytes(r.archive)
    except RuntimeError as exc:
        fault = f"{type(exc).__name__}: {exc}"
    record = RunRecord(config.agent, seed, config.digest(), [int(s) for s in series], terminal,
                       time.perf_counter() - t0, asymptotic(series), int(best), steps, events, fault)
    return record, art


def write_run(out_dir: Path, record: RunRecord, art: RunArtifacts) -> Path:
    d = Path(out_dir) / record.agent / f"seed{record.seed}"
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "log.jsonl", "w", encoding="utf-8") as fh:
        for rec in art.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(d / "curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "score"])
        w.writerows(enumerate(record.series))
    if art.archive is not None:
        (d / "archive.bin").write_bytes(art.archive)
    for i, blob in enumerate(art.checkpoints):
        (d / f"segment{i}.params").write_bytes(blob)
    # wall clock is the one nondeterministic field, so it lives apart from the record
    (d / "timing.json").write_text(json.dumps({"wall_clock": record.wall_clock}) + "\n")
    doc = record.to_dict()
    doc.pop("wall_clock")
    # written last: its presence marks the seed as complete
    (d / "record.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return d


def read_run(path: str | Path) -> RunRecord:
    """Load ``record.json`` (or the seed directory holding it)."""
    p = Path(path)
    if p.is_dir():
        p = p / "record.json"
    doc = json.loads(p.read_text())
    timing = p.parent / "timing.json"
    doc["wall_clock"] = json.loads(timing.read_text())["wall_clock"] if timing.exists() else 0.0
    return RunRecord.from_dict(doc)


def run(config: ExperimentConfig, out_dir: str | Path | None = None, skip_done: bool = False,
        progress: Callable[[RunRecord], None] | None = None) -> list[RunRecord]:
    """Run every seed of ``config`` sequentially; optionally persist each run under ``out_dir``."""
    config.validate()
    world = load_world(config.world)
    if out_dir is not None:
        out = Path(out_dir) / config.agent
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n")
    records = []
    for seed in config.seeds:
        done = Path(out_dir) / config.agent / f"seed{seed}" / "record.json" if out_dir else None
        if skip_done and done is not None and done.exists():
            records.append(read_run(done))
            continue
        record, art = run_seed(config, seed, world)
        if out_dir is not None:
            write_run(Path(out_dir), record, art)
        if progress:
            progress(record)
        records.append(record)
    return records


def load_records(root: str | Path) -> list[RunRecord]:
    return [read_run(p) for p in sorted(Path(root).glob("**/record.json"))]


# -- report ----------------------------------------------------------------

@dataclass
class ReportRow:
    agent: str
    runs: int
    mean_asymptotic: float
    std_asymptotic: float
    pass_rate: float
    mean_max: float


def report(records: list[RunRecord], bottleneck_score: int) -> list[ReportRow]:
    """One row per agent, in matrix order; pass = max score above ``bottleneck_score``."""
    if not records:
        raise ValueError("no run records")
    rows = []
    order = list(AGENTS) + sorted({r.agent for r in records} - set(AGENTS))
    for agent in order:
        rs = [r for r in records if r.agent == agent]
        if not rs:
            continue
        a = np.array([r.asymptotic for r in rs])
        rows.append(ReportRow(
            agent, len(rs), float(a.mean()), float(a.std()),
            sum(r.max_score > bottleneck_score for r in rs) / len(rs),
            float(np.mean([r.max_score for r in rs])),
        ))
    return rows


def write_report(rows: list[ReportRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["agent", "runs", "mean_asymptotic", "std_asymptotic", "pass_rate", "mean_max"])
        for r in rows:
            w.writerow([r.agent, r.runs, f"{r.mean_asymptotic:.3f}", f"{r.std_asymptotic:.3f}",
                        f"{r.pass_rate:.2f}", f"{r.mean_max:.2f}"])


def format_report(rows: list[ReportRow]) -> str:
    lines = [f"{'agent':<16} {'runs':>4} {'reward':>8} {'std':>7} {'pass':>5}"]
    for r in rows:
        lines.append(f"{r.agent:<16} {r.runs:>4} {r.mean_asymptotic:>8.2f} {r.std_asymptotic:>7.2f} {r.pass_rate:>5.2f}")
    return "\n".join(lines) + "\n"


# -- world checks ----------------------------------------------------------

def reachable_rooms(world: WorldSpec, avoid: frozenset[str] = frozenset(), need_light: bool = True) -> set[str]:
    """Rooms reachable over exits, skipping ``avoid`` and lethal rooms when no light can be had."""
    lit = not need_light or _light_available(world)
    seen, stack = {world.start_room}, [world.start_room]
    while stack:
        room = stack.pop()
        for target in world.rooms[room].exits.values():
            if target in seen or target in avoid:
                continue
            hz = world.hazard_for(target)
            if hz is not None and hz.requires_light and not lit:
                continue
            seen.add(target)
            stack.append(target)
    return seen


def _light_available(world: WorldSpec) -> bool:
    rooms = reachable_rooms(world, need_light=False)
    return any(o.light_source and o.portable and _root(world, o.id) in rooms | {INVENTORY}
               for o in world.objects.values())


def _root(world: WorldSpec, obj: str) -> str:
    loc = world.objects[obj].location
    while loc in world.objects:
        loc = world.objects[loc].location
    return loc


def reachable_rewards(world: WorldSpec, avoid: frozenset[str] = frozenset()) -> list[bool]:
    """Per reward, whether its target is statically reachable (ignores ordering and step limits)."""
    rooms = reachable_rooms(world, avoid)
    places = rooms | {INVENTORY}
    out = []
    for r in world.rewards:
        if r.condition == "enter_room":
            ok = r.target in rooms and r.target != world.start_room
        elif r.condition == "in_inventory":
            o = world.objects[r.target]
            ok = o.portable and _root(world, o.id) in places
        else:
            obj, _, flag = r.target.partition(":")
            o = world.objects[obj]
            able = o.openable if flag == "open" else o.light_source
            ok = able and _root(world, obj) in places
        out.append(ok)
    return out


def bottleneck_score(world: WorldSpec, room: str | None = None) -> int:
    """Best score reachable without entering ``room`` (default: the first hazard room)."""
    if room is None:
        if not world.hazards:
            return world.max_score
        room = world.hazards[0].room
    ok = reachable_rewards(world, frozenset({room}))
    return sum(r.points for r, good in zip(world.rewards, ok) if good and r.points > 0)


@dataclass
class Finding:
    level: str
    message: str


def validate_world(world: WorldSpec) -> list[Finding]:
    """Reachability findings for an already schema-valid world; errors are reserved for the loader."""
    findings = []
    rooms = reachable_rooms(world, need_light=False)
    for rid in world.rooms:
        if rid not in rooms:
            findings.append(Finding("warning", f"room {rid!r} is unreachable from {world.start_room!r}"))
    for r, ok in zip(world.rewards, reachable_rewards(world)):
        if not ok:
            findings.append(Finding("warning", f"reward {r.index} ({r.condition} {r.target}) is unreachable"))
    if not world.final_rewards:
        findings.append(Finding("warning", "no reward is marked final; episodes end only on the step limit"))
    return findings
