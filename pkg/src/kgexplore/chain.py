"""Bottleneck-aware policy chaining with backtracking.

A segment trains from the current anchor. When its best score stops improving
for ``patience`` episodes the policy is frozen together with the action prefix
that reached that score, and a fresh policy trains from the new anchor. If a
fresh policy gets stuck too, the anchor is walked back one state at a time
through a buffer of the states that led up to it; running out of states ends
the run.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import engine
from .actions import TemplateAction
from .admissible import admissible_actions
from .agent import Featurizer, PolicyParams, Start, TrainingConfig, run_episode
from .kg import replay
from .world import WorldSpec

CONTINUE = "continue"
BOTTLENECK = "bottleneck"
EXHAUSTED = "exhausted"


class ChainError(RuntimeError):
    pass


@dataclass
class BestTrajectory:
    actions: tuple[TemplateAction, ...]
    score: int


@dataclass
class BottleneckDetector:
    patience: int = 35
    best: float = 0
    since: int = 0
    best_trajectory: BestTrajectory | None = None
    improved: bool = False


def detect_bottleneck(detector: BottleneckDetector, score: float,
                      trajectory: Sequence[TemplateAction] | None = None) -> str:
    """Feed one episode's score; a strict improvement resets the counter and becomes the new best."""
    if score > detector.best:
        detector.best = score
        detector.since = 0
        detector.improved = True
        if trajectory is not None:
            detector.best_trajectory = BestTrajectory(tuple(trajectory), int(score))
        return CONTINUE
    detector.improved = False
    detector.since += 1
    return BOTTLENECK if detector.since >= detector.patience else CONTINUE


class BufferEntry:
    """A buffered predecessor state; its admissible set is computed on first use."""

    def __init__(self, world: WorldSpec, blob: bytes, score: int, step_index: int):
        self._world = world
        self.blob = blob
        self.score = score
        self.step_index = step_index
        self._admissible: tuple[TemplateAction, ...] | None = None

    @property
    def admissible(self) -> tuple[TemplateAction, ...]:
        if self._admissible is None:
            self._admissible = admissible_actions(self._world, engine.restore(self.blob))
        return self._admissible


class BacktrackBuffer:
    """Ring buffer of the last ``capacity`` states before an anchor, oldest first."""

    def __init__(self, capacity: int = 40):
        self.capacity = capacity
        self._items: deque[BufferEntry] = deque(maxlen=capacity)

    def push(self, entry: BufferEntry) -> None:
        self._items.append(entry)

    def pop_newest(self) -> BufferEntry:
        return self._items.pop()

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


@dataclass
class Segment:
    params_blob: bytes
    prefix: tuple[TemplateAction, ...]
    anchor_score: int

    @property
    def params(self) -> PolicyParams:
        return PolicyParams.from_bytes(self.params_blob).frozen()


@dataclass
class PolicyChain:
    segments: list[Segment] = field(default_factory=list)

    @property
    def active(self) -> int:
        return len(self.segments)

    def full_prefix(self) -> tuple[TemplateAction, ...]:
        out: tuple[TemplateAction, ...] = ()
        for s in self.segments:
            out += s.prefix
        return out

    def anchor_score(self) -> int:
        return self.segments[-1].anchor_score if self.segments else 0


def freeze_and_restart(
    chain: PolicyChain,
    params: PolicyParams,
    best: BestTrajectory | None,
    world: WorldSpec,
    buffer_size: int = 40,
) -> tuple[PolicyChain, BacktrackBuffer, BufferEntry]:
    """Append the frozen policy and its best prefix.

    Returns the new chain, a buffer of the last ``buffer_size`` states of the
    full trajectory from reset that precede the new anchor, and the anchor.
    """
    if best is None or not best.actions:
        raise ChainError("cannot freeze an empty best trajectory")
    full = chain.full_prefix() + tuple(best.actions)
    states = replay(world, full, track_kg=False).states
    if states[-1].score != best.score:
        raise ChainError(f"best prefix replays to {states[-1].score}, expected {best.score}")
    buffer = BacktrackBuffer(buffer_size)
    for i in range(max(0, len(full) - buffer_size), len(full)):
        buffer.push(BufferEntry(world, engine.snapshot(states[i]), states[i].score, i))
    anchor = BufferEntry(world, engine.snapshot(states[-1]), states[-1].score, len(full))
    seg = Segment(params.copy().to_bytes(), tuple(best.actions), best.score)
    return PolicyChain(chain.segments + [seg]), buffer, anchor


def truncate(chain: PolicyChain, length: int, score: int) -> PolicyChain:
    """Cut the chain's combined prefix to ``length`` actions; the last kept segment gets ``score``."""
    segments, used = [], 0
    for seg in chain.segments:
        keep = min(len(seg.prefix), length - used)
        segments.append(Segment(seg.params_blob, seg.prefix[:keep], seg.anchor_score))
        used += keep
        if used >= length:
            break
    if segments:
        last = segments[-1]
        segments[-1] = Segment(last.params_blob, last.prefix, score)
    return PolicyChain(segments)


def backtrack(chain: PolicyChain, buffer: BacktrackBuffer) -> tuple[PolicyChain, BufferEntry] | str:
    """Move the anchor to the newest buffered predecessor state, or report ``EXHAUSTED``.

    ``step_index`` of a buffer entry is its position along the combined prefix.
    """
    if not chain.segments or len(buffer) == 0:
        return EXHAUSTED
    entry = buffer.pop_newest()
    return truncate(chain, entry.step_index, entry.score), entry


@dataclass
class ChainConfig:
    training: TrainingConfig = field(default_factory=TrainingConfig)
    patience: int = 35
    buffer_size: int = 40
    explore_prob: float = 0.3


@dataclass
class ChainResult:
    scores: list[int]
    peaks: list[int]
    steps_used: int
    chain: PolicyChain
    terminal: str
    events: list[dict]


class ChainTrainer:
    """Train-detect-freeze-backtrack loop; :meth:`run` drives it to termination."""

    def __init__(self, world: WorldSpec, variant: str, config: ChainConfig, seed: int):
        self.world = world
        self.config = config
        self.featurizer = Featurizer(world, variant)
        self.rng = np.random.default_rng(seed)
        self.chain = PolicyChain()
        self.params = PolicyParams.for_world(self.featurizer)
        self.detector = BottleneckDetector(config.patience, best=0)
        self.buffer = BacktrackBuffer(config.buffer_size)
        self.anchor: BufferEntry | None = None
        self.backtrack_depth = 0
        self.episode = 0
        self.used = 0

    def start(self) -> Start:
        start = Start.from_prefix(self.world, self.chain.full_prefix(), self.featurizer.uses_kg)
        if start.state.score != self.chain.anchor_score():
            raise ChainError(
                f"anchor replay reached score {start.state.score}, recorded {self.chain.anchor_score()}"
            )
        return start

    def _first_action(self) -> TemplateAction | None:
        if self.anchor is None or self.rng.random() >= self.config.explore_prob:
            return None
        options = self.anchor.admissible
        if not options:
            return None
        return options[int(self.rng.integers(len(options)))]

    def freeze(self) -> None:
        self.chain, self.buffer, self.anchor = freeze_and_restart(
            self.chain, self.params, self.detector.best_trajectory, self.world, self.config.buffer_size
        )
        self.params = PolicyParams.for_world(self.featurizer)
        self.detector = BottleneckDetector(self.config.patience, best=self.chain.anchor_score())
        self.backtrack_depth = 0

    def backtrack(self) -> bool:
        result = backtrack(self.chain, self.buffer)
        if result == EXHAUSTED:
            return False
        self.chain, self.anchor = result
        self.params = PolicyParams.for_world(self.featurizer)
        self.detector.since = 0
        self.detector.best_trajectory = None
        self.backtrack_depth += 1
        return True

    def step_episode(self, limit: int | None = None) -> dict:
        start = self.start()
        if engine.is_done(self.world, start.state):
            # nothing can be learned from a terminal anchor
            event = "backtrack" if self.backtrack() else "terminate"
            return {"episode": self.episode, "steps": self.used, "score": start.state.score,
                    "peak": start.state.score, "segment": self.chain.active,
                    "backtrack_depth": self.backtrack_depth, "event": event}
        ep = run_episode(self.world, self.params, self.featurizer, self.rng, self.config.training,
                         start=start, learn=True, limit=limit, first_action=self._first_action())
        self.params = ep.params
        self.used += len(ep.steps)
        peak, at = ep.peak
        verdict = detect_bottleneck(self.detector, peak, ep.actions[:at])
        event = "improve" if self.detector.improved else None
        if verdict == BOTTLENECK:
            if self.detector.best_trajectory is not None:
                self.freeze()
                event = "freeze"
            elif self.chain.segments:
                event = "backtrack" if self.backtrack() else "terminate"
            else:
                self.detector.since = 0
        record = {
            "episode": self.episode, "steps": self.used, "score": ep.final_score, "peak": peak,
            "segment": self.chain.active, "backtrack_depth": self.backtrack_depth, "event": event,
        }
        self.episode += 1
        return record

    def run(self, budget: int, log: Callable[[dict], None] | None = None) -> ChainResult:
        scores, peaks, events = [], [], []
        terminal = "budget"
        while self.used < budget:
            before = self.used
            rec = self.step_episode(limit=budget - self.used)
            scores.append(rec["score"])
            peaks.append(rec["peak"])
            if rec["peak"] >= self.world.max_score:
                rec["event"] = "terminate"
                terminal = "max-score"
            if rec["event"] is not None:
                events.append(rec)
            if log:
                log(rec)
            if rec["event"] == "terminate":
                if terminal != "max-score":
                    terminal = "exhausted"
                break
            if self.used == before and rec["event"] != "backtrack":
                terminal = "stalled"
                break
        return ChainResult(scores, peaks, self.used, self.chain, terminal, events)


def train_chained(world: WorldSpec, config: ChainConfig, variant: str, seed: int = 0,
                  budget: int = 50_000, log: Callable[[dict], None] | None = None) -> ChainResult:
    t0 = time.perf_counter()
    result = ChainTrainer(world, variant, config, seed).run(budget, log)
    result.events.append({"wall_clock": time.perf_counter() - t0})
    return result
