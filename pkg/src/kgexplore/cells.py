"""Cell-archive exploration: select a promising cell, restore it, roll the policy out, record new cells."""

from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import engine
from .actions import TemplateAction
from .agent import Featurizer, PolicyParams, Start, TrainingConfig, a2c_update, run_episode
from .engine import GameState, Observation
from .kg import KnowledgeGraph, canonical_hash
from .world import WorldSpec

ARCHIVE_MAGIC = b"KGXA"
ARCHIVE_VERSION = 1


class ArchiveError(RuntimeError):
    pass


class ReplayDivergence(ArchiveError):
    """A cell's trajectory no longer reproduces its key or score."""


def combine(a: int, b: int) -> int:
    """Order-sensitive 64-bit combination of two 64-bit digests."""
    data = a.to_bytes(8, "big") + b.to_bytes(8, "big")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


def text_key(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def cell_key(featurizer: Featurizer, state: GameState, observation: Observation, kg: KnowledgeGraph) -> int:
    if featurizer.uses_kg:
        return combine(canonical_hash(kg), engine.state_hash(state))
    return text_key(observation.text)


@dataclass
class Cell:
    key: int
    score: int
    trajectory: tuple[TemplateAction, ...]
    visits: int = 0
    discovered: int = 0
    done: bool = False


@dataclass
class Archive:
    cells: dict[int, Cell] = field(default_factory=dict)
    best_score: int = 0
    expansions: int = 0

    def __len__(self) -> int:
        return len(self.cells)

    def offer(self, key: int, score: int, trajectory: Sequence[TemplateAction], step: int,
              done: bool = False) -> str | None:
        """Insert or improve a cell; returns ``"new"``, ``"updated"`` or None."""
        trajectory = tuple(trajectory)
        cell = self.cells.get(key)
        if cell is None:
            self.cells[key] = Cell(key, score, trajectory, 0, step, done)
            self.best_score = max(self.best_score, score)
            return "new"
        if score > cell.score or (score == cell.score and len(trajectory) < len(cell.trajectory)):
            cell.score, cell.trajectory, cell.done = score, trajectory, done
            self.best_score = max(self.best_score, score)
            return "updated"
        return None

    def sorted_cells(self) -> list[Cell]:
        return sorted(self.cells.values(), key=lambda c: (-c.score, len(c.trajectory), c.key))


def select_cell(archive: Archive, rng: np.random.Generator) -> Cell:
    """Sample a non-terminal cell with probability proportional to score - min + 1."""
    cells = [c for c in archive.cells.values() if not c.done]
    if not cells:
        raise ArchiveError("no selectable cells in archive")
    scores = np.array([c.score for c in cells], dtype=float)
    w = scores - scores.min() + 1.0
    return cells[int(rng.choice(len(cells), p=w / w.sum()))]


def restore_cell(world: WorldSpec, featurizer: Featurizer, cell: Cell) -> Start:
    start = Start.from_prefix(world, cell.trajectory, featurizer.uses_kg)
    key = cell_key(featurizer, start.state, start.observation, start.kg)
    if key != cell.key or start.state.score != cell.score:
        raise ReplayDivergence(
            f"cell {cell.key:016x}: replay gave key {key:016x} score {start.state.score}, "
            f"recorded score {cell.score}"
        )
    return start


@dataclass
class CellConfig:
    training: TrainingConfig = field(default_factory=lambda: TrainingConfig(batch_size=1))
    cell_step_size: int = 30


def expand_cell(
    archive: Archive,
    cell: Cell,
    params: PolicyParams,
    world: WorldSpec,
    config: CellConfig,
    featurizer: Featurizer,
    rng: np.random.Generator,
    step_offset: int = 0,
    limit: int | None = None,
) -> tuple[Archive, PolicyParams, int, int]:
    """Roll out from ``cell`` and fold visited states into the archive.

    Returns (archive, params, new cell count, policy steps taken). The archive
    is modified in place only after the restore succeeds.
    """
    start = restore_cell(world, featurizer, cell)
    n = config.cell_step_size if limit is None else min(limit, config.cell_step_size)
    seen: list[tuple[int, int, bool]] = []

    def on_step(state, obs, kg, action):
        if state.alive:
            seen.append((cell_key(featurizer, state, obs, kg), state.score, obs.done))
        else:
            seen.append((None, state.score, True))

    ep = run_episode(world, params, featurizer, rng, config.training, start=start,
                     learn=False, limit=n, on_step=on_step)
    new = 0
    traj = cell.trajectory
    for i, (key, score, done) in enumerate(seen):
        traj = traj + (ep.actions[i],)
        if key is None:
            continue
        if archive.offer(key, score, traj, step_offset + i + 1, done) == "new":
            new += 1
    if ep.steps:
        x = featurizer.encode(ep.observation, ep.kg, ep.state.steps)
        boot = 0.0 if ep.steps[-1].done else float(x @ params.value_w)
        params, _ = a2c_update(params, ep.steps, config.training, boot)
    else:
        cell.done = True
    cell.visits += 1
    archive.expansions += 1
    return archive, params, new, len(ep.steps)


@dataclass
class ExploreResult:
    scores: list[int]
    steps_used: int
    archive: Archive
    params: PolicyParams
    terminal: str
    wall_clock: float = 0.0


def train_goexplore(world: WorldSpec, config: CellConfig, variant: str, seed: int = 0,
                    budget: int = 50_000, log: Callable[[dict], None] | None = None) -> ExploreResult:
    """Phase-1 loop: seed with the reset cell, then select and expand until the budget or max score."""
    t0 = time.perf_counter()
    featurizer = Featurizer(world, variant)
    rng = np.random.default_rng(seed)
    params = PolicyParams.for_world(featurizer)
    start = Start.from_prefix(world, (), featurizer.uses_kg)
    archive = Archive()
    archive.offer(cell_key(featurizer, start.state, start.observation, start.kg), start.state.score, (), 0)
    used = 0
    scores: list[int] = []
    terminal = "budget"
    while used < budget:
        if archive.best_score >= world.max_score:
            terminal = "max-score"
            break
        try:
            cell = select_cell(archive, rng)
        except ArchiveError:
            terminal = "exhausted"
            break
        archive, params, new, taken = expand_cell(archive, cell, params, world, config, featurizer,
                                                  rng, used, budget - used)
        used += taken
        scores.append(archive.best_score)
        if log:
            log({"expansion": archive.expansions, "steps": used, "cell": f"{cell.key:016x}",
                 "cell_score": cell.score, "new_cells": new, "cells": len(archive),
                 "best": archive.best_score})
    if used >= budget and archive.best_score >= world.max_score:
        terminal = "max-score"
    return ExploreResult(scores, used, archive, params, terminal, time.perf_counter() - t0)


# -- checkpoint ------------------------------------------------------------

_HEAD = struct.Struct(">4sBI")
_CELL = struct.Struct(">QiIIBI")
_ACTION = struct.Struct(">HB")


def archive_to_bytes(archive: Archive) -> bytes:
    parts = [_HEAD.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, len(archive.cells)),
             struct.pack(">iI", archive.best_score, archive.expansions)]
    for c in sorted(archive.cells.values(), key=lambda c: c.key):
        parts.append(_CELL.pack(c.key, c.score, c.visits, c.discovered, int(c.done), len(c.trajectory)))
        for a in c.trajectory:
            parts.append(_ACTION.pack(a.template_id, len(a.fills)))
            parts.append(struct.pack(f">{len(a.fills)}H", *a.fills))
    return b"".join(parts)


def archive_from_bytes(blob: bytes) -> Archive:
    try:
        magic, version, count = _HEAD.unpack_from(blob, 0)
        if magic != ARCHIVE_MAGIC:
            raise ArchiveError("not an archive checkpoint")
        if version != ARCHIVE_VERSION:
            raise ArchiveError(f"unsupported archive version {version}")
        off = _HEAD.size
        best, expansions = struct.unpack_from(">iI", blob, off)
        off += 8
        archive = Archive(best_score=best, expansions=expansions)
        for _ in range(count):
            key, score, visits, disc, done, n = _CELL.unpack_from(blob, off)
            off += _CELL.size
            traj = []
            for _ in range(n):
                tid, k = _ACTION.unpack_from(blob, off)
                off += _ACTION.size
                fills = struct.unpack_from(f">{k}H", blob, off)
                off += 2 * k
                traj.append(TemplateAction(tid, tuple(fills)))
            archive.cells[key] = Cell(key, score, tuple(traj), visits, disc, bool(done))
    except struct.error as exc:
        raise ArchiveError(f"truncated archive: {exc}") from None
    if off != len(blob):
        raise ArchiveError("trailing bytes in archive")
    return archive


def inspect_archive(archive: Archive, world: WorldSpec | None = None, limit: int | None = None) -> str:
    """Human-readable table, best cells first."""
    from .actions import render

    lines = [f"cells={len(archive)} best={archive.best_score} expansions={archive.expansions}",
             f"{'key':<16}  {'score':>5}  {'visits':>6}  {'len':>4}  last action"]
    for c in archive.sorted_cells()[:limit]:
        last = ""
        if c.trajectory:
            a = c.trajectory[-1]
            last = render(a, world.vocab, world.templates) if world else str(a)
        lines.append(f"{c.key:016x}  {c.score:>5}  {c.visits:>6}  {len(c.trajectory):>4}  {last}")
    return "\n".join(lines) + "\n"
