"""Brute-force admissible-action oracle."""

from __future__ import annotations

from .actions import TemplateAction, enumerate_actions, fill_candidates
from .engine import GameState, is_done, state_hash, try_step
from .world import WorldSpec


def candidate_actions(world: WorldSpec) -> list[TemplateAction]:
    """Every enumerable action: all templates filled from noun/adjective/direction words."""
    return enumerate_actions(world.templates, fill_candidates(world.vocab))


def changes_world(world: WorldSpec, state: GameState, action: TemplateAction, before: int | None = None) -> bool:
    if before is None:
        before = state_hash(state)
    result = try_step(world, state, action)
    if result is None:
        return False
    after, obs = result
    return obs.reward != 0 or state_hash(after) != before


def admissible_actions(world: WorldSpec, state: GameState, actions=None) -> tuple[TemplateAction, ...]:
    """Actions whose step changes the state hash or the score, in canonical order.

    Every candidate is simulated; states are immutable so the probe never
    disturbs ``state``.
    """
    if is_done(world, state):
        return ()
    before = state_hash(state)
    pool = candidate_actions(world) if actions is None else sorted(actions)
    return tuple(a for a in pool if changes_world(world, state, a, before))
