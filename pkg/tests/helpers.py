"""Shared search utilities for tests (independent of the admissible-action oracle)."""

from kgexplore import engine
from kgexplore.actions import enumerate_actions


def entity_actions(world):
    """Actions filled only with object nouns and directions."""
    ids = [world.vocab.id(o.noun) for o in world.objects.values()]
    ids += [world.vocab.id(d) for d in ("north", "south", "east", "west", "up", "down") if d in world.vocab]
    return enumerate_actions(world.templates, ids)


def reachable_states(world, depth):
    """Breadth-first states (keyed by canonical form without steps) within ``depth`` actions of reset."""
    acts = entity_actions(world)
    s0, _ = engine.reset(world)
    seen = {engine._canonical(s0, False): s0}
    frontier = [s0]
    for _ in range(depth):
        nxt = []
        for s in frontier:
            if engine.is_done(world, s):
                continue
            for a in acts:
                r = engine.try_step(world, s, a)
                if r is None:
                    continue
                k = engine._canonical(r[0], False)
                if k not in seen:
                    seen[k] = r[0]
                    nxt.append(r[0])
        frontier = nxt
    return list(seen.values())
