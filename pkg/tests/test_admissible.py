import dataclasses
import itertools
import time

from kgexplore import engine
from kgexplore.actions import TemplateAction, parse, render
from kgexplore.admissible import admissible_actions, candidate_actions

from conftest import actions_of


def test_start_state(world):
    s, _ = engine.reset(world)
    acts = admissible_actions(world, s)
    names = [render(a, world.vocab, world.templates) for a in acts]
    assert "open mailbox" in names
    assert "eat mailbox" not in names
    assert names == ["east", "go east", "open mailbox"]
    assert len(acts) <= 100


def test_dead_state_empty(world):
    s, _ = engine.run_actions(world, actions_of(world, ["east", "down"]))
    assert not s.alive
    assert admissible_actions(world, s) == ()


def test_canonical_order(world):
    s, _ = engine.run_actions(world, actions_of(world, ["open mailbox", "east"]))
    acts = admissible_actions(world, s)
    assert list(acts) == sorted(acts)


def exhaustive_violations(world):
    """Independent oracle: every template x every vocabulary word, judged by full state equality."""
    n = len(world.vocab)
    space = [TemplateAction(t.id, f) for t in world.templates for f in itertools.product(range(n), repeat=t.arity)]
    s0, _ = engine.reset(world)
    seen = {engine._canonical(s0, False)}
    frontier = [s0]
    states = violations = 0
    while frontier:
        s = frontier.pop()
        states += 1
        if engine.is_done(world, s):
            assert admissible_actions(world, s) == ()
            continue
        truth = set()
        for a in space:
            s2, obs = engine.step(world, s, a)
            if obs.reward != 0 or dataclasses.replace(s2, steps=s.steps) != s:
                truth.add(a)
                k = engine._canonical(s2, False)
                if k not in seen:
                    seen.add(k)
                    frontier.append(s2)
        violations += len(truth.symmetric_difference(admissible_actions(world, s)))
    return states, violations


def test_sound_and_complete_on_small_world(shed):
    assert len(shed.rooms) <= 3
    t0 = time.perf_counter()
    states, violations = exhaustive_violations(shed)
    assert states > 100
    assert violations == 0
    assert time.perf_counter() - t0 < 60


def test_candidates_cover_fill_tags(world):
    acts = candidate_actions(world)
    assert len(acts) == sum(len([w for w in world.vocab.words
                                 if world.vocab.tags[world.vocab.id(w)] & {"noun", "proper-noun", "adjective", "direction"}]) ** t.arity
                            for t in world.templates)
