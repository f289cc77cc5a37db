"""Rule-based knowledge graph of rooms, objects and inventory.

Triples are ``(subject, relation, object)`` strings. Objects appear by noun,
rooms by room id, and the player is the ``you`` node.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import engine
from .actions import TemplateAction, Vocabulary, tokenize
from .engine import GameState, Observation
from .world import WorldSpec

YOU = "you"
IN = "in"
HAS = "has"
IS = "is"
CANDIDATE_TAGS = frozenset({"noun", "proper-noun", "adjective"})

Triple = tuple[str, str, str]


@dataclass(frozen=True)
class KnowledgeGraph:
    triples: frozenset[Triple] = frozenset()
    room: str | None = None
    _memo: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __contains__(self, triple: Triple) -> bool:
        return triple in self.triples

    def __len__(self) -> int:
        return len(self.triples)

    def sorted(self) -> list[Triple]:
        return sorted(self.triples)


EMPTY = KnowledgeGraph()


def extract_candidates(text: str, vocab: Vocabulary) -> list[str]:
    """Noun, proper-noun and adjective tokens in order of first appearance."""
    out: list[str] = []
    seen: set[str] = set()
    for tok in tokenize(text):
        if tok in seen:
            continue
        i = vocab.index.get(tok)
        if i is not None and vocab.tags[i] & CANDIDATE_TAGS:
            seen.add(tok)
            out.append(tok)
    return out


def _examine_template(world: WorldSpec) -> int | None:
    for t in world.templates:
        if t.action == "examine" and t.arity == 1:
            return t.id
    return None


def filter_interactive(candidates: Sequence[str], world: WorldSpec, state: GameState) -> list[str]:
    """Keep candidates for which ``examine X`` yields a non-failure observation.

    The probe steps a copy; ``state`` is immutable and is never advanced.
    """
    tid = _examine_template(world)
    if tid is None or not candidates or engine.is_done(world, state):
        return []
    out = []
    for word in candidates:
        probe = TemplateAction(tid, (world.vocab.id(word),))
        _, obs = engine.step(world, state, probe)
        if obs.text != engine.FAILURE_TEXT:
            out.append(word)
    return out


def movement_direction(world: WorldSpec, action: TemplateAction | None) -> str | None:
    if action is None:
        return None
    tpl = world.templates[action.template_id]
    if tpl.action != "go":
        return None
    if tpl.direction is not None:
        return tpl.direction
    return world.vocab.words[action.fills[0]] if action.fills else None


def update_graph(
    kg: KnowledgeGraph,
    observation: Observation,
    prev_action: TemplateAction | None,
    state: GameState,
    world: WorldSpec,
) -> KnowledgeGraph:
    """Fold one observation into the graph.

    Rules, applied in order: place ``you`` in the current room; link examinable
    objects seen in the text to the room; link inventory to ``you`` and drop
    their room links; record the room-to-room edge of a successful move.
    """
    triples = set(kg.triples)
    room = state.room
    inventory_nouns = {world.objects[o].noun for o in state.inventory}

    # rule 1: a single <you, in, room>
    triples = {t for t in triples if not (t[0] == YOU and t[1] == IN)}
    triples.add((YOU, IN, room))

    # rule 2: interactive objects outside the inventory belong to the room
    candidates = extract_candidates(observation.text, world.vocab)
    interactive = filter_interactive(candidates, world, state)
    cand_set = set(candidates)
    for noun in interactive:
        obj = world.object_by_noun(noun)
        for adj in obj.adjectives:
            if adj in cand_set:
                triples.add((noun, IS, adj))
        if noun not in inventory_nouns:
            triples = {t for t in triples if not (t[1] == HAS and t[2] == noun)}
            triples.add((room, HAS, noun))

    # rule 3: inventory hangs off <you>; items that left it are placed where they now are
    held_before = {t[2] for t in triples if t[0] == YOU and t[1] == HAS}
    triples = {t for t in triples if not (t[1] == HAS and (t[0] == YOU or t[2] in inventory_nouns))}
    for noun in sorted(inventory_nouns):
        triples.add((YOU, HAS, noun))
    for noun in sorted(held_before - inventory_nouns):
        obj = world.object_by_noun(noun)
        place, _ = engine.resolve_place(world, state, obj.id)
        if place == room:
            triples.add((room, HAS, noun))

    # rule 4: navigation edge from the previous room
    direction = movement_direction(world, prev_action)
    if direction is not None and kg.room is not None and kg.room != room:
        triples.add((kg.room, direction, room))

    return KnowledgeGraph(frozenset(triples), room)


def graph_mask(kg: KnowledgeGraph, vocab: Vocabulary) -> frozenset[int]:
    """Ids of noun-tagged words appearing anywhere in the graph."""
    key = ("mask", id(vocab))
    if key in kg._memo:
        return kg._memo[key]
    out = set()
    for t in kg.triples:
        for part in t:
            i = vocab.index.get(part)
            if i is not None and "noun" in vocab.tags[i]:
                out.add(i)
    kg._memo[key] = frozenset(out)
    return kg._memo[key]


def dump(kg: KnowledgeGraph) -> str:
    """One tab-separated triple per line, canonically sorted."""
    return "".join("\t".join(t) + "\n" for t in kg.sorted())


def canonical_hash(kg: KnowledgeGraph) -> int:
    return int.from_bytes(hashlib.blake2b(dump(kg).encode(), digest_size=8).digest(), "big")


def check_invariants(kg: KnowledgeGraph) -> list[str]:
    problems = []
    you_in = [t for t in kg.triples if t[0] == YOU and t[1] == IN]
    if len(you_in) > 1:
        problems.append(f"{len(you_in)} <you, in, *> triples")
    held = {t[2] for t in kg.triples if t[0] == YOU and t[1] == HAS}
    for t in kg.triples:
        if not all(t):
            problems.append(f"empty component in {t}")
        if t[1] == HAS and t[0] != YOU and t[2] in held:
            problems.append(f"{t[2]} linked to both you and {t[0]}")
    return problems


@dataclass
class Replay:
    state: GameState
    observation: Observation
    kg: KnowledgeGraph
    states: list[GameState]
    observations: list[Observation]


def replay(world: WorldSpec, actions: Iterable[TemplateAction], track_kg: bool = True) -> Replay:
    """Play ``actions`` from reset, rebuilding the graph alongside."""
    state, obs = engine.reset(world)
    kg = update_graph(EMPTY, obs, None, state, world) if track_kg else EMPTY
    states, observations = [state], [obs]
    for a in actions:
        state, obs = engine.step(world, state, a)
        if track_kg:
            kg = update_graph(kg, obs, a, state, world)
        states.append(state)
        observations.append(obs)
    return Replay(state, obs, kg, states, observations)
