"""Deterministic text-adventure engine over a :class:`~kgexplore.world.WorldSpec`.

States are immutable values: :func:`step` returns a new state and never touches
its input, so probing an action on a state is always side-effect free.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from typing import Callable, Mapping

from .actions import ActionError, TemplateAction
from .world import INVENTORY, ObjectSpec, WorldSpec

FAILURE_TEXT = "You can't do that."
CONSUMED = "consumed"
BLOB_VERSION = 1
_HEADER = struct.Struct(">BI")
_DIGEST = 8


class GameOverError(RuntimeError):
    """Raised when stepping a state that is already done."""


class StateDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class GameState:
    room: str
    inventory: tuple[str, ...]
    locations: Mapping[str, str]
    flags: frozenset[str]
    score: int
    steps: int
    alive: bool
    fired: frozenset[int]

    def location(self, obj: str) -> str:
        return self.locations[obj]

    def to_dict(self, include_steps: bool = True) -> dict:
        d = {
            "room": self.room,
            "inventory": list(self.inventory),
            "locations": dict(sorted(self.locations.items())),
            "flags": sorted(self.flags),
            "score": self.score,
            "alive": self.alive,
            "fired": sorted(self.fired),
        }
        if include_steps:
            d["steps"] = self.steps
        return d


@dataclass(frozen=True)
class Observation:
    text: str
    reward: int
    done: bool
    score: int


def _open_flag(obj: str) -> str:
    return f"{obj}:open"


def _lit_flag(obj: str) -> str:
    return f"{obj}:lit"


def reset(world: WorldSpec, seed: int = 0) -> tuple[GameState, Observation]:
    """Initial state at the start room.

    ``seed`` is accepted for interface symmetry; worlds have no stochastic elements.
    """
    locations = {o.id: o.location for o in world.objects.values()}
    inventory = tuple(o.id for o in world.objects.values() if o.location == INVENTORY)
    flags = frozenset(_open_flag(o.id) for o in world.objects.values() if o.openable and o.open)
    state = GameState(world.start_room, inventory, locations, flags, 0, 0, True, frozenset())
    return state, Observation(describe_room(world, state), 0, False, 0)


def is_done(world: WorldSpec, state: GameState) -> bool:
    if not state.alive or state.steps >= world.max_steps:
        return True
    return not world.final_rewards.isdisjoint(state.fired)


def is_open(world: WorldSpec, state: GameState, obj: str) -> bool:
    spec = world.objects[obj]
    return not spec.openable or _open_flag(obj) in state.flags


def resolve_place(world: WorldSpec, state: GameState, obj: str) -> tuple[str, bool]:
    """Room id (or inventory) ultimately holding ``obj`` and whether every enclosing container is open."""
    loc = state.locations[obj]
    reachable = True
    while loc in world.objects:
        if not is_open(world, state, loc):
            reachable = False
        loc = state.locations[loc]
    return loc, reachable


def visible_objects(world: WorldSpec, state: GameState) -> list[str]:
    out = []
    for oid in world.objects:
        place, reachable = resolve_place(world, state, oid)
        if reachable and place in (state.room, INVENTORY):
            out.append(oid)
    return out


def carrying_light(world: WorldSpec, state: GameState) -> bool:
    return any(
        world.objects[o].light_source and _lit_flag(o) in state.flags
        for o in state.inventory
    )


def _with_article(name: str) -> str:
    return ("an " if name[:1] in "aeiou" else "a ") + name


def _listing(names: list[str]) -> str:
    items = [_with_article(n) for n in names]
    if len(items) == 1:
        return items[0]
    return ", ".join(items[:-1]) + " and " + items[-1]


def _contents(world: WorldSpec, state: GameState, container: str) -> list[ObjectSpec]:
    return [o for o in world.objects.values() if state.locations[o.id] == container]


def describe_room(world: WorldSpec, state: GameState) -> str:
    room = world.rooms[state.room]
    if room.dark and not carrying_light(world, state):
        return f"{room.name}\nIt is pitch black. You are likely to be eaten by a grue."
    parts = [room.description]
    for o in world.objects.values():
        if state.locations[o.id] != state.room:
            continue
        parts.append(f"There is {_with_article(o.name)} here.")
        if o.container and is_open(world, state, o.id):
            inside = _contents(world, state, o.id)
            if inside:
                parts.append(f"The {o.name} contains {_listing([x.name for x in inside])}.")
    return f"{room.name}\n" + " ".join(parts)


# -- handlers --------------------------------------------------------------
# Each returns (new state, text) on success or None when inapplicable.


def _find(world: WorldSpec, state: GameState, word: str) -> ObjectSpec | None:
    obj = world.object_by_noun(word)
    if obj is None or obj.id not in visible_objects(world, state):
        return None
    return obj


def _move_to(state: GameState, obj: str, dest: str) -> GameState:
    locations = dict(state.locations)
    locations[obj] = dest
    inventory = tuple(o for o in state.inventory if o != obj)
    if dest == INVENTORY:
        inventory = inventory + (obj,)
    return replace(state, locations=locations, inventory=inventory)


def _look(world, state, words, tpl):
    return state, describe_room(world, state)


def _inventory(world, state, words, tpl):
    if not state.inventory:
        return state, "You are empty-handed."
    return state, "You are carrying " + _listing([world.objects[o].name for o in state.inventory]) + "."


def _go(world, state, words, tpl):
    direction = tpl.direction if tpl.direction is not None else (words[0] if words else None)
    target = world.rooms[state.room].exits.get(direction)
    if target is None:
        return None
    moved = replace(state, room=target)
    hazard = world.hazard_for(target)
    if hazard is not None and hazard.requires_light and not carrying_light(world, moved):
        return replace(moved, alive=False, score=moved.score - hazard.penalty), hazard.text
    return moved, describe_room(world, moved)


def _take(world, state, words, tpl):
    obj = _find(world, state, words[0])
    if obj is None or not obj.portable or state.locations[obj.id] == INVENTORY:
        return None
    return _move_to(state, obj.id, INVENTORY), "Taken."


def _take_from(world, state, words, tpl):
    obj, box = _find(world, state, words[0]), _find(world, state, words[1])
    if obj is None or box is None or state.locations[obj.id] != box.id or not obj.portable:
        return None
    return _move_to(state, obj.id, INVENTORY), "Taken."


def _drop(world, state, words, tpl):
    obj = world.object_by_noun(words[0])
    if obj is None or state.locations[obj.id] != INVENTORY:
        return None
    return _move_to(state, obj.id, state.room), "Dropped."


def _put(world, state, words, tpl):
    obj, box = world.object_by_noun(words[0]), _find(world, state, words[1])
    if obj is None or box is None or obj.id == box.id:
        return None
    if state.locations[obj.id] != INVENTORY or not box.container or not is_open(world, state, box.id):
        return None
    loc = state.locations[box.id]
    while loc in world.objects:
        if loc == obj.id:
            return None
        loc = state.locations[loc]
    return _move_to(state, obj.id, box.id), "Done."


def _open(world, state, words, tpl):
    obj = _find(world, state, words[0])
    if obj is None or not obj.openable or _open_flag(obj.id) in state.flags:
        return None
    new = replace(state, flags=state.flags | {_open_flag(obj.id)})
    inside = _contents(world, new, obj.id)
    if inside:
        return new, f"Opening the {obj.name} reveals {_listing([x.name for x in inside])}."
    return new, "Opened."


def _close(world, state, words, tpl):
    obj = _find(world, state, words[0])
    if obj is None or not obj.openable or _open_flag(obj.id) not in state.flags:
        return None
    return replace(state, flags=state.flags - {_open_flag(obj.id)}), "Closed."


def _examine(world, state, words, tpl):
    obj = _find(world, state, words[0])
    if obj is None:
        return None
    text = obj.description
    if obj.light_source:
        text += " It is on." if _lit_flag(obj.id) in state.flags else " It is off."
    if obj.container and is_open(world, state, obj.id):
        inside = _contents(world, state, obj.id)
        if inside:
            text += f" The {obj.name} contains {_listing([x.name for x in inside])}."
    return state, text


def _read(world, state, words, tpl):
    obj = _find(world, state, words[0])
    if obj is None or obj.text is None:
        return None
    if state.locations[obj.id] != INVENTORY and obj.portable:
        return _move_to(state, obj.id, INVENTORY), "(Taken) " + obj.text
    return state, obj.text


def _light(world, state, words, tpl):
    obj = world.object_by_noun(words[0])
    if obj is None or not obj.light_source or state.locations[obj.id] != INVENTORY:
        return None
    if _lit_flag(obj.id) in state.flags:
        return None
    return replace(state, flags=state.flags | {_lit_flag(obj.id)}), f"The {obj.name} is now on."


def _extinguish(world, state, words, tpl):
    obj = _find(world, state, words[0])
    if obj is None or _lit_flag(obj.id) not in state.flags:
        return None
    return replace(state, flags=state.flags - {_lit_flag(obj.id)}), f"The {obj.name} is now off."


def _eat(world, state, words, tpl):
    obj = _find(world, state, words[0])
    if obj is None or not obj.edible or not obj.portable:
        return None
    return _move_to(state, obj.id, CONSUMED), "Delicious."


HANDLERS: dict[str, Callable] = {
    "look": _look, "inventory": _inventory, "go": _go, "take": _take,
    "take_from": _take_from, "drop": _drop, "put": _put, "open": _open,
    "close": _close, "examine": _examine, "read": _read, "light": _light,
    "extinguish": _extinguish, "eat": _eat,
}


def _reward_holds(reward, state: GameState) -> bool:
    if reward.condition == "enter_room":
        return state.alive and state.room == reward.target
    if reward.condition == "in_inventory":
        return state.locations.get(reward.target) == INVENTORY
    if reward.condition == "flag_set":
        return reward.target in state.flags
    return False


def _apply(world: WorldSpec, state: GameState, action: TemplateAction):
    try:
        tpl = world.templates[action.template_id]
    except IndexError:
        raise ActionError(f"unknown template id {action.template_id}") from None
    if len(action.fills) != tpl.arity:
        raise ActionError(f"template {tpl.text!r} takes {tpl.arity} fills")
    words = [world.vocab.words[i] for i in action.fills]
    return HANDLERS[tpl.action](world, state, words, tpl)


def _finish(world: WorldSpec, state: GameState, new: GameState, text: str) -> tuple[GameState, Observation]:
    gained = 0
    fired = set()
    if new.alive:
        for r in world.rewards:
            if r.index not in new.fired and _reward_holds(r, new):
                fired.add(r.index)
                gained += r.points
    delta = (new.score - state.score) + gained
    new = replace(new, score=new.score + gained, steps=state.steps + 1,
                  fired=new.fired | fired if fired else new.fired)
    return new, Observation(text, delta, is_done(world, new), new.score)


def step(world: WorldSpec, state: GameState, action: TemplateAction) -> tuple[GameState, Observation]:
    if is_done(world, state):
        raise GameOverError("cannot act on a finished episode")
    result = _apply(world, state, action)
    if result is None:
        new = replace(state, steps=state.steps + 1)
        return new, Observation(FAILURE_TEXT, 0, is_done(world, new), new.score)
    return _finish(world, state, *result)


def try_step(world: WorldSpec, state: GameState, action: TemplateAction):
    """Like :func:`step` but returns None when the action is inapplicable."""
    if is_done(world, state):
        raise GameOverError("cannot act on a finished episode")
    result = _apply(world, state, action)
    if result is None:
        return None
    return _finish(world, state, *result)


def run_actions(world: WorldSpec, actions, state: GameState | None = None):
    """Step through ``actions`` from ``state`` (or reset); returns the final (state, observation)."""
    if state is None:
        state, obs = reset(world)
    else:
        obs = None
    for a in actions:
        state, obs = step(world, state, a)
    return state, obs


def expected_score(world: WorldSpec, state: GameState) -> int:
    """Score implied by fired rewards and the death penalty."""
    total = sum(r.points for r in world.rewards if r.index in state.fired)
    if not state.alive:
        hazard = world.hazard_for(state.room)
        total -= hazard.penalty if hazard is not None else 0
    return total


# -- snapshots and hashing -------------------------------------------------

def _canonical(state: GameState, include_steps: bool) -> bytes:
    return json.dumps(state.to_dict(include_steps), sort_keys=True, separators=(",", ":")).encode()


def snapshot(state: GameState) -> bytes:
    """Versioned, length-prefixed encoding: version byte, payload length, payload, checksum."""
    payload = _canonical(state, True)
    digest = hashlib.blake2b(payload, digest_size=_DIGEST).digest()
    return _HEADER.pack(BLOB_VERSION, len(payload)) + payload + digest


def restore(blob: bytes) -> GameState:
    if len(blob) < _HEADER.size:
        raise StateDecodeError("blob shorter than header")
    version, length = _HEADER.unpack_from(blob)
    if version != BLOB_VERSION:
        raise StateDecodeError(f"unsupported blob version {version}")
    if len(blob) != _HEADER.size + length + _DIGEST:
        raise StateDecodeError(f"blob length {len(blob)} does not match header")
    payload = blob[_HEADER.size:_HEADER.size + length]
    if hashlib.blake2b(payload, digest_size=_DIGEST).digest() != blob[-_DIGEST:]:
        raise StateDecodeError("checksum mismatch")
    try:
        d = json.loads(payload)
        return GameState(
            room=d["room"], inventory=tuple(d["inventory"]), locations=dict(d["locations"]),
            flags=frozenset(d["flags"]), score=int(d["score"]), steps=int(d["steps"]),
            alive=bool(d["alive"]), fired=frozenset(int(i) for i in d["fired"]),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise StateDecodeError(f"malformed payload: {exc}") from None


def state_hash(state: GameState) -> int:
    """64-bit digest over every field except the step count."""
    return int.from_bytes(hashlib.blake2b(_canonical(state, False), digest_size=8).digest(), "big")
