"""Declarative world files: schema, loading and validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .actions import BLANK, Template, Vocabulary

INVENTORY = "inventory"
DIRECTIONS = ("north", "south", "east", "west", "up", "down")
HANDLERS = frozenset(
    {"look", "inventory", "go", "take", "drop", "open", "close", "examine",
     "read", "light", "extinguish", "eat", "put", "take_from"}
)
CONDITIONS = frozenset({"enter_room", "in_inventory", "flag_set"})


class WorldError(ValueError):
    """A world document failed validation; ``path`` locates the offending entry."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class SchemaError(WorldError):
    pass


class DanglingReferenceError(WorldError):
    pass


class DuplicateIdError(WorldError):
    pass


@dataclass(frozen=True)
class Room:
    id: str
    name: str
    description: str
    exits: Mapping[str, str]
    dark: bool = False


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    noun: str
    adjectives: tuple[str, ...]
    name: str
    location: str
    description: str
    portable: bool = True
    container: bool = False
    openable: bool = False
    open: bool = False
    light_source: bool = False
    edible: bool = False
    text: str | None = None


@dataclass(frozen=True)
class Reward:
    index: int
    condition: str
    target: str
    points: int
    final: bool = False


@dataclass(frozen=True)
class Hazard:
    room: str
    requires_light: bool
    penalty: int
    text: str


@dataclass(frozen=True)
class WorldSpec:
    title: str
    rooms: Mapping[str, Room]
    objects: Mapping[str, ObjectSpec]
    rewards: tuple[Reward, ...]
    hazards: tuple[Hazard, ...]
    templates: tuple[Template, ...]
    vocab: Vocabulary
    start_room: str
    max_steps: int
    by_noun: dict[str, ObjectSpec] = field(init=False, repr=False, compare=False)
    final_rewards: frozenset[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "by_noun", {o.noun: o for o in self.objects.values()})
        object.__setattr__(self, "final_rewards", frozenset(r.index for r in self.rewards if r.final))

    @property
    def max_score(self) -> int:
        return sum(r.points for r in self.rewards if r.points > 0)

    def object_by_noun(self, noun: str) -> ObjectSpec | None:
        return self.by_noun.get(noun)

    def hazard_for(self, room: str) -> Hazard | None:
        for h in self.hazards:
            if h.room == room:
                return h
        return None


def _req(doc: Mapping, key: str, path: str, kind: type | tuple = object) -> Any:
    if not isinstance(doc, Mapping):
        raise SchemaError(path, "expected an object")
    if key not in doc:
        raise SchemaError(f"{path}.{key}", "missing required field")
    val = doc[key]
    if kind is not object and not isinstance(val, kind):
        raise SchemaError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return val


def _nonempty_list(doc: Mapping, key: str) -> list:
    val = _req(doc, key, "$", list)
    if not val:
        raise SchemaError(f"$.{key}", "must be a non-empty list")
    return val


def parse_world(doc: Mapping) -> WorldSpec:
    """Validate a decoded world document and build a :class:`WorldSpec`."""
    if not isinstance(doc, Mapping):
        raise SchemaError("$", "world document must be an object")

    rooms: dict[str, Room] = {}
    for i, r in enumerate(_nonempty_list(doc, "rooms")):
        path = f"$.rooms[{i}]"
        rid = _req(r, "id", path, str)
        if rid in rooms:
            raise DuplicateIdError(f"{path}.id", f"duplicate room id {rid!r}")
        exits = r.get("exits", {})
        if not isinstance(exits, Mapping):
            raise SchemaError(f"{path}.exits", "expected an object")
        for d in exits:
            if d not in DIRECTIONS:
                raise SchemaError(f"{path}.exits.{d}", "unknown direction")
        rooms[rid] = Room(
            rid, _req(r, "name", path, str), _req(r, "description", path, str),
            dict(exits), bool(r.get("dark", False)),
        )
    for rid, room in rooms.items():
        for d, target in room.exits.items():
            if target not in rooms:
                raise DanglingReferenceError(f"$.rooms[{rid}].exits.{d}", f"undeclared room {target!r}")

    objects: dict[str, ObjectSpec] = {}
    nouns: set[str] = set()
    for i, o in enumerate(doc.get("objects", [])):
        path = f"$.objects[{i}]"
        oid = _req(o, "id", path, str)
        if oid in objects or oid in rooms or oid == INVENTORY:
            raise DuplicateIdError(f"{path}.id", f"duplicate id {oid!r}")
        noun = _req(o, "noun", path, str)
        if noun in nouns:
            raise DuplicateIdError(f"{path}.noun", f"noun {noun!r} already names another object")
        nouns.add(noun)
        objects[oid] = ObjectSpec(
            id=oid, noun=noun, adjectives=tuple(o.get("adjectives", ())),
            name=o.get("name", noun), location=_req(o, "location", path, str),
            description=_req(o, "description", path, str),
            portable=bool(o.get("portable", True)), container=bool(o.get("container", False)),
            openable=bool(o.get("openable", False)), open=bool(o.get("open", False)),
            light_source=bool(o.get("light_source", False)), edible=bool(o.get("edible", False)),
            text=o.get("text"),
        )
    for i, o in enumerate(objects.values()):
        loc = o.location
        if loc != INVENTORY and loc not in rooms and loc not in objects:
            raise DanglingReferenceError(f"$.objects[{i}].location", f"undeclared location {loc!r}")
        if loc in objects and not objects[loc].container:
            raise SchemaError(f"$.objects[{i}].location", f"{loc!r} is not a container")
    _check_containment_acyclic(objects)

    rewards = []
    for i, r in enumerate(doc.get("rewards", [])):
        path = f"$.rewards[{i}]"
        cond = _req(r, "condition", path, str)
        if cond not in CONDITIONS:
            raise SchemaError(f"{path}.condition", f"unknown condition {cond!r}")
        target = _req(r, "target", path, str)
        if cond == "enter_room" and target not in rooms:
            raise DanglingReferenceError(f"{path}.target", f"undeclared room {target!r}")
        if cond == "in_inventory" and target not in objects:
            raise DanglingReferenceError(f"{path}.target", f"undeclared object {target!r}")
        if cond == "flag_set":
            obj, _, flag = target.partition(":")
            if obj not in objects or flag not in ("open", "lit"):
                raise DanglingReferenceError(f"{path}.target", f"unknown flag {target!r}")
        points = _req(r, "points", path, int)
        rewards.append(Reward(i, cond, target, points, bool(r.get("final", False))))

    hazards = []
    for i, h in enumerate(doc.get("hazards", [])):
        path = f"$.hazards[{i}]"
        room = _req(h, "room", path, str)
        if room not in rooms:
            raise DanglingReferenceError(f"{path}.room", f"undeclared room {room!r}")
        hazards.append(Hazard(room, bool(h.get("requires_light", True)),
                              int(_req(h, "penalty", path, int)),
                              h.get("text", "You have been eaten.")))

    vocab_doc = _req(doc, "vocabulary", "$", Mapping)
    vocab = Vocabulary.from_sections({k: list(v) for k, v in vocab_doc.items()})
    if not len(vocab):
        raise SchemaError("$.vocabulary", "vocabulary is empty")

    templates = []
    seen_patterns: set[tuple[str, ...]] = set()
    for i, t in enumerate(_nonempty_list(doc, "templates")):
        path = f"$.templates[{i}]"
        tpl = Template.from_text(i, _req(t, "pattern", path, str), _req(t, "action", path, str),
                                 t.get("direction"))
        if tpl.pattern in seen_patterns:
            raise DuplicateIdError(f"{path}.pattern", f"duplicate pattern {tpl.text!r}")
        seen_patterns.add(tpl.pattern)
        if tpl.action not in HANDLERS:
            raise SchemaError(f"{path}.action", f"unknown action {tpl.action!r}")
        if tpl.arity > 2:
            raise SchemaError(f"{path}.pattern", "at most two blanks")
        if tpl.pattern[0] == BLANK:
            raise SchemaError(f"{path}.pattern", "pattern must start with a verb")
        if tpl.direction is not None and tpl.direction not in DIRECTIONS:
            raise SchemaError(f"{path}.direction", "unknown direction")
        templates.append(tpl)

    for i, o in enumerate(objects.values()):
        for word in (o.noun, *o.adjectives):
            if word not in vocab:
                raise DanglingReferenceError(f"$.objects[{i}]", f"word {word!r} missing from vocabulary")

    start = _req(doc, "start_room", "$", str)
    if start not in rooms:
        raise DanglingReferenceError("$.start_room", f"undeclared room {start!r}")
    max_steps = _req(doc, "max_steps", "$", int)
    if max_steps <= 0:
        raise SchemaError("$.max_steps", "must be positive")

    return WorldSpec(
        title=str(doc.get("title", "")), rooms=rooms, objects=objects, rewards=tuple(rewards),
        hazards=tuple(hazards), templates=tuple(templates), vocab=vocab,
        start_room=start, max_steps=max_steps,
    )


def _check_containment_acyclic(objects: Mapping[str, ObjectSpec]) -> None:
    for i, o in enumerate(objects.values()):
        seen = {o.id}
        loc = o.location
        while loc in objects:
            if loc in seen:
                raise SchemaError(f"$.objects[{i}].location", "containment cycle")
            seen.add(loc)
            loc = objects[loc].location


def load_world(source: str | Path | Mapping) -> WorldSpec:
    """Load a world from a path, a JSON string or an already-decoded mapping."""
    if isinstance(source, Mapping):
        return parse_world(source)
    text = None
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from None
    return parse_world(doc)


def fixture_path(name: str = "minigrue") -> Path:
    return Path(str(resources.files("kgexplore") / "data" / f"{name}.json"))


def load_fixture(name: str = "minigrue") -> WorldSpec:
    return load_world(fixture_path(name))
