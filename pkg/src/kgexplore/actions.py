"""Template action space: templates with up to two blanks filled by vocabulary words."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

BLANK = "__"
TAGS = ("noun", "proper-noun", "adjective", "verb", "direction", "preposition")
FILL_TAGS = frozenset({"noun", "proper-noun", "adjective", "direction"})

_TOKEN_RE = re.compile(r"[a-z]+(?:-[a-z]+)*")


class ActionError(ValueError):
    """Raised for malformed actions and unparseable action text."""


class UnrecognizedVerbError(ActionError):
    pass


class UnknownWordError(ActionError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Template:
    id: int
    pattern: tuple[str, ...]
    action: str = ""
    direction: str | None = None

    @property
    def arity(self) -> int:
        return sum(1 for tok in self.pattern if tok == BLANK)

    @property
    def text(self) -> str:
        return " ".join(self.pattern)

    @classmethod
    def from_text(cls, id: int, pattern: str, action: str = "", direction: str | None = None) -> "Template":
        tokens = tuple(pattern.split())
        if not tokens:
            raise ActionError(f"template {id}: empty pattern")
        return cls(id, tokens, action, direction)


@dataclass(frozen=True)
class Vocabulary:
    """Dense word ids with per-word lexical tags."""

    words: tuple[str, ...]
    tags: tuple[frozenset[str], ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.words) != len(self.tags):
            raise ActionError("words and tags differ in length")
        index = {w: i for i, w in enumerate(self.words)}
        if len(index) != len(self.words):
            raise ActionError("vocabulary surface forms must be unique")
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def id(self, word: str) -> int:
        return self.index[word]

    def has_tag(self, word: str, tag: str) -> bool:
        i = self.index.get(word)
        return i is not None and tag in self.tags[i]

    def ids_with_tags(self, tags: Iterable[str]) -> list[int]:
        wanted = set(tags)
        return [i for i, t in enumerate(self.tags) if t & wanted]

    @classmethod
    def from_sections(cls, sections: dict[str, Sequence[str]]) -> "Vocabulary":
        """Build from ``{tag: [word, ...]}``; a word listed under several tags gets all of them."""
        order: list[str] = []
        tagmap: dict[str, set[str]] = {}
        for tag, words in sections.items():
            for w in words:
                if w not in tagmap:
                    tagmap[w] = set()
                    order.append(w)
                tagmap[w].add(tag)
        return cls(tuple(order), tuple(frozenset(tagmap[w]) for w in order))


@dataclass(frozen=True, order=True)
class TemplateAction:
    template_id: int
    fills: tuple[int, ...] = ()


def _check_arity(action: TemplateAction, templates: Sequence[Template]) -> Template:
    if not 0 <= action.template_id < len(templates):
        raise ActionError(f"unknown template id {action.template_id}")
    tpl = templates[action.template_id]
    if len(action.fills) != tpl.arity:
        raise ActionError(
            f"template {tpl.text!r} takes {tpl.arity} fills, got {len(action.fills)}"
        )
    return tpl


def render(action: TemplateAction, vocab: Vocabulary, templates: Sequence[Template]) -> str:
    tpl = _check_arity(action, templates)
    fills = iter(action.fills)
    out = []
    for tok in tpl.pattern:
        if tok == BLANK:
            out.append(vocab.words[next(fills)])
        else:
            out.append(tok)
    return " ".join(out)


def parse(text: str, vocab: Vocabulary, templates: Sequence[Template]) -> TemplateAction:
    """Match ``text`` against every template; prefer the match with the most literal tokens.

    Each blank consumes exactly one vocabulary word.
    """
    tokens = tokenize(text)
    verbs = {t.pattern[0] for t in templates}
    if not tokens or tokens[0] not in verbs:
        raise UnrecognizedVerbError(f"unrecognized verb in {text!r}")
    best = None
    unknown = None
    for tpl in templates:
        if len(tpl.pattern) != len(tokens):
            continue
        if any(p != BLANK and p != tok for p, tok in zip(tpl.pattern, tokens)):
            continue
        blanks = [tok for p, tok in zip(tpl.pattern, tokens) if p == BLANK]
        missing = [tok for tok in blanks if tok not in vocab]
        if missing:
            unknown = unknown or missing[0]
            continue
        literals = len(tpl.pattern) - len(blanks)
        key = (-literals, tpl.id)
        if best is None or key < best[0]:
            best = (key, TemplateAction(tpl.id, tuple(vocab.id(tok) for tok in blanks)))
    if best is not None:
        return best[1]
    if unknown is not None:
        raise UnknownWordError(f"unknown word {unknown!r}")
    raise ActionError(f"no template matches {text!r}")


def action_space_size(templates: Iterable[Template], vocab: Sequence | int) -> int:
    """Number of template actions: sum over templates of |vocab| ** arity."""
    n = vocab if isinstance(vocab, int) else len(vocab)
    return sum(n ** t.arity for t in templates)


def word_space_size(n_words: int, max_words: int) -> int:
    """Size of the unconstrained command space, ``n_words ** max_words``."""
    return n_words**max_words


def fill_candidates(vocab: Vocabulary) -> list[int]:
    """Word ids eligible to fill blanks during brute-force enumeration."""
    return vocab.ids_with_tags(FILL_TAGS)


def enumerate_actions(templates: Sequence[Template], fill_ids: Sequence[int]) -> list[TemplateAction]:
    """Every template x fill combination, in canonical (template id, fills) order."""
    ids = sorted(fill_ids)
    out = []
    for tpl in sorted(templates, key=lambda t: t.id):
        for fills in itertools.product(ids, repeat=tpl.arity):
            out.append(TemplateAction(tpl.id, fills))
    return out
