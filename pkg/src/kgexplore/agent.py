"""Linear advantage actor-critic over the template action space."""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import engine
from .actions import TemplateAction
from .engine import GameState, Observation
from .kg import EMPTY, KnowledgeGraph, graph_mask, replay, update_graph
from .world import WorldSpec

WITH_KG = "with-kg"
TEXT_ONLY = "text-only"
VARIANTS = (WITH_KG, TEXT_ONLY)

CHECKPOINT_VERSION = 1


class TrainingFault(RuntimeError):
    """Non-finite logits or loss; carries diagnostics in the message."""


@dataclass
class TrainingConfig:
    # Defaults tuned on the fixture world; not taken from any published setting.
    lr: float = 3e-3
    gamma: float = 0.9
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    batch_size: int = 32
    max_steps: int | None = None
    max_grad_norm: float = 5.0
    reward_scale: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


# -- features --------------------------------------------------------------

class Featurizer:
    """Hashed bag-of-words, KG noun indicators, score, step and a bias term."""

    def __init__(self, world: WorldSpec, variant: str = WITH_KG, bow_dim: int = 256):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.world = world
        self.variant = variant
        self.bow_dim = bow_dim
        self.noun_ids = np.array(world.vocab.ids_with_tags(["noun"]), dtype=np.int64)
        self._noun_pos = {int(w): k for k, w in enumerate(self.noun_ids)}
        self.kg_slice = slice(bow_dim, bow_dim + len(self.noun_ids))
        self.dim = bow_dim + len(self.noun_ids) + 3
        self._bow_cache: dict[str, np.ndarray] = {}

    @property
    def uses_kg(self) -> bool:
        return self.variant == WITH_KG

    def _bow(self, text: str) -> np.ndarray:
        vec = self._bow_cache.get(text)
        if vec is None:
            vec = np.zeros(self.bow_dim)
            for tok in set(text.lower().split()):
                tok = tok.strip(".,!?;:\"'()")
                if tok:
                    vec[zlib.crc32(tok.encode()) % self.bow_dim] = 1.0
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec /= norm
            if len(self._bow_cache) < 50_000:
                self._bow_cache[text] = vec
        return vec

    def encode(self, observation: Observation, kg: KnowledgeGraph, steps: int) -> np.ndarray:
        x = np.zeros(self.dim)
        x[: self.bow_dim] = self._bow(observation.text)
        if self.uses_kg:
            for wid in graph_mask(kg, self.world.vocab):
                x[self.bow_dim + self._noun_pos[wid]] = 1.0
        x[-3] = observation.score / 100.0
        x[-2] = steps / self.world.max_steps
        x[-1] = 1.0
        return x

    def fill_set(self, kg: KnowledgeGraph) -> np.ndarray:
        """Word ids the object heads may choose: the graph mask, else every noun."""
        if self.uses_kg:
            mask = graph_mask(kg, self.world.vocab)
            if mask:
                return np.array(sorted(mask), dtype=np.int64)
        return self.noun_ids


def encode_state(observation: Observation, kg: KnowledgeGraph, variant: str, world: WorldSpec,
                 steps: int = 0) -> np.ndarray:
    return Featurizer(world, variant).encode(observation, kg, steps)


# -- parameters ------------------------------------------------------------

@dataclass
class PolicyParams:
    template_w: np.ndarray  # (dim, n_templates)
    object_w: np.ndarray  # (2, dim + n_templates, n_vocab)
    value_w: np.ndarray  # (dim,)

    @classmethod
    def zeros(cls, dim: int, n_templates: int, n_vocab: int) -> "PolicyParams":
        return cls(np.zeros((dim, n_templates)), np.zeros((2, dim + n_templates, n_vocab)), np.zeros(dim))

    @classmethod
    def for_world(cls, featurizer: Featurizer) -> "PolicyParams":
        w = featurizer.world
        return cls.zeros(featurizer.dim, len(w.templates), len(w.vocab))

    @property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.template_w, self.object_w, self.value_w

    def copy(self) -> "PolicyParams":
        return PolicyParams(*(a.copy() for a in self.arrays))

    def frozen(self) -> "PolicyParams":
        out = self.copy()
        for a in out.arrays:
            a.flags.writeable = False
        return out

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays)

    def to_bytes(self) -> bytes:
        """Versioned checkpoint: array count, then per array its shape header and row-major float64 data."""
        out = [struct.pack("<BI", CHECKPOINT_VERSION, 3)]
        for a in self.arrays:
            out.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
            out.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PolicyParams":
        try:
            version, count = struct.unpack_from("<BI", blob, 0)
            if version != CHECKPOINT_VERSION or count != 3:
                raise ValueError(f"unsupported checkpoint version {version}")
            off = 5
            arrays = []
            for _ in range(count):
                (ndim,) = struct.unpack_from("<B", blob, off)
                off += 1
                shape = struct.unpack_from(f"<{ndim}I", blob, off)
                off += 4 * ndim
                n = int(np.prod(shape))
                data = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
                off += 8 * n
                arrays.append(data.reshape(shape).astype(np.float64))
            if off != len(blob):
                raise ValueError("trailing bytes in checkpoint")
        except struct.error as exc:
            raise ValueError(f"truncated checkpoint: {exc}") from None
        return cls(*arrays)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


# -- acting ----------------------------------------------------------------

@dataclass
class TrajectoryStep:
    features: np.ndarray
    action: TemplateAction
    allowed: np.ndarray
    log_prob: float
    value: float
    reward: float = 0.0
    done: bool = False


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _sample(p: np.ndarray, rng: np.random.Generator) -> int:
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(idx, len(p) - 1)


def template_probs(params: PolicyParams, features: np.ndarray) -> np.ndarray:
    return _softmax(features @ params.template_w)


def fill_probs(params: PolicyParams, features: np.ndarray, template_id: int, blank: int,
               allowed: np.ndarray) -> np.ndarray:
    """Distribution over ``allowed`` word ids for one blank; other words have probability zero."""
    w = params.object_w[blank]
    dim = features.shape[0]
    logits = features @ w[:dim, allowed] + w[dim + template_id, allowed]
    return _softmax(logits)


def act(params: PolicyParams, features: np.ndarray, allowed: np.ndarray, rng: np.random.Generator,
        arities: Sequence[int], forced: TemplateAction | None = None):
    """Sample (or score a forced) action; returns (action, log_prob, value)."""
    logits = features @ params.template_w
    if not np.isfinite(logits).all():
        raise TrainingFault(f"non-finite template logits (max |w|={np.abs(params.template_w).max()})")
    p = _softmax(logits)
    tid = forced.template_id if forced is not None else _sample(p, rng)
    logp = float(np.log(p[tid]))
    fills = []
    for k in range(arities[tid]):
        if len(allowed) == 0:
            raise TrainingFault("empty fill set for a template with blanks")
        q = fill_probs(params, features, tid, k, allowed)
        if not np.isfinite(q).all():
            raise TrainingFault(f"non-finite fill distribution for template {tid} blank {k}")
        if forced is not None:
            j = int(np.searchsorted(allowed, forced.fills[k]))
            if j >= len(allowed) or allowed[j] != forced.fills[k]:
                raise ValueError("forced fill outside the allowed set")
        else:
            j = _sample(q, rng)
        fills.append(int(allowed[j]))
        logp += float(np.log(max(q[j], 1e-300)))
    value = float(features @ params.value_w)
    return TemplateAction(tid, tuple(fills)), logp, value


# -- learning --------------------------------------------------------------

@dataclass
class LossStats:
    policy_loss: float
    value_loss: float
    entropy: float
    total: float
    grad_norm: float = 0.0


def discounted_returns(rewards: Sequence[float], dones: Sequence[bool], gamma: float,
                       bootstrap: float = 0.0) -> np.ndarray:
    out = np.zeros(len(rewards))
    running = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * (0.0 if dones[t] else running)
        out[t] = running
    return out


def a2c_gradients(params: PolicyParams, batch: Sequence[TrajectoryStep], config: TrainingConfig,
                  bootstrap_value: float = 0.0, advantages: np.ndarray | None = None):
    """Analytic gradient of the A2C loss.

    ``advantages`` overrides the detached ``R - V`` term; the value and entropy
    terms always use ``params``.
    """
    if not batch:
        raise ValueError("empty batch")
    rewards = [s.reward * config.reward_scale for s in batch]
    returns = discounted_returns(rewards, [s.done for s in batch], config.gamma, bootstrap_value)
    X = np.stack([s.features for s in batch])
    values = X @ params.value_w
    adv = returns - values if advantages is None else np.asarray(advantages, dtype=float)

    logits = X @ params.template_w
    P = np.exp(logits - logits.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    logP = np.log(np.maximum(P, 1e-300))
    H = -(P * logP).sum(axis=1)
    rows = np.arange(len(batch))
    tids = np.array([s.action.template_id for s in batch])
    policy_loss = -float(adv @ logP[rows, tids])
    entropy = float(H.sum())
    DL = adv[:, None] * P
    DL[rows, tids] -= adv
    DL += config.entropy_coef * P * (logP + H[:, None])
    g_t = X.T @ DL

    g_o = np.zeros_like(params.object_w)
    dim = X.shape[1]
    for i, s in enumerate(batch):
        if not s.action.fills:
            continue
        x, tid, allowed = X[i], s.action.template_id, s.allowed
        for k, fill in enumerate(s.action.fills):
            q = fill_probs(params, x, tid, k, allowed)
            j = int(np.searchsorted(allowed, fill))
            policy_loss -= adv[i] * np.log(max(q[j], 1e-300))
            dq = adv[i] * q
            dq[j] -= adv[i]
            g_o[k][:dim, allowed] += np.outer(x, dq)
            g_o[k][dim + tid, allowed] += dq

    resid = returns - values
    value_loss = float(resid @ resid)
    g_v = -2.0 * config.value_coef * (resid @ X)
    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
    stats = LossStats(float(policy_loss), value_loss, float(entropy), float(total))
    return PolicyParams(g_t, g_o, g_v), stats


def a2c_update(params: PolicyParams, batch: Sequence[TrajectoryStep], config: TrainingConfig,
               bootstrap_value: float = 0.0) -> tuple[PolicyParams, LossStats]:
    """One gradient step; returns fresh params and leaves ``params`` untouched."""
    grads, stats = a2c_gradients(params, batch, config, bootstrap_value)
    if not np.isfinite(stats.total) or not grads.is_finite():
        raise TrainingFault(f"non-finite loss {stats.total}; parameters left unchanged")
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.arrays)))
    stats.grad_norm = norm
    scale = config.lr
    if config.max_grad_norm and norm > config.max_grad_norm:
        scale *= config.max_grad_norm / norm
    new = PolicyParams(*(w - scale * g for w, g in zip(params.arrays, grads.arrays)))
    return new, stats


# -- episodes --------------------------------------------------------------

@dataclass
class Episode:
    steps: list[TrajectoryStep] = field(default_factory=list)
    actions: list[TemplateAction] = field(default_factory=list)
    scores: list[int] = field(default_factory=list)
    start_score: int = 0
    state: GameState | None = None
    observation: Observation | None = None
    kg: KnowledgeGraph = EMPTY
    params: PolicyParams | None = None
    updates: int = 0

    @property
    def final_score(self) -> int:
        return self.scores[-1] if self.scores else self.start_score

    @property
    def peak(self) -> tuple[int, int]:
        """(highest score, number of policy steps taken when it was first reached)."""
        best, at = self.start_score, 0
        for i, s in enumerate(self.scores):
            if s > best:
                best, at = s, i + 1
        return best, at


@dataclass
class Start:
    """Where an episode begins: a replayed prefix, plus the resulting state and graph."""

    prefix: tuple[TemplateAction, ...]
    state: GameState
    observation: Observation
    kg: KnowledgeGraph

    @classmethod
    def from_prefix(cls, world: WorldSpec, prefix: Sequence[TemplateAction], track_kg: bool = True) -> "Start":
        r = replay(world, prefix, track_kg=track_kg)
        return cls(tuple(prefix), r.state, r.observation, r.kg)

    @classmethod
    def from_blob(cls, world: WorldSpec, blob: bytes, prefix: Sequence[TemplateAction],
                  track_kg: bool = True) -> "Start":
        """Restore from a snapshot; the graph is rebuilt by replaying ``prefix``, which must agree."""
        start = cls.from_prefix(world, prefix, track_kg)
        state = engine.restore(blob)
        if engine.state_hash(state) != engine.state_hash(start.state):
            raise ValueError("snapshot does not match the replayed prefix")
        return cls(start.prefix, state, start.observation, start.kg)


def run_episode(
    world: WorldSpec,
    params: PolicyParams,
    featurizer: Featurizer,
    rng: np.random.Generator,
    config: TrainingConfig,
    start: Start | None = None,
    learn: bool = False,
    limit: int | None = None,
    first_action: TemplateAction | None = None,
    on_update: Callable[[LossStats], None] | None = None,
    on_step: Callable[[GameState, Observation, KnowledgeGraph, TemplateAction], None] | None = None,
) -> Episode:
    """Play the sampled policy from ``start`` (or reset) until done or ``limit`` policy steps.

    With ``learn`` the params are updated every ``config.batch_size`` steps and at
    episode end; the final params are returned on the episode.
    """
    if start is None:
        start = Start.from_prefix(world, (), featurizer.uses_kg)
    state, obs, kg = start.state, start.observation, start.kg
    arities = [t.arity for t in world.templates]
    ep = Episode(start_score=state.score, params=params)
    cap = world.max_steps if config.max_steps is None else min(world.max_steps, config.max_steps)
    pending: list[TrajectoryStep] = []
    x = featurizer.encode(obs, kg, state.steps)
    n = 0
    while not engine.is_done(world, state) and state.steps < cap and (limit is None or n < limit):
        allowed = featurizer.fill_set(kg)
        forced = first_action if n == 0 else None
        if forced is not None and any(f not in set(allowed.tolist()) for f in forced.fills):
            allowed = np.union1d(allowed, np.array(forced.fills, dtype=np.int64))
        action, logp, value = act(params, x, allowed, rng, arities, forced)
        state, obs = engine.step(world, state, action)
        if featurizer.uses_kg:
            kg = update_graph(kg, obs, action, state, world)
        n += 1
        if on_step:
            on_step(state, obs, kg, action)
        step_rec = TrajectoryStep(x, action, allowed, logp, value, float(obs.reward), obs.done)
        ep.steps.append(step_rec)
        ep.actions.append(action)
        ep.scores.append(state.score)
        pending.append(step_rec)
        x = featurizer.encode(obs, kg, state.steps)
        if learn and len(pending) >= config.batch_size:
            boot = 0.0 if obs.done else float(x @ params.value_w)
            params, stats = a2c_update(params, pending, config, boot)
            ep.updates += 1
            if on_update:
                on_update(stats)
            pending = []
    if learn and pending:
        boot = 0.0 if pending[-1].done else float(x @ params.value_w)
        params, stats = a2c_update(params, pending, config, boot)
        ep.updates += 1
        if on_update:
            on_update(stats)
    ep.state, ep.observation, ep.kg, ep.params = state, obs, kg, params
    return ep


@dataclass
class TrainResult:
    scores: list[int]
    peaks: list[int]
    steps_used: int
    params: PolicyParams
    terminal: str


def train_a2c(world: WorldSpec, variant: str, config: TrainingConfig, seed: int, budget: int,
              params: PolicyParams | None = None, log: Callable[[dict], None] | None = None) -> TrainResult:
    """Plain A2C: episodes from reset until the step budget or the maximum score."""
    featurizer = Featurizer(world, variant)
    rng = np.random.default_rng(seed)
    params = PolicyParams.for_world(featurizer) if params is None else params.copy()
    scores, peaks = [], []
    used = 0
    terminal = "budget"
    episode = 0
    while used < budget:
        ep = run_episode(world, params, featurizer, rng, config, learn=True, limit=budget - used)
        params = ep.params
        used += len(ep.steps)
        scores.append(ep.final_score)
        peaks.append(ep.peak[0])
        if log:
            log({"episode": episode, "steps": used, "score": ep.final_score, "peak": ep.peak[0]})
        episode += 1
        if ep.peak[0] >= world.max_score:
            terminal = "max-score"
            break
        if not ep.steps:
            break
    return TrainResult(scores, peaks, used, params, terminal)
