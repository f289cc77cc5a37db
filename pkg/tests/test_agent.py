import math

import numpy as np
import pytest

from kgexplore import engine, kg
from kgexplore.actions import TemplateAction, parse
from kgexplore.agent import (TEXT_ONLY, WITH_KG, Featurizer, PolicyParams, Start, TrainingConfig, TrainingFault,
                             TrajectoryStep, a2c_gradients, a2c_update, act, discounted_returns, encode_state,
                             fill_probs, run_episode, template_probs)

from conftest import actions_of

# chi-square critical value, 19 degrees of freedom, p = 0.001
CHI2_19_999 = 43.82


# -- independent loss for the finite-difference oracle ---------------------

def _log_softmax(z):
    m = z.max()
    return z - m - np.log(np.exp(z - m).sum())


def reference_loss(theta, batch, adv, returns, cfg, dim):
    tw, ow, vw = theta
    total = 0.0
    for i, s in enumerate(batch):
        x = s.features
        lp = _log_softmax(x @ tw)
        ent = -float(np.exp(lp) @ lp)
        logp = lp[s.action.template_id]
        for k, f in enumerate(s.action.fills):
            cols = list(s.allowed)
            z = x @ ow[k][:dim, cols] + ow[k][dim + s.action.template_id, cols]
            logp += _log_softmax(z)[cols.index(f)]
        v = float(x @ vw)
        total += -adv[i] * logp + cfg.value_coef * (returns[i] - v) ** 2 - cfg.entropy_coef * ent
    return total


def random_batch(rng, dim, n_templates, arities, n_vocab, n=10):
    batch = []
    for _ in range(n):
        x = rng.normal(size=dim)
        tid = int(rng.integers(n_templates))
        allowed = np.sort(rng.choice(n_vocab, size=int(rng.integers(1, 8)), replace=False))
        fills = tuple(int(rng.choice(allowed)) for _ in range(arities[tid]))
        batch.append(TrajectoryStep(x, TemplateAction(tid, fills), allowed, 0.0, 0.0,
                                    float(rng.choice([0.0, 0.0, 1.0, 5.0, -10.0])), bool(rng.random() < 0.2)))
    return batch


def check_gradient_batch(rng, shed, eps=1e-5):
    f = Featurizer(shed, WITH_KG, bow_dim=16)
    arities = [t.arity for t in shed.templates]
    T, V = len(shed.templates), len(shed.vocab)
    cfg = TrainingConfig(gamma=0.9, entropy_coef=0.05, value_coef=0.5, reward_scale=0.1)
    params = PolicyParams(rng.normal(scale=0.3, size=(f.dim, T)),
                          rng.normal(scale=0.3, size=(2, f.dim + T, V)),
                          rng.normal(scale=0.3, size=f.dim))
    batch = random_batch(rng, f.dim, T, arities, V)
    boot = float(rng.normal())
    grads, _ = a2c_gradients(params, batch, cfg, boot)

    rewards = [s.reward * cfg.reward_scale for s in batch]
    returns = discounted_returns(rewards, [s.done for s in batch], cfg.gamma, boot)
    adv = returns - np.stack([s.features for s in batch]) @ params.value_w

    theta = [params.template_w.copy(), params.object_w.copy(), params.value_w.copy()]
    coords = [(0, idx) for idx in np.ndindex(theta[0].shape)]
    coords += [(2, idx) for idx in np.ndindex(theta[2].shape)]
    used_cols = sorted({int(c) for s in batch for c in s.allowed})
    obj = [(1, (k, r, c)) for k in range(2) for r in range(f.dim + T) for c in used_cols]
    pick = rng.choice(len(obj), size=min(200, len(obj)), replace=False)
    coords += [obj[i] for i in pick]

    analytic, numeric = [], []
    g = grads.arrays
    for which, idx in coords:
        orig = theta[which][idx]
        theta[which][idx] = orig + eps
        up = reference_loss(theta, batch, adv, returns, cfg, f.dim)
        theta[which][idx] = orig - eps
        down = reference_loss(theta, batch, adv, returns, cfg, f.dim)
        theta[which][idx] = orig
        numeric.append((up - down) / (2 * eps))
        analytic.append(g[which][idx])
    a, n = np.array(analytic), np.array(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n)))


def test_gradient_matches_finite_differences(shed):
    rng = np.random.default_rng(1234)
    errs = [check_gradient_batch(rng, shed) for _ in range(5)]
    assert max(errs) < 1e-4


# -- acting ----------------------------------------------------------------

def test_single_word_mask_forces_fill(world):
    f = Featurizer(world)
    s, obs = engine.reset(world)
    x = f.encode(obs, kg.EMPTY, 0)
    params = PolicyParams.for_world(f)
    rng = np.random.default_rng(0)
    lamp = world.vocab.id("lamp")
    take = parse("take lamp", world.vocab, world.templates)
    arities = [t.arity for t in world.templates]
    for _ in range(200):
        a, logp, _ = act(params, x, np.array([lamp]), rng, arities, forced=None)
        assert all(w == lamp for w in a.fills)
    a, logp, _ = act(params, x, np.array([lamp]), rng, arities, forced=take)
    assert logp == pytest.approx(math.log(1 / len(world.templates)))


def test_zero_params_uniform_templates(world):
    f = Featurizer(world)
    x = f.encode(engine.reset(world)[1], kg.EMPTY, 0)
    params = PolicyParams.for_world(f)
    rng = np.random.default_rng(5)
    arities = [t.arity for t in world.templates]
    T = len(world.templates)
    counts = np.zeros(T)
    n = 10_000
    for _ in range(n):
        a, _, _ = act(params, x, f.noun_ids, rng, arities)
        counts[a.template_id] += 1
    expected = n / T
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert T == 20 and chi2 < CHI2_19_999


def test_masked_words_never_sampled(world):
    f = Featurizer(world)
    rng = np.random.default_rng(9)
    params = PolicyParams.for_world(f)
    params.object_w[:] = rng.normal(scale=2.0, size=params.object_w.shape)
    x = f.encode(engine.reset(world)[1], kg.EMPTY, 0)
    allowed = np.array(sorted(world.vocab.id(w) for w in ("mailbox", "egg", "nest")))
    arities = [t.arity for t in world.templates]
    ok = set(allowed.tolist())
    for _ in range(100_000):
        a, _, _ = act(params, x, allowed, rng, arities)
        assert ok.issuperset(a.fills)


def test_probabilities_normalized(world):
    f = Featurizer(world)
    rng = np.random.default_rng(3)
    params = PolicyParams(rng.normal(size=(f.dim, 20)), rng.normal(size=(2, f.dim + 20, len(world.vocab))),
                          rng.normal(size=f.dim))
    x = f.encode(engine.reset(world)[1], kg.EMPTY, 0)
    assert abs(template_probs(params, x).sum() - 1) < 1e-9
    for tid in range(20):
        assert abs(fill_probs(params, x, tid, 1, f.noun_ids).sum() - 1) < 1e-9


def test_nonfinite_logits_fault(world):
    f = Featurizer(world)
    params = PolicyParams.for_world(f)
    params.template_w[0, 0] = np.nan
    x = f.encode(engine.reset(world)[1], kg.EMPTY, 0)
    with pytest.raises(TrainingFault):
        act(params, x, f.noun_ids, np.random.default_rng(0), [t.arity for t in world.templates])


# -- updates ---------------------------------------------------------------

def _steps(world, f, rewards, dones):
    x = f.encode(engine.reset(world)[1], kg.EMPTY, 0)
    look = parse("look", world.vocab, world.templates)
    return [TrajectoryStep(x, look, f.noun_ids, 0.0, 0.0, r, d) for r, d in zip(rewards, dones)]


def test_zero_batch_losses(world):
    f = Featurizer(world)
    batch = _steps(world, f, [0.0] * 4, [False] * 4)
    _, stats = a2c_gradients(PolicyParams.for_world(f), batch, TrainingConfig())
    assert stats.value_loss == 0 and stats.policy_loss == 0
    assert stats.entropy == pytest.approx(4 * math.log(len(world.templates)))


def test_update_increases_rewarded_logit(world):
    f = Featurizer(world)
    batch = _steps(world, f, [1.0], [True])
    params = PolicyParams.for_world(f)
    new, _ = a2c_update(params, batch, TrainingConfig(reward_scale=1.0, entropy_coef=0.0))
    x = batch[0].features
    tid = batch[0].action.template_id
    assert template_probs(new, x)[tid] > template_probs(params, x)[tid]
    assert np.all(params.template_w == 0)


def test_nan_loss_leaves_params(world):
    f = Featurizer(world)
    batch = _steps(world, f, [np.nan], [True])
    params = PolicyParams.for_world(f)
    before = params.digest()
    with pytest.raises(TrainingFault):
        a2c_update(params, batch, TrainingConfig())
    assert params.digest() == before


def test_discounted_returns():
    r = discounted_returns([1.0, 0.0, 2.0], [False, False, True], 0.5, bootstrap=100.0)
    assert list(r) == [1.5, 1.0, 2.0]
    r = discounted_returns([1.0, 1.0], [False, False], 0.5, bootstrap=4.0)
    assert list(r) == [2.5, 3.0]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(gamma=0.0)
    with pytest.raises(ValueError):
        TrainingConfig(batch_size=0)


# -- features --------------------------------------------------------------

def test_encode_deterministic_and_variants(world, walkthrough):
    r = kg.replay(world, walkthrough[:6])
    a = encode_state(r.observation, r.kg, WITH_KG, world, r.state.steps)
    b = encode_state(r.observation, r.kg, WITH_KG, world, r.state.steps)
    c = encode_state(r.observation, r.kg, TEXT_ONLY, world, r.state.steps)
    assert np.array_equal(a, b)
    f = Featurizer(world)
    diff = np.nonzero(a != c)[0]
    assert len(diff) > 0
    assert all(f.kg_slice.start <= i < f.kg_slice.stop for i in diff)
    assert np.isfinite(a).all()


def test_kg_block_matches_mask(world, walkthrough):
    r = kg.replay(world, walkthrough)
    f = Featurizer(world)
    x = f.encode(r.observation, r.kg, r.state.steps)
    assert x[f.kg_slice].sum() == len(kg.graph_mask(r.kg, world.vocab)) == 6


# -- episodes --------------------------------------------------------------

def test_zero_policy_baseline_band(world):
    f = Featurizer(world)
    scores = []
    for seed in range(5):
        ep = run_episode(world, PolicyParams.for_world(f), f, np.random.default_rng(seed), TrainingConfig())
        scores.append(ep.final_score)
    assert -10 <= np.mean(scores) <= 15


def test_episode_from_prefix_counts_from_start(world, walkthrough):
    f = Featurizer(world)
    start = Start.from_prefix(world, walkthrough[:9])
    assert start.state.score == 40
    ep = run_episode(world, PolicyParams.for_world(f), f, np.random.default_rng(0), TrainingConfig(),
                     start=start, limit=5)
    assert ep.start_score == 40
    assert ep.peak[0] >= 40
    assert all(s >= 30 for s in ep.scores)


def test_episode_determinism(world):
    f = Featurizer(world)
    runs = [run_episode(world, PolicyParams.for_world(f), f, np.random.default_rng(11), TrainingConfig(),
                        learn=True) for _ in range(2)]
    assert runs[0].actions == runs[1].actions
    assert runs[0].params.digest() == runs[1].params.digest()


def test_mask_constraint_in_episodes(world):
    f = Featurizer(world, WITH_KG)
    rng = np.random.default_rng(2)
    params = PolicyParams.for_world(f)
    state, obs = engine.reset(world)
    g = kg.update_graph(kg.EMPTY, obs, None, state, world)
    arities = [t.arity for t in world.templates]
    while not engine.is_done(world, state):
        allowed = f.fill_set(g)
        a, _, _ = act(params, f.encode(obs, g, state.steps), allowed, rng, arities)
        assert set(a.fills) <= set(allowed.tolist())
        state, obs = engine.step(world, state, a)
        g = kg.update_graph(g, obs, a, state, world)


def test_start_from_blob_checks_prefix(world, walkthrough):
    s, _ = engine.run_actions(world, walkthrough[:4])
    start = Start.from_blob(world, engine.snapshot(s), walkthrough[:4])
    assert start.state == s
    with pytest.raises(ValueError):
        Start.from_blob(world, engine.snapshot(s), walkthrough[:3])


def test_checkpoint_roundtrip(world):
    f = Featurizer(world)
    rng = np.random.default_rng(0)
    p = PolicyParams(rng.normal(size=(f.dim, 20)), rng.normal(size=(2, f.dim + 20, len(world.vocab))),
                     rng.normal(size=f.dim))
    blob = p.to_bytes()
    q = PolicyParams.from_bytes(blob)
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays, q.arrays))
    assert q.to_bytes() == blob
    with pytest.raises(ValueError):
        PolicyParams.from_bytes(blob[:-1])


def test_frozen_params_reject_writes(world):
    p = PolicyParams.for_world(Featurizer(world)).frozen()
    with pytest.raises(ValueError):
        p.template_w[0, 0] = 1.0
