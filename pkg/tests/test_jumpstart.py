import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rocketland.approx import init_policy, init_value
from rocketland.config import RunConfig, ScheduleConfig
from rocketland.environment import BASE_OBS_DIM, LandingEnv, TerminalKind
from rocketland.jumpstart import (
    CheckpointGuide,
    F2Accumulator,
    GaussianPolicy,
    PidGuidePolicy,
    RolloutCollector,
    ScheduleState,
    curriculum_horizon,
    make_batch,
    rollout_episode,
    sample_guide_horizon,
    update_annealing,
    update_success_metric,
)
from rocketland.evaluation import fluctuation_f2


def small_policy(obs_dim=BASE_OBS_DIM, seed=0, log_std=-1.0):
    return GaussianPolicy(init_policy(np.random.default_rng(seed), obs_dim, 4, (16, 16), log_std=log_std))


# ---------------------------------------------------------------- horizon sampling

def test_beta_zero_gives_zero_horizon():
    s = ScheduleState(beta=0.0, h_bar=100.0)
    rng = np.random.default_rng(0)
    assert all(sample_guide_horizon(s, rng) == 0.0 for _ in range(1000))


def test_horizon_uniform_moments():
    s = ScheduleState(beta=1.0, h_bar=18.0)
    rng = np.random.default_rng(1)
    h = np.array([sample_guide_horizon(s, rng) for _ in range(100_000)])
    assert np.all((h >= 0) & (h < 18))
    assert abs(h.mean() - 9.0) < 0.1


def test_curriculum_horizon_values():
    assert curriculum_horizon(0, 4, 18.0) == 18.0
    assert curriculum_horizon(4, 4, 18.0) == 0.0
    assert curriculum_horizon(1, 4, 18.0) == 13.5
    with pytest.raises(ValueError):
        curriculum_horizon(5, 4, 18.0)
    s = ScheduleState(variant="jsrl_curriculum", h_bar=18.0, k=0)
    assert sample_guide_horizon(s, np.random.default_rng(0)) == 18.0


def test_none_variant():
    s = ScheduleState.from_config(ScheduleConfig(variant="none"))
    assert s.beta == 0.0
    assert sample_guide_horizon(s, np.random.default_rng(0)) == 0.0


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        ScheduleState(variant="bogus")


def test_jsrl_random_stationary():
    rng = np.random.default_rng(2)
    early = ScheduleState(variant="jsrl_random", h_bar=500.0, success=0.0)
    late = ScheduleState(variant="jsrl_random", h_bar=500.0, success=0.9)
    for _ in range(1000):
        late = update_annealing(late, env_steps=10 ** 9)
    a = [sample_guide_horizon(early, rng) for _ in range(20_000)]
    b = [sample_guide_horizon(late, rng) for _ in range(20_000)]
    assert late.beta == 1.0
    assert stats.ks_2samp(a, b).pvalue > 0.01


# ---------------------------------------------------------------- annealing

def test_annealing_step():
    s = ScheduleState(beta=1.0, success=0.5, p_thresh=0.3, alpha=1 / 1500)
    assert update_annealing(s).beta == pytest.approx(1 - 1 / 1500, abs=1e-15)


def test_annealing_below_threshold_unchanged():
    s = ScheduleState(beta=0.7, success=0.1)
    assert update_annealing(s).beta == 0.7


def test_annealing_clamped():
    s = ScheduleState(beta=0.0003, success=0.9, alpha=1 / 1500)
    assert update_annealing(s).beta == 0.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=300), st.floats(1e-4, 0.2))
@settings(max_examples=100, deadline=None)
def test_beta_monotone_over_any_metric_stream(stream, alpha):
    s = ScheduleState(alpha=alpha)
    prev = s.beta
    for p in stream:
        s.success = p
        s = update_annealing(s)
        assert 0.0 <= s.beta <= prev
        prev = s.beta


def test_ramp_schedule():
    s = ScheduleState(variant="rajs_ramp", ramp_start=100, ramp_end=300)
    assert update_annealing(s, 50).beta == 1.0
    assert update_annealing(s, 200).beta == pytest.approx(0.5)
    assert update_annealing(s, 400).beta == 0.0
    # never increases
    assert update_annealing(update_annealing(s, 200), 150).beta == pytest.approx(0.5)


def test_curriculum_advances_after_window():
    s = ScheduleState(variant="jsrl_curriculum", success=0.5, window=10, episodes_since_k=3)
    assert update_annealing(s).k == 0
    s.episodes_since_k = 10
    s2 = update_annealing(s)
    assert s2.k == 1 and s2.episodes_since_k == 0


# ---------------------------------------------------------------- success metric

def test_metric_limits():
    p = 0.3
    for _ in range(10_000):
        p = update_success_metric(p, TerminalKind.GOAL, 500)
    assert p > 0.999
    for _ in range(10_000):
        p = update_success_metric(p, TerminalKind.FAILED_LANDING, 500)
    assert p < 0.001


def test_metric_alternating_stream():
    p = 0.0
    for i in range(5000):
        p = update_success_metric(p, TerminalKind.GOAL if i % 2 else TerminalKind.EARLY_INFEASIBLE, 500)
    assert abs(p - 0.5) < 0.02


# ---------------------------------------------------------------- single-episode rollouts

def test_zero_horizon_all_exploration():
    cfg = RunConfig()
    rec = rollout_episode(PidGuidePolicy(cfg, 1), small_policy(), 0.0, LandingEnv(cfg), np.random.default_rng(0))
    assert rec.guide_steps == 0
    assert rec.n_logged == rec.length > 0


def test_horizon_beyond_episode_logs_nothing():
    cfg = RunConfig()
    rec = rollout_episode(PidGuidePolicy(cfg, 1), small_policy(), 1e6, LandingEnv(cfg), np.random.default_rng(1))
    assert rec.n_logged == 0
    assert rec.kind != TerminalKind.NONE
    p = update_success_metric(0.0, rec.kind, 500)
    assert p == (1 / 500 if rec.kind == TerminalKind.GOAL else 0.0)


def test_guide_prefix_deterministic():
    cfg = RunConfig()
    a = rollout_episode(PidGuidePolicy(cfg, 1), small_policy(), 150.7, LandingEnv(cfg), np.random.default_rng(5))
    b = rollout_episode(PidGuidePolicy(cfg, 1), small_policy(seed=3), 150.2, LandingEnv(cfg), np.random.default_rng(5))
    assert a.guide_steps == b.guide_steps == 150
    assert np.array_equal(a.applied[:150], b.applied[:150])


def test_checkpoint_guide_dimension_rules():
    base = init_policy(np.random.default_rng(0), BASE_OBS_DIM, 4, (8,))
    inc = init_policy(np.random.default_rng(0), BASE_OBS_DIM + 4, 4, (8,))
    assert CheckpointGuide(base, env_incremental=True).incremental is False
    assert CheckpointGuide(inc, env_incremental=True).incremental is True
    with pytest.raises(ValueError):
        CheckpointGuide(inc, env_incremental=False)
    with pytest.raises(ValueError):
        CheckpointGuide(init_policy(np.random.default_rng(0), 7, 4, (8,)), env_incremental=True)


# ---------------------------------------------------------------- batched collection

def _collector(variant="rajs_metric", h_bar=300.0, n=8, seed=0, **env):
    cfg = RunConfig()
    cfg.schedule.variant = variant
    cfg.schedule.h_bar = h_bar
    for k, v in env.items():
        setattr(cfg.env, k, v)
    return cfg, RolloutCollector(cfg, n, seed), ScheduleState.from_config(cfg.schedule)


def test_collector_logs_only_exploration_steps():
    cfg, col, sched = _collector(h_bar=3000.0)
    pol = small_policy()
    value = init_value(np.random.default_rng(1), BASE_OBS_DIM, (8,))
    data, eps = col.collect(pol, value, sched, 2000)
    assert len(data["obs"]) == col.decisions >= 2000
    # guide steps are counted as environment steps but never logged
    assert col.env_steps > col.decisions
    assert np.all(np.isfinite(data["adv"])) and np.all(np.isfinite(data["logp"]))


def test_collector_beta_zero_means_no_guide():
    cfg, col, sched = _collector(variant="none")
    data, eps = col.collect(small_policy(), init_value(np.random.default_rng(1), BASE_OBS_DIM, (8,)), sched, 20000)
    assert eps and all(e.horizon == 0.0 and e.guide_steps == 0 for e in eps)
    assert col.env_steps == col.decisions


def test_collector_deterministic():
    value = init_value(np.random.default_rng(1), BASE_OBS_DIM, (8,))
    out = []
    for _ in range(2):
        _, col, sched = _collector(seed=11)
        out.append(col.collect(small_policy(), value, sched, 1500)[0])
    for k in out[0]:
        assert np.array_equal(out[0][k], out[1][k])


def test_collector_action_repeat_counts():
    cfg, col, sched = _collector(variant="none", action_repeat=5)
    col.collect(small_policy(), init_value(np.random.default_rng(1), BASE_OBS_DIM, (8,)), sched, 1000)
    assert col.decisions <= col.env_steps <= 5 * col.decisions


def test_make_batch_normalizes():
    cfg, col, sched = _collector(variant="none")
    data, _ = col.collect(small_policy(), init_value(np.random.default_rng(1), BASE_OBS_DIM, (8,)), sched, 1000)
    b = make_batch(data, np.float32)
    assert b.obs.dtype == np.float32
    assert abs(float(b.advantages.mean())) < 1e-5 and abs(float(b.advantages.std()) - 1) < 1e-3


def test_f2_accumulator_matches_direct_formula():
    rng = np.random.default_rng(3)
    seq = rng.uniform(-1, 1, (50, 4))
    acc = F2Accumulator(2)
    for a in seq:
        acc.push(np.array([1]), a[None])
    assert np.allclose(acc.value(1), fluctuation_f2(seq), atol=1e-12)
    assert acc.value(0) is None
