import numpy as np
import pytest

from basis import seeding
from basis.diagnostics import (
    DiagSettings,
    check_norm_invariance,
    compare_hashing_variance,
    estimate_sts_mean,
    memory_audit,
    render_checks,
    run_suite,
)
from basis.models import MLP, TinyTransformer
from basis.train import TrainConfig


def test_sts_single_trial_diagonal():
    est = estimate_sts_mean(8, 3, 1, seed=4)
    np.testing.assert_array_equal(np.diag(est.mean), 1.0)
    assert est.diagonal_always_one


def test_sts_full_rank_is_identity():
    est = estimate_sts_mean(6, 6, 50, seed=1)
    np.testing.assert_array_equal(est.mean, np.eye(6))
    assert est.max_off_diagonal == 0.0


def test_sts_off_diagonal_entries_are_collision_signs():
    # each trial's off-diagonal entries are in {-1, 0, 1}
    est = estimate_sts_mean(5, 2, 1, seed=2)
    assert set(np.unique(est.mean)) <= {-1.0, 0.0, 1.0}


def test_variance_zero_at_full_rank(rng):
    x, dy = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
    stats = compare_hashing_variance(x, dy, 8, 200, seed=3)
    assert stats["balanced"].per_entry_variance == 0.0
    assert stats["balanced"].mean_abs_bias < 1e-12
    assert stats["uniform"].per_entry_variance > 0.0


def test_variance_zero_inputs():
    stats = compare_hashing_variance(np.zeros((8, 3)), np.ones((8, 2)), 2, 100)
    assert stats["balanced"].per_entry_variance == 0.0 == stats["uniform"].per_entry_variance


def test_variance_balanced_below_uniform():
    rng = seeding.rng(7)
    x, dy = rng.normal(size=(16, 8)), rng.normal(size=(16, 8))
    stats = compare_hashing_variance(x, dy, 4, 2000, seed=1)
    assert stats["balanced"].per_entry_variance <= stats["uniform"].per_entry_variance
    assert stats["balanced"].trials == 2000 and stats["balanced"].scaling_mode == "raw"


def test_variance_ratio_matches_collision_probability():
    # Pairs collide with probability (B/R - 1)/(B - 1) under balanced hashing
    # and 1/R under uniform hashing; the variance is linear in that probability.
    rng = seeding.rng(8)
    x, dy = rng.normal(size=(16, 8)), rng.normal(size=(16, 8))
    stats = compare_hashing_variance(x, dy, 4, 10_000, seed=2)
    ratio = stats["balanced"].per_entry_variance / stats["uniform"].per_entry_variance
    assert ratio == pytest.approx((3 / 15) / (1 / 4), abs=0.05)


def test_norm_invariance_full_rank(rng):
    rep = check_norm_invariance(rng.normal(size=(16, 4)), 16, seed=0)
    assert rep.identity_holds and rep.ceiling_holds
    assert 0 <= rep.gap <= 1e-8


def test_norm_invariance_zero():
    rep = check_norm_invariance(np.zeros((8, 2)), 2)
    assert rep.gap == 0.0 and rep.ceiling_holds


def test_norm_invariance_rank_one(rng):
    rep = check_norm_invariance(rng.normal(size=(64, 16)), 1, seed=3)
    assert rep.gap == pytest.approx(1 - rep.sketch_norm / (rep.sketch_norm + 1e-8), abs=1e-15)
    assert rep.gap <= 1e-6


def test_memory_audit_two_dense_layers():
    model = MLP([64, 64, 64], seed=0)
    exact = memory_audit(model, (64,))
    assert exact.total_activation_floats == 2 * 64 * 64 == 8192
    assert exact.consistent and exact.mode == "exact"
    model.configure("basis", rank=8)
    assert memory_audit(model, (64,)).total_activation_floats == 1024
    model.configure("basis", rank=1)
    rep = memory_audit(model, (64,))
    assert rep.total_activation_floats == 128 and rep.consistent
    assert rep.plan_index_ints == 2 * 2 * 64


def test_memory_audit_independent_of_batch():
    model = MLP([64, 64, 64], seed=0).configure("basis", rank=8)
    assert memory_audit(model, (64,)).total_activation_floats == memory_audit(model, (256,)).total_activation_floats


def test_memory_audit_mixed_modes_and_flops():
    model = TinyTransformer(20, d_model=16, n_heads=2, n_layers=1, seq_len=8)
    model.configure("basis", rank=2, overrides={"head": "exact"})
    rep = memory_audit(model, (1, 8))
    assert rep.mode == "mixed" and rep.consistent
    per = dict(rep.per_layer_cached_floats)
    assert per["head"] == 8 * 16 and per["h0.mlp.proj"] == 2 * 64
    assert rep.flops["dW product"] < rep.flops["dW exact-equivalent"]
    assert "head" in rep.render()


def test_suite_default_passes_quickly():
    s = DiagSettings(sts_trials=2000, var_trials=500, var_instances=2, norm_instances=5)
    checks = run_suite(s, TrainConfig(rank=8), vocab_size=30)
    assert all(c.status == "PASS" for c in checks), render_checks(checks)


def test_suite_single_arm_is_control():
    s = DiagSettings(sts_trials=10, var_trials=100, var_instances=1, norm_instances=1, hashing="uniform")
    checks = run_suite(s, TrainConfig(rank=8), vocab_size=30)
    var = [c for c in checks if "hashing" in c.claim]
    assert [c.status for c in var] == ["CONTROL"]


def test_suite_full_rank_variance_zero():
    s = DiagSettings(sts_trials=10, var_batch=8, var_rank=8, var_trials=100, var_instances=1, norm_instances=1)
    checks = run_suite(s, TrainConfig(rank=8), vocab_size=30)
    zero = [c for c in checks if "zero estimator variance" in c.claim]
    assert zero and zero[0].status == "PASS"


def test_settings_validation():
    with pytest.raises(ValueError):
        DiagSettings(hashing="random")
    with pytest.raises(ValueError):
        DiagSettings(norm_ranks="1,x")
