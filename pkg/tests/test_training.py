import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtaesthetic import network
from mtaesthetic.data import SyntheticSpec, channel_mean, crop_batch, generate_synthetic, make_split
from mtaesthetic.objectives import LossWeights, total_loss
from mtaesthetic.errors import CheckpointError, ConfigError, DegenerateSubtaskError, InputError, TrainingAborted
from mtaesthetic.training import (
    CONTINUE,
    FREEZE,
    BalancePolicy,
    TrainConfig,
    average_precision,
    early_stop_monitor,
    evaluate,
    finetune,
    gradient_check,
    omega_objective,
    read_square_csv,
    relative_error,
    subtask_names,
    train,
    update_omega,
    write_square_csv,
)

M = 4


@pytest.fixture(scope="module")
def splits():
    ds, _ = generate_synthetic(SyntheticSpec(n=240, m=M, image_size=20, crop_size=16, seed=5))
    return make_split(ds, split_seed=1)


def small_config(**kw):
    arch = network.ArchitectureConfig.preset(kw.pop("variant", "mtcnn1"), "small", 2, M)
    return TrainConfig(architecture=arch, **{"epochs": 2, "batch_size": 32, "lr": 0.02, **kw})


def random_feasible(rng, k):
    a = rng.standard_normal((k, k)) * rng.uniform(0.1, 3.0)
    s = a @ a.T + rng.uniform(0, 1) * np.eye(k)
    return s / np.trace(s)


# -- covariance update ---------------------------------------------------------


def test_omega_diagonal_case():
    cov = update_omega(np.diag([2.0, 3.0]))
    np.testing.assert_allclose(cov.omega, np.diag([0.4, 0.6]), atol=1e-12, rtol=0)


def test_omega_orthonormal_columns_give_uniform():
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((9, 5)))
    np.testing.assert_allclose(update_omega(3.0 * q).omega, np.eye(5) / 5, atol=1e-12)


def test_omega_zero_matrix_is_degenerate():
    with pytest.raises(DegenerateSubtaskError):
        update_omega(np.zeros((4, 3)))


def test_omega_rejects_nonfinite():
    with pytest.raises(InputError):
        update_omega(np.full((2, 2), np.nan))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_omega_is_feasible_and_optimal(k, d, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((d, k)) * rng.uniform(0.1, 5.0, k)
    ridge = 1e-6 if d < k else 0.0  # rank-deficient W needs a ridge for a finite objective
    omega = update_omega(w, ridge).omega
    assert abs(np.trace(omega) - 1.0) < 1e-8
    assert np.linalg.eigvalsh(omega).min() >= -1e-8
    best = omega_objective(w, omega, ridge)
    for _ in range(100):
        other = random_feasible(rng, k)
        assert best <= omega_objective(w, other, ridge) * (1 + 1e-9)
        t = rng.uniform(0, 0.2)
        near = (1 - t) * omega + t * other  # convex combinations stay feasible
        assert best <= omega_objective(w, near, ridge) * (1 + 1e-9)


def test_omega_objective_equals_min_value():
    # at the optimum the objective equals (trace of (W^T W)^{1/2})^2
    w = np.random.default_rng(3).standard_normal((6, 4))
    s = np.linalg.svd(w, compute_uv=False)
    assert omega_objective(w, update_omega(w).omega) == pytest.approx(s.sum() ** 2, rel=1e-10)


def test_subtask_names_order():
    assert subtask_names(2, ["a", "b"]) == ["aesthetic_low", "aesthetic_high", "a", "b"]
    assert subtask_names(2, ["a"], include_aux=True)[:2] == ["aux_aesthetic_low", "aux_aesthetic_high"]


# -- early stopping ----------------------------------------------------------


def test_early_stop_rules():
    assert early_stop_monitor([1.0], 2) == CONTINUE
    assert early_stop_monitor([1.0, 0.9], 2) == CONTINUE
    assert early_stop_monitor([1.0, 0.9, 0.8], 2) == CONTINUE
    assert early_stop_monitor([1.0, 0.9, 0.8, 0.79999, 0.79998], 2) == FREEZE
    assert early_stop_monitor([0.5, 0.6, 0.7], 2) == FREEZE
    with pytest.raises(InputError):
        early_stop_monitor([], 2)


def test_policy_validation():
    with pytest.raises(ConfigError):
        BalancePolicy("sometimes")
    with pytest.raises(ConfigError):
        BalancePolicy(lam=-1.0)


def test_config_validation_and_schedule():
    with pytest.raises(ConfigError):
        small_config(momentum=1.0)
    with pytest.raises(ConfigError):
        small_config(omega_include_aux=True)
    cfg = small_config(lr=0.1, lr_decay=0.1, lr_decay_every=3)
    assert [cfg.learning_rate(e) for e in (0, 2, 3, 6)] == pytest.approx([0.1, 0.1, 0.01, 0.001])
    assert small_config(lr=0.1).learning_rate(50) == 0.1


# -- metrics ---------------------------------------------------------------


def test_average_precision_by_hand():
    # ranks: pos, neg, pos -> (1/1 + 2/3) / 2
    assert average_precision([0.9, 0.5, 0.1], [1, 0, 1]) == pytest.approx(5 / 6)
    assert average_precision([0.9, 0.5], [1, 1]) == 1.0
    assert np.isnan(average_precision([0.1, 0.2], [0, 0]))


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)
    assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


def test_square_csv_roundtrip(tmp_path):
    mat = np.random.default_rng(0).standard_normal((3, 3))
    write_square_csv(tmp_path / "m.csv", ["x", "y", "z"], mat)
    names, back = read_square_csv(tmp_path / "m.csv")
    assert names == ["x", "y", "z"] and back.tobytes() == mat.tobytes()
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n")
    with pytest.raises(InputError):
        read_square_csv(tmp_path / "bad.csv")


# -- training loop ---------------------------------------------------------


def test_training_is_deterministic(splits, tmp_path):
    train_set, test_set = splits
    cfg = small_config(relationship=True, seed=3)
    a = train(cfg, train_set, test_set)
    b = train(cfg, train_set, test_set)
    a.report.write_csv(tmp_path / "a.csv")
    b.report.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for name in a.params:
        assert a.params[name].tobytes() == b.params[name].tobytes()


def test_relationship_run_keeps_covariance_feasible_and_descends(splits):
    train_set, _ = splits
    res = train(small_config(relationship=True, epochs=3, omega_every=2), train_set)
    omega = res.report.omega
    assert omega.shape == (2 + M, 2 + M)
    assert abs(np.trace(omega) - 1) < 1e-8 and np.linalg.eigvalsh(omega).min() >= -1e-8
    steps = 3 * -(-len(train_set) // 32)
    assert len(res.report.omega_log) == steps // 2
    for _, before, after in res.report.omega_log:
        assert after <= before + 1e-9
    assert res.report.subtasks[:2] == ["aesthetic_low", "aesthetic_high"]


def test_lambda_zero_leaves_semantic_head_untouched_without_decay(splits):
    train_set, _ = splits
    cfg = small_config(policy=BalancePolicy("none"), gamma_w=0.0)
    start = network.build(cfg.architecture, cfg.seed)[1]
    res = train(cfg, train_set)
    for name in res.params.names("head_semantic"):
        assert res.params[name].tobytes() == start[name].tobytes()
    assert all(r["lambda"] == 0.0 for r in res.report.rows)


def test_single_plain_sgd_step_matches_hand_computation(splits):
    train_set, _ = splits
    sub = train_set.subset(np.arange(8))
    cfg = small_config(epochs=1, batch_size=8, momentum=0.0, lr=0.05, gamma_theta=1e-3, gamma_w=2e-3)
    graph, params = network.build(cfg.architecture, cfg.seed)
    mean = channel_mean(sub.images)
    rng = np.random.default_rng([cfg.seed, 1])
    order = rng.permutation(8)
    x = crop_batch(sub.images[order], (16, 16), rng, mean)
    tr = network.forward(graph, params, x)
    _, og, rg = total_loss(tr, sub.y[order], sub.z[order], params, LossWeights(1 / M, 1 / M, 1e-3, 2e-3))
    network.backward(graph, params, tr, og)
    expect = {k: params[k] - 0.05 * (params.grads[k] + rg[k]) for k in params}
    res = train(cfg, sub)
    for k in params:
        np.testing.assert_allclose(res.params[k], expect[k], rtol=0, atol=1e-14)


def test_report_columns(splits):
    train_set, test_set = splits
    res = train(small_config(epochs=1), train_set, test_set)
    cols = res.report.columns()
    assert cols[:3] == ["epoch", "lambda", "lr"] and "eval_accuracy" in cols
    assert sum(c.startswith("ap_") for c in cols) == M
    assert res.report.rows[0]["lambda"] == pytest.approx(1 / M)


def test_enhanced_records_two_over_m(splits):
    res = train(small_config(variant="enhanced", epochs=1), splits[0])
    assert res.report.rows[0]["lambda"] == pytest.approx(2 / M)


def test_early_stop_freezes(splits):
    cfg = small_config(policy=BalancePolicy("early_stop", patience=1, rel_tol=10.0), epochs=4)
    res = train(cfg, splits[0])
    assert res.report.frozen_epoch == 1
    assert [r["lambda"] for r in res.report.rows] == [1.0, 1.0, 0.0, 0.0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_weights_abort_naming_step(splits):
    cfg = small_config()
    graph, params = network.build(cfg.architecture, 0)
    params["trunk.conv1.weight"][...] = np.inf
    with pytest.raises(TrainingAborted, match="step 0"):
        train(cfg, splits[0], init=(graph, params, None))


def test_attribute_count_mismatch(splits):
    arch = network.ArchitectureConfig.preset("mtcnn1", "small", 2, M + 1)
    with pytest.raises(InputError, match="attributes"):
        train(TrainConfig(architecture=arch, epochs=1), splits[0])


def test_evaluate_keys(splits):
    res = train(small_config(epochs=1), splits[0])
    ev = evaluate(res.graph, res.params, splits[1], res.input_mean)
    assert set(ev) == {"n", "accuracy", "per_attribute", "semantic_ap", "mean_ap"}
    assert ev["n"] == len(splits[1]) and 0 <= ev["accuracy"] <= 1


# -- finetuning ------------------------------------------------------------


def test_finetune_zero_epochs_is_identity(splits, tmp_path):
    src = train(small_config(epochs=1), splits[0])
    src.save(tmp_path / "c.mtc")
    out = finetune(tmp_path / "c.mtc", splits[0].without_semantics(), small_config(epochs=0))
    for name in src.params:
        assert out.params[name].tobytes() == src.params[name].tobytes()
    np.testing.assert_array_equal(out.input_mean, src.input_mean)


def test_finetune_masks_semantics(splits):
    src = train(small_config(epochs=1), splits[0])
    out = finetune(src, splits[0].without_semantics(), small_config(epochs=1, gamma_w=0.0))
    for name in src.params.names("head_semantic"):
        assert out.params[name].tobytes() == src.params[name].tobytes()
    assert out.report.rows[0]["semantic_bce"] == 0.0


def test_finetune_architecture_mismatch(splits):
    src = train(small_config(epochs=1), splits[0])
    with pytest.raises(CheckpointError):
        finetune(src, splits[0], small_config(variant="mtcnn2", epochs=1))


# -- gradient check harness ------------------------------------------------


def _gc_batch(arch):
    rng = np.random.default_rng(0)
    return (rng.uniform(-0.5, 0.5, (2, *arch.input_shape)), np.array([0, 1]),
            (rng.random((2, arch.n_attributes)) < 0.5).astype(float))


def test_gradient_check_passes_and_restores_params():
    arch = network.ArchitectureConfig.preset("mtcnn1", "small", 2, M)
    _, params = network.build(arch, 0)
    before = {k: params[k].tobytes() for k in params}
    rep = gradient_check(arch, _gc_batch(arch), relationship=True, params=params)
    assert rep.passed()
    assert all(params[k].tobytes() == before[k] for k in params)


def test_gradient_check_catches_corruption():
    arch = network.ArchitectureConfig.preset("mtcnn1", "small", 2, M)

    def corrupt(grads):
        grads["trunk.conv1.weight"] = grads["trunk.conv1.weight"] * 1.1
        return grads

    rep = gradient_check(arch, _gc_batch(arch), grad_hook=corrupt)
    assert rep.max_error > 1e-2 and rep.worst == "trunk.conv1.weight"
    assert not rep.passed()


def test_gradient_check_batch_limit():
    arch = network.ArchitectureConfig.preset("mtcnn1", "small", 2, M)
    rng = np.random.default_rng(0)
    with pytest.raises(InputError):
        gradient_check(arch, (rng.random((5, 16, 16, 3)), np.zeros(5, int), np.zeros((5, M))))
