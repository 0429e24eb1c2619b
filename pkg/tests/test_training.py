import numpy as np
import pytest

from abspose.errormodel import ErrorModelSet, MixtureErrorParams
from abspose.lifter import LifterConfig, forward, init_weights, loss, set_standardization
from abspose.posefile import (
    PoseFileError,
    read_pose_file,
    records_to_dataset,
    samples_to_records,
    write_pose_file,
)
from abspose.synth import SynthConfig, default_skeleton, generate
from abspose.training import (
    PoseDataset,
    TrainConfig,
    TrainingDiverged,
    dataset_loss,
    evaluate,
    lift,
    make_inputs,
    make_targets,
    mean_pose_baseline,
    recompute_bn_stats,
    train,
)

SPEC = default_skeleton()


@pytest.fixture(scope="module")
def small_data():
    cfg = SynthConfig(alpha_range=(900.0, 1700.0))
    return PoseDataset.from_samples(generate(SPEC, 300, seed=0, config=cfg))


def _cfg(**kw):
    return LifterConfig(**{"hidden_dim": 32, **kw})


def _sched(**kw):
    return TrainConfig(**{"epochs": 3, "flip_pairs": SPEC.pairs, **kw})


def test_initial_loss_entry_is_the_initialized_network_loss(small_data):
    cfg = _cfg()
    res = train(small_data, cfg, _sched(epochs=1))
    w = init_weights(cfg)
    x = make_inputs(small_data.pose2d, small_data.principal, cfg)
    depth, rel = make_targets(small_data, cfg)
    set_standardization(w, x, np.column_stack([depth, rel]))
    shuffled = np.random.default_rng(0).permutation(len(small_data))
    out, _ = forward(w, x[shuffled])
    expected, _ = loss(out, depth[shuffled], rel[shuffled], cfg.lam)
    assert res.loss_log[0] == pytest.approx(expected, rel=1e-12)
    assert len(res.loss_log) == 2


def test_training_is_bit_deterministic(small_data):
    a = train(small_data, _cfg(), _sched(), error_model=_noise_model())
    b = train(small_data, _cfg(), _sched(), error_model=_noise_model())
    for k in a.weights.params:
        np.testing.assert_array_equal(a.weights.params[k], b.weights.params[k])
    for k in a.weights.buffers:
        np.testing.assert_array_equal(a.weights.buffers[k], b.weights.buffers[k])
    assert a.loss_log == b.loss_log


def test_training_reduces_loss(small_data):
    res = train(small_data, _cfg(), _sched(epochs=20))
    # entry 0 already predicts the mean target through the output buffers
    assert dataset_loss(res.weights, small_data) < 0.8 * res.loss_log[0]


def test_single_sample_is_memorized():
    one = PoseDataset.from_samples(generate(SPEC, 1, seed=0))
    res = train(one, _cfg(dropout_p=0.0), TrainConfig(epochs=50, flip=False))
    assert res.loss_log[-1] < 1e-3


def test_single_sample_memorization_without_standardization():
    # raw millimeter outputs: the network itself has to absorb the scale
    one = PoseDataset.from_samples(generate(SPEC, 1, seed=0))
    res = train(one, _cfg(dropout_p=0.0), TrainConfig(epochs=600, lr_final=1e-5, flip=False,
                                                      standardize=False))  # fmt: skip
    assert res.loss_log[-1] < 1e-4 * res.loss_log[0]


def test_divergence_reports_epoch(small_data):
    with pytest.raises(TrainingDiverged) as exc, np.errstate(all="ignore"):
        train(small_data, _cfg(), _sched(lr=1e300))
    assert exc.value.epoch == 0


def test_flip_needs_pairs(small_data):
    with pytest.raises(ValueError, match="pairing"):
        train(small_data, _cfg(), TrainConfig(epochs=1))


def test_joint_count_mismatch(small_data):
    with pytest.raises(ValueError):
        train(small_data, _cfg(joint_count=5), _sched())


def test_validation_log_per_epoch(small_data):
    res = train(small_data, _cfg(), _sched(epochs=2), val=small_data)
    assert len(res.val_log) == 2
    assert {"mpjpe", "mrpe", "mrpe_z", "pck", "auc"} <= set(res.val_log[0])


def _noise_model(j=17):
    return ErrorModelSet([MixtureErrorParams(0.85, np.zeros(2), np.array([3.0, 3.0]))] * j)


def test_lift_without_focal_gives_canonical_depth_only(small_data):
    w = train(small_data, _cfg(), _sched(epochs=1)).weights
    out = lift(w, small_data.pose2d, small_data.principal)
    assert out.root is None and out.pose3d is None
    assert out.canonical_depth.shape == (len(small_data),)
    np.testing.assert_array_equal(out.relative[:, 0], 0.0)


def test_lift_promotes_depth_with_focal(small_data):
    w = train(small_data, _cfg(), _sched(epochs=1)).weights
    out = lift(w, small_data.pose2d, small_data.principal, small_data.alpha)
    np.testing.assert_allclose(out.root[:, 2], small_data.alpha * out.canonical_depth, rtol=1e-15)
    xy = (small_data.pose2d[:, 0] - small_data.principal) * out.canonical_depth[:, None]
    np.testing.assert_allclose(out.root[:, :2], xy, rtol=1e-15)
    np.testing.assert_allclose(out.pose3d - out.root[:, None], out.relative, atol=1e-9)


def test_metric_depth_mode_rescales_by_reference_focal(small_data):
    cfg = _cfg(canonical_depth=False)
    w = train(small_data, cfg, _sched(epochs=1)).weights
    raw = lift(w, small_data.pose2d, small_data.principal)
    out = lift(w, small_data.pose2d, small_data.principal, small_data.alpha)
    np.testing.assert_allclose(out.root[:, 2], raw.canonical_depth * 1000.0, rtol=1e-12)


def test_evaluate_perfect_network_scores(small_data):
    res = evaluate(train(small_data, _cfg(), _sched(epochs=1)).weights, small_data, pa=True)
    assert 0 <= res["pck"] <= 1 and 0 <= res["auc"] <= 1
    assert res["pa_mpjpe"] <= res["mpjpe"] * 1.5
    assert res["mrpe"] >= max(res["mrpe_x"], res["mrpe_y"], res["mrpe_z"]) - 1e-9


def test_mean_pose_baseline_is_positive_and_sane(small_data):
    base = mean_pose_baseline(small_data, small_data)
    assert 100 < base < 500


def test_recompute_bn_stats_matches_population_statistics(small_data):
    cfg = _cfg()
    w = train(small_data, cfg, _sched(epochs=1)).weights
    x = make_inputs(small_data.pose2d, small_data.principal, cfg)
    w2 = recompute_bn_stats(w.copy(), x)
    _, cache = forward(w2, x)
    z = cache.acts["block1.fc2.in"] @ w2.params["block1.fc2.W"] + w2.params["block1.fc2.b"]
    np.testing.assert_allclose(
        w2.buffers["block1.bn2.mean"], z.mean(axis=0), rtol=1e-10, atol=1e-10
    )
    np.testing.assert_allclose(w2.buffers["block1.bn2.var"], z.var(axis=0, ddof=1), rtol=1e-10)


def test_pose_file_round_trip_is_lossless(tmp_path):
    samples = generate(SPEC, 5, seed=3, config=SynthConfig(alpha_range=(900.0, 1700.0)))
    path = tmp_path / "p.jsonl"
    write_pose_file(path, samples_to_records(samples), 17, SPEC.names)
    header, recs = read_pose_file(path)
    assert header["version"] == "1.0" and header["joint_count"] == 17
    assert header["units"]["pose3d"] == "mm"
    for s, r in zip(samples, recs):
        np.testing.assert_array_equal(r["pose2d"], s.pose2d)
        np.testing.assert_array_equal(r["pose3d"], s.pose3d)
        assert r["camera"]["alpha"] == s.cam.alpha
    data = records_to_dataset(recs)
    np.testing.assert_array_equal(data.alpha, [s.cam.alpha for s in samples])


def test_pose_file_rejects_bad_shapes_and_versions(tmp_path):
    with pytest.raises(PoseFileError):
        write_pose_file(tmp_path / "x.jsonl", [{"id": "a", "pose2d": np.zeros((3, 2))}], 4)
    bad = tmp_path / "v.jsonl"
    bad.write_text('{"version": "2.0", "joint_count": 3}\n')
    with pytest.raises(PoseFileError):
        read_pose_file(bad)
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    with pytest.raises(PoseFileError):
        read_pose_file(empty)
