import numpy as np
import pytest

from fedgansim import cgan, defenses, nn
from fedgansim.dataset import LabeledImage, TriggerSpec, poison
from fedgansim.defenses import AugmentationSpec, ReconstructionSpec, RobustAggSpec
from fedgansim.errors import DimensionError, ValidationError


def image(seed=0, side=8):
    return np.random.default_rng(seed).uniform(-1, 1, size=(side, side, 1))


def test_flip_involution():
    img = image()
    np.testing.assert_array_equal(defenses.hflip(defenses.hflip(img)), img)


def test_zero_rotation_identity():
    img = image(1)
    assert np.abs(defenses.rotate(img, 0.0) - img).max() <= 1e-9


def test_quarter_turn_is_exact_permutation():
    img = image(2)
    np.testing.assert_array_equal(defenses.rotate(defenses.rotate(img, 90), -90), img)
    np.testing.assert_array_equal(defenses.rotate(img, 90)[:, :, 0], np.rot90(img[:, :, 0], -1))


def test_trigger_moves_to_bottom_left_under_flip():
    poisoned = poison(LabeledImage(np.full((8, 8, 1), -1.0), 0), TriggerSpec(2)).pixels
    flipped = defenses.hflip(poisoned)
    assert np.all(flipped[6:, :2] == 1.0)
    assert np.all(flipped[6:, 6:] == -1.0)


def test_augment_forced_flip_no_rotation():
    batch = np.stack([image(k) for k in range(3)])
    spec = AugmentationSpec(True, 1.0, None)
    out = defenses.augment(batch, spec, np.random.default_rng(0))
    np.testing.assert_array_equal(out, batch[:, :, ::-1, :])


def test_augment_rejects_non_square():
    with pytest.raises(ValidationError):
        defenses.augment(np.zeros((1, 4, 5, 1)), AugmentationSpec(), np.random.default_rng(0))


def _toy_model():
    return cgan.build_model(2, 16, 0, noise_dim=4, g_hidden=(8,), d_hidden=(8,))


def test_reconstruct_zero_epochs_unchanged():
    m = _toy_model()
    out = defenses.reconstruct(m, np.zeros((4, 16)), np.array([0, 1, 0, 1]),
                               ReconstructionSpec(epochs=0), seed=0)
    np.testing.assert_array_equal(nn.flatten(out), nn.flatten(m.generator_params))


def test_reconstruct_changes_generator_only():
    m = _toy_model()
    x = np.tanh(np.random.default_rng(0).normal(size=(10, 16)))
    out = defenses.reconstruct(m, x, np.arange(10) % 2, ReconstructionSpec(epochs=2, batch_size=4), 0)
    assert set(out) == set(m.generator_params)
    assert not np.array_equal(nn.flatten(out), nn.flatten(m.generator_params))


def test_reconstruct_needs_data():
    with pytest.raises(ValidationError):
        defenses.reconstruct(_toy_model(), np.zeros((0, 16)), np.zeros(0, int),
                             ReconstructionSpec(), 0)


def _updates(prev, deltas):
    return [{"w": prev["w"] + np.asarray(d, dtype=float)} for d in deltas]


def test_robust_unanimous_is_fedavg():
    prev = {"w": np.array([1.0, 2.0])}
    ups = _updates(prev, [[1, -1], [2, -2], [3, -1], [2, -4]])
    w = [0.25] * 4
    for theta in (0, 1, 4, None):
        out = defenses.robust_aggregate(prev, ups, w, RobustAggSpec(theta, 0.5))
        np.testing.assert_allclose(out["w"], prev["w"] + 0.5 * np.array([2.0, -2.0]))


def test_robust_dissent_flips_above_two():
    prev = {"w": np.zeros(1)}
    ups = _updates(prev, [[1], [1], [1], [-1]])
    w = [0.25] * 4
    mean = 0.5
    for theta, sign in ((0, 1), (1, 1), (2, 1), (3, -1), (4, -1)):
        out = defenses.robust_aggregate(prev, ups, w, RobustAggSpec(theta, 1.0))
        assert out["w"][0] == pytest.approx(sign * mean)


def test_robust_incompatible():
    prev = {"w": np.zeros(2)}
    with pytest.raises(DimensionError):
        defenses.robust_aggregate(prev, [{"w": np.zeros(3)}], [1.0], RobustAggSpec())


def test_robust_bad_threshold():
    prev = {"w": np.zeros(2)}
    with pytest.raises(ValidationError):
        defenses.robust_aggregate(prev, _updates(prev, [[0, 0]]), [1.0], RobustAggSpec(2))


def test_batched_augment_matches_per_image():
    batch = np.stack([image(k) for k in range(20)])
    spec = AugmentationSpec()
    out = defenses.augment(batch, spec, np.random.default_rng(3))
    rng = np.random.default_rng(3)
    for k, img in enumerate(batch):
        if rng.random() < spec.flip_prob:
            img = defenses.hflip(img)
        np.testing.assert_array_equal(out[k], defenses.rotate(img, rng.uniform(*spec.rotation)))
