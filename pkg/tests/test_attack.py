import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contribaware.attack import (
    AdversaryProfile,
    Placement,
    TriggerSpec,
    apply_trigger,
    default_trigger,
    load_patch,
    make_adversarial_testset,
    make_patch,
    num_poisoned,
    poison_contribution,
    trigger_mask,
)
from contribaware.data import LabeledDataset
from contribaware.errors import ConfigurationError


def ones_trigger(corner="bottom-right", size=3, margin=0):
    return TriggerSpec(np.ones((size, size, 1), np.float32), Placement(kind="corner", corner=corner, margin=margin))


def small_set(n=10, side=8, num_classes=4, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.random((n, side, side, 1)).astype(np.float32), rng.integers(0, num_classes, n), num_classes)


def test_ones_patch_on_zero_image():
    out = apply_trigger(np.zeros((8, 8, 1), np.float32), ones_trigger())
    assert (out == 1.0).sum() == 9 and (out == 0.0).sum() == 64 - 9
    assert out[5:, 5:].min() == 1.0


def test_margin_and_corners():
    img = np.zeros((8, 8, 1), np.float32)
    for corner, (r, c) in {"top-left": (1, 1), "top-right": (1, 4), "bottom-left": (4, 1), "bottom-right": (4, 4)}.items():
        out = apply_trigger(img, ones_trigger(corner, margin=1))
        assert out[r:r + 3, c:c + 3].min() == 1.0 and out.sum() == 9


def test_offset_placement():
    t = TriggerSpec(np.full((2, 2, 1), 0.5, np.float32), Placement(kind="offset", row=3, col=1))
    out = apply_trigger(np.zeros((6, 6, 1), np.float32), t)
    assert out[3:5, 1:3].tolist() == [[[0.5], [0.5]], [[0.5], [0.5]]]
    assert out.sum() == pytest.approx(2.0)


def test_untriggered_path_is_identity():
    ds = small_set()
    # fraction-free path: the clean images are never modified in place
    before = ds.images.copy()
    apply_trigger(ds.images, default_trigger(0))
    np.testing.assert_array_equal(ds.images, before)


def test_patch_does_not_fit():
    with pytest.raises(ConfigurationError):
        apply_trigger(np.zeros((3, 3, 1)), ones_trigger(size=3))
    t = TriggerSpec(np.ones((2, 2, 1)), Placement(kind="offset", row=5, col=0))
    with pytest.raises(ConfigurationError):
        apply_trigger(np.zeros((6, 6, 1)), t)
    with pytest.raises(ConfigurationError):
        apply_trigger(np.zeros((8, 8, 1)), ones_trigger(size=4, margin=5))


def test_patch_validation():
    with pytest.raises(ConfigurationError):
        TriggerSpec(np.full((2, 2, 1), 1.5), Placement())
    with pytest.raises(ConfigurationError):
        make_patch("spiral")
    with pytest.raises(ConfigurationError):
        make_patch("square", size=0)
    with pytest.raises(ConfigurationError):
        Placement(kind="corner", corner="middle")


def test_default_triggers_distinct():
    ts = [default_trigger(i) for i in range(4)]
    assert len({t.placement.corner for t in ts}) == 4
    assert len({t.patch.tobytes() for t in ts}) == 4
    assert [t.placement.corner for t in ts[:3]] == ["bottom-right", "bottom-left", "top-right"]


def test_load_patch_from_png(tmp_path):
    from PIL import Image

    arr = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    Image.fromarray(arr).save(tmp_path / "p.png")
    patch = load_patch(tmp_path / "p.png")
    assert patch.shape == (2, 2, 1)
    assert patch[..., 0].tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_rgb_images_get_broadcast_patch():
    out = apply_trigger(np.zeros((2, 8, 8, 3), np.float32), ones_trigger())
    assert out.shape == (2, 8, 8, 3)
    assert out[:, 5:, 5:, :].min() == 1.0 and out.sum() == 2 * 27


def test_random_region_placement_seeded_and_inside_region():
    t = TriggerSpec(np.ones((2, 2, 1), np.float32), Placement(kind="random-region"))
    imgs = np.zeros((50, 16, 16, 1), np.float32)
    a, b = apply_trigger(imgs, t, seed=4), apply_trigger(imgs, t, seed=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, apply_trigger(imgs, t, seed=5))
    # central half of a 16x16 image is rows/cols 4..11
    assert a[:, :4].sum() == 0 and a[:, 12:].sum() == 0 and a[:, :, :4].sum() == 0 and a[:, :, 12:].sum() == 0
    assert (a.reshape(50, -1).sum(axis=1) == 4).all()


triggers = st.builds(
    lambda pattern, size, corner, margin, intensity: TriggerSpec(
        make_patch(pattern, size, intensity), Placement(kind="corner", corner=corner, margin=margin)
    ),
    st.sampled_from(["square", "checkerboard", "cross", "plus"]),
    st.integers(1, 4),
    st.sampled_from(["top-left", "top-right", "bottom-left", "bottom-right"]),
    st.integers(0, 2),
    st.floats(0.1, 1.0),
)


@settings(max_examples=100, deadline=None)
@given(triggers, st.integers(0, 2**31 - 1))
def test_locality_idempotence_range(trigger, seed):
    imgs = np.random.default_rng(seed).random((3, 10, 10, 1)).astype(np.float32)
    once = apply_trigger(imgs, trigger)
    mask = trigger_mask((10, 10), trigger, n=3)
    np.testing.assert_array_equal(once[~mask], imgs[~mask])
    np.testing.assert_array_equal(apply_trigger(once, trigger), once)
    assert once.min() >= 0 and once.max() <= 1


def test_poison_full_fraction():
    ds = small_set(10)
    t = ones_trigger()
    out = poison_contribution(ds, AdversaryProfile(1, t, target_class=3), seed=0)
    assert (out.labels == 3).all()
    np.testing.assert_array_equal(out.images, apply_trigger(ds.images, t))


def test_poison_half_fraction_seeded():
    ds = small_set(10)
    prof = AdversaryProfile(1, ones_trigger(), target_class=2, poison_fraction=0.5)
    a, b = poison_contribution(ds, prof, seed=7), poison_contribution(ds, prof, seed=7)
    changed = np.flatnonzero((a.images != ds.images).any(axis=(1, 2, 3)))
    assert len(changed) == 5
    np.testing.assert_array_equal(a.images, b.images)
    # oracle: the same seeded draw picks the same indices
    expect = np.sort(np.random.default_rng(7).choice(10, size=5, replace=False))
    np.testing.assert_array_equal(changed, expect)
    assert (a.labels[changed] == 2).all()
    untouched = np.setdiff1d(np.arange(10), changed)
    np.testing.assert_array_equal(a.labels[untouched], ds.labels[untouched])


def test_poison_count_is_ceiling():
    assert num_poisoned(10, 0.25) == 3
    assert num_poisoned(10, 0.3) == 3
    assert num_poisoned(7, 1.0) == 7


def test_poison_profile_validation():
    with pytest.raises(ConfigurationError):
        AdversaryProfile(1, ones_trigger(), 0, poison_fraction=0.0)
    with pytest.raises(ConfigurationError):
        poison_contribution(small_set(num_classes=4), AdversaryProfile(1, ones_trigger(), 4), seed=0)


def test_adversarial_testset_keeps_labels():
    ds = small_set(1000)
    adv = make_adversarial_testset(ds, ones_trigger())
    assert len(adv) == 1000
    np.testing.assert_array_equal(adv.labels, ds.labels)
    assert (adv.images[:, 5:, 5:] == 1).all()
