import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcnn.data import (
    CLASS_NAMES,
    Dataset,
    GeneratorConfig,
    dataset_from_bytes,
    dataset_to_bytes,
    generate,
    load_dataset,
    save_dataset,
    split,
)
from qcnn.errors import ConfigurationError, FormatError, TruncatedFileError


def gen(classes=("track_mip", "shower"), n=20, size=30, noise=0.02, seed=0):
    return generate(GeneratorConfig(size, size, classes, n, noise_level=noise, seed=seed))


def by_class(ds):
    return [ds.images[ds.labels == c] for c in range(len(ds.class_names))]


# --- generator -----------------------------------------------------------------


def test_shapes_labels_and_range():
    ds = gen(CLASS_NAMES, n=10)
    assert ds.images.shape == (40, 30, 30)
    assert ds.class_counts() == {name: 10 for name in CLASS_NAMES}
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    assert np.all(ds.labels < 4)


def test_non_square_canvas():
    ds = generate(GeneratorConfig(12, 20, ("track_mip", "track_kink"), 3))
    assert ds.image_shape == (12, 20)


def test_same_seed_is_bit_identical():
    a, b = gen(seed=5), gen(seed=5)
    assert a.images.tobytes() == b.images.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)


def test_different_seed_differs():
    assert not np.array_equal(gen(seed=1).images, gen(seed=2).images)


def test_heavy_peak_exceeds_mip_peak_without_noise():
    mip, heavy = by_class(gen(("track_mip", "track_heavy"), n=100, noise=0.0))
    assert np.all(heavy.max(axis=(1, 2)) > mip.max(axis=(1, 2)))


def bbox_area(img, threshold=0.1):
    rows, cols = np.nonzero(img > threshold)
    if rows.size == 0:
        return 0
    return (rows.max() - rows.min() + 1) * (cols.max() - cols.min() + 1)


def test_shower_footprint_is_larger_than_mip():
    mip, shower = by_class(gen(("track_mip", "shower"), n=100, noise=0.0))
    assert np.mean([bbox_area(x) for x in shower]) > np.mean([bbox_area(x) for x in mip])


@pytest.mark.parametrize("noise", [0.0, 0.05])
def test_intensity_sum_threshold_separates_heavy_from_mip(noise):
    # Fit the threshold on one seed, score it on another.
    fit_mip, fit_heavy = by_class(gen(("track_mip", "track_heavy"), n=100, noise=noise, seed=0))
    threshold = 0.5 * (fit_mip.sum(axis=(1, 2)).mean() + fit_heavy.sum(axis=(1, 2)).mean())
    mip, heavy = by_class(gen(("track_mip", "track_heavy"), n=100, noise=noise, seed=1))
    correct = np.sum(mip.sum(axis=(1, 2)) < threshold) + np.sum(heavy.sum(axis=(1, 2)) >= threshold)
    assert correct / 200 >= 0.95


def test_kink_tracks_are_mip_like_in_brightness():
    mip, kink = by_class(gen(("track_mip", "track_kink"), n=50, noise=0.0))
    assert abs(np.median(kink.max(axis=(1, 2))) - np.median(mip.max(axis=(1, 2)))) < 0.1


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(classes=("track_mip",)),
        dict(classes=("track_mip", "muon")),
        dict(classes=("track_mip", "track_mip")),
        dict(height=3),
        dict(samples_per_class=0),
        dict(noise_level=-0.1),
    ],
)
def test_generator_config_errors(kwargs):
    with pytest.raises(ConfigurationError):
        GeneratorConfig(**kwargs)


# --- split ---------------------------------------------------------------------------


def test_split_is_stratified_eighty_twenty():
    ds = gen(n=100, size=10)
    tr, te = split(ds, 0.8, 0)
    assert tr.class_counts() == {"track_mip": 80, "shower": 80}
    assert te.class_counts() == {"track_mip": 20, "shower": 20}


def test_split_is_a_partition():
    ds = gen(n=15, size=10)
    tr, te = split(ds, 0.7, 3)
    merged = sorted(x.tobytes() for x in np.concatenate([tr.images, te.images]))
    assert merged == sorted(x.tobytes() for x in ds.images)
    assert len(tr) + len(te) == len(ds)


def test_split_is_deterministic():
    ds = gen(n=10, size=10)
    a, b = split(ds, 0.8, 4), split(ds, 0.8, 4)
    np.testing.assert_array_equal(a[0].images, b[0].images)
    np.testing.assert_array_equal(a[1].labels, b[1].labels)


def test_split_keeps_every_class_on_both_sides():
    tr, te = split(gen(n=2, size=10), 0.99, 0)
    assert set(tr.labels) == set(te.labels) == {0, 1}


def test_split_rejects_singleton_class():
    ds = Dataset(np.zeros((3, 4, 4)), np.array([0, 0, 1]), ["a", "b"])
    with pytest.raises(ValueError):
        split(ds, 0.5, 0)


@pytest.mark.parametrize("fraction", [0.0, 1.0, 1.5])
def test_split_rejects_bad_fraction(fraction):
    with pytest.raises(ValueError):
        split(gen(n=4, size=10), fraction, 0)


# --- persistence -------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    ds = gen(CLASS_NAMES, n=3, size=10)
    path = tmp_path / "d.qcds"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.class_names == list(CLASS_NAMES)
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(0, 5),
    st.integers(1, 4),
    st.integers(1, 4),
    st.lists(st.text(min_size=0, max_size=6), min_size=1, max_size=4),
    st.integers(0, 2**32 - 1),
)
def test_round_trip_is_exact(n, h, w, names, seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.uniform(size=(n, h, w)), rng.integers(0, len(names), n), names)
    back = dataset_from_bytes(dataset_to_bytes(ds))
    assert back.images.tobytes() == ds.images.tobytes()
    assert back.labels.tobytes() == ds.labels.tobytes()
    assert back.class_names == names


def test_bad_magic_reports_offset_zero():
    buf = bytearray(dataset_to_bytes(gen(n=2, size=10)))
    buf[0] ^= 0xFF
    with pytest.raises(FormatError) as info:
        dataset_from_bytes(bytes(buf))
    assert info.value.offset == 0
    assert "offset 0" in str(info.value)


def test_bad_version_reports_offset_four():
    buf = bytearray(dataset_to_bytes(gen(n=2, size=10)))
    buf[4] = 9
    with pytest.raises(FormatError) as info:
        dataset_from_bytes(bytes(buf))
    assert info.value.offset == 4


@pytest.mark.parametrize("cut", [3, 10, 30, -1])
def test_truncation_is_reported(cut):
    buf = dataset_to_bytes(gen(n=2, size=10))
    with pytest.raises(TruncatedFileError):
        dataset_from_bytes(buf[:cut])


def test_out_of_range_label_reports_its_offset():
    ds = gen(n=2, size=10)
    buf = bytearray(dataset_to_bytes(ds))
    buf[-2] = 7
    with pytest.raises(FormatError) as info:
        dataset_from_bytes(bytes(buf))
    assert info.value.offset == len(buf) - 2


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError):
        dataset_from_bytes(dataset_to_bytes(gen(n=2, size=10)) + b"\0")
