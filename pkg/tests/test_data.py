import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from clmex.data import (
    AugmentConfig,
    AugmentParams,
    DuplicateRecordError,
    EmptyDatasetError,
    ManifestNotFoundError,
    SamplerConfig,
    SamplerError,
    SyntheticConfig,
    SyntheticConfigError,
    UnknownExpressionError,
    apply_params,
    augment,
    generate_synthetic_dataset,
    load_dataset,
    load_manifest,
    sample_batch,
    split_by_subject,
    write_synthetic_dataset,
)
from clmex.data.augment import IDENTITY, LUMA_WEIGHTS, hflip
from clmex.data.sampler import epoch_batches

HEADER = "image_path,subject_id,expression_name,view_angle_deg,session_id\n"


@pytest.fixture(scope="module")
def small():
    return generate_synthetic_dataset(SyntheticConfig(subjects=4, sessions=2, expressions=2, views=(-60, 0, 60), size=16, seed=3))


# -- manifest ---------------------------------------------------------------------


def test_manifest_three_records(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "a.png,s1,happy,0,p0\nb.png,s1,happy,45,p0\nc.png,s2,sad,0,p0\n")
    m = load_manifest(p)
    assert len(m.records) == 3
    assert m.expression_vocabulary == ["happy", "sad"]
    assert m.view_set == [0, 45]
    assert [r.image_path for r in m.records] == ["a.png", "b.png", "c.png"]


def test_manifest_duplicate_triple(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "a.png,s1,happy,0,p0\nb.png,s1,happy,0,p0\n")
    with pytest.raises(DuplicateRecordError, match=r"\('s1', 'p0', 0\)"):
        load_manifest(p)


def test_manifest_empty_and_missing(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER)
    with pytest.raises(EmptyDatasetError):
        load_manifest(p)
    with pytest.raises(ManifestNotFoundError):
        load_manifest(tmp_path / "nope.csv")


def test_manifest_unknown_expression(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("# expressions: happy\n" + HEADER + "a.png,s1,sad,0,p0\n")
    with pytest.raises(UnknownExpressionError):
        load_manifest(p)


def test_manifest_png_roundtrip(tmp_path):
    from PIL import Image

    img = (np.random.default_rng(0).random((16, 16, 3)) * 255).astype(np.uint8)
    Image.fromarray(img).save(tmp_path / "x.png")
    (tmp_path / "m.csv").write_text(HEADER + "x.png,s1,happy,0,p0\n")
    ds = load_dataset(load_manifest(tmp_path / "m.csv"))
    np.testing.assert_allclose(ds.images[0], img / 255.0, atol=1e-7)


# -- synthetic generator --------------------------------------------------------------


def test_synthetic_counts(small):
    manifest, ds = small
    assert len(ds) == 24 == len(manifest.records)
    groups = ds.groups()
    assert len(groups) == 8
    assert all(len(v) == 3 for v in groups.values())


@pytest.mark.parametrize("subjects,sessions,expressions,images,groups", [(2, 1, 2, 6, 2), (2, 2, 2, 12, 4), (4, 2, 3, 24, 8)])
def test_one_expression_per_session(subjects, sessions, expressions, images, groups):
    cfg = SyntheticConfig(subjects=subjects, sessions=sessions, expressions=expressions, views=(-60, 0, 60), size=16)
    _, ds = generate_synthetic_dataset(cfg)
    assert len(ds) == images
    assert len(ds.groups()) == groups


def test_synthetic_groups_share_subject_and_expression(small):
    _, ds = small
    for idx in ds.groups().values():
        assert len(set(ds.subject_ids[idx])) == 1
        assert len(set(ds.expressions[idx])) == 1
        assert sorted(ds.view_angles[idx]) == [-60, 0, 60]


def test_synthetic_deterministic():
    cfg = SyntheticConfig(subjects=2, sessions=2, expressions=3, views=(0, 45), size=16, seed=11)
    a = generate_synthetic_dataset(cfg)[1].images
    b = generate_synthetic_dataset(cfg)[1].images
    assert a.tobytes() == b.tobytes()
    c = generate_synthetic_dataset(SyntheticConfig(subjects=2, sessions=2, expressions=3, views=(0, 45), size=16, seed=12))[1]
    assert a.tobytes() != c.images.tobytes()


def test_synthetic_rejects_tiny_images():
    with pytest.raises(SyntheticConfigError, match="too small"):
        generate_synthetic_dataset(SyntheticConfig(size=8))


def test_synthetic_writes_loadable_manifest(tmp_path):
    cfg = SyntheticConfig(subjects=2, sessions=1, expressions=2, views=(-45, 0), size=16, seed=1)
    path = write_synthetic_dataset(cfg, tmp_path)
    ds = load_dataset(load_manifest(path))
    _, direct = generate_synthetic_dataset(cfg)
    assert ds.images.tobytes() == direct.images.tobytes()
    np.testing.assert_array_equal(ds.expressions, direct.expressions)


def test_frontal_expressions_separable_by_nearest_class_mean():
    """Generator sanity: expression is recoverable from frontal pixels across subjects."""
    _, ds = generate_synthetic_dataset(SyntheticConfig(subjects=16, sessions=4, expressions=4, seed=5))
    frontal = ds.subset(np.flatnonzero(ds.view_angles == 0))
    train, test = split_by_subject(frontal, 0.25, np.random.default_rng(0))

    def feats(d):
        x = d.images.reshape(len(d), -1)
        # subtract each image's own mean so subject colour matters less than shape
        return x - x.mean(axis=1, keepdims=True)

    xtr, xte = feats(train), feats(test)
    means = np.stack([xtr[train.expressions == c].mean(axis=0) for c in range(4)])
    pred = np.argmin(((xte[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    assert (pred == test.expressions).mean() > 0.25 + 0.1


def test_side_views_are_harder_than_frontal():
    _, ds = generate_synthetic_dataset(SyntheticConfig(subjects=16, sessions=4, expressions=4, seed=5))

    def ncm_acc(angle):
        d = ds.subset(np.flatnonzero(ds.view_angles == angle))
        train, test = split_by_subject(d, 0.25, np.random.default_rng(0))
        x = lambda s: s.images.reshape(len(s), -1) - s.images.reshape(len(s), -1).mean(1, keepdims=True)
        means = np.stack([x(train)[train.expressions == c].mean(0) for c in range(4)])
        pred = np.argmin(((x(test)[:, None] - means[None]) ** 2).sum(-1), axis=1)
        return (pred == test.expressions).mean()

    assert ncm_acc(0) > ncm_acc(90)


# -- augmentation ---------------------------------------------------------------------


def test_identity_params_return_input(small):
    img = small[1].images[0]
    np.testing.assert_array_equal(apply_params(img, IDENTITY), img)


def test_identity_config_via_rng(small):
    img = small[1].images[1]
    cfg = AugmentConfig(crop_scale=(1.0, 1.0), flip_p=0.0, grayscale_p=0.0, jitter_strength=0.0)
    np.testing.assert_array_equal(augment(img, np.random.default_rng(0), cfg), img)


def test_flip_only_is_mirror_and_involutive(small):
    img = small[1].images[2]
    flipped = apply_params(img, AugmentParams(crop=(0.0, 0.0, 1.0), flip=True))
    np.testing.assert_array_equal(flipped, img[:, ::-1])
    np.testing.assert_array_equal(hflip(hflip(img)), img)


def test_grayscale_only_equal_channels(small):
    img = small[1].images[3]
    g = apply_params(img, AugmentParams(crop=(0.0, 0.0, 1.0), grayscale=True))
    np.testing.assert_array_equal(g[..., 0], g[..., 1])
    np.testing.assert_array_equal(g[..., 1], g[..., 2])
    np.testing.assert_allclose(g[..., 0], img @ LUMA_WEIGHTS.astype(np.float32), rtol=1e-6)


def test_grayscale_weights_sum_to_one():
    assert LUMA_WEIGHTS.sum() == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_augment_preserves_range_and_shape(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((20, 20, 3)).astype(np.float32)
    out = augment(img, rng)
    assert out.shape == img.shape
    assert out.dtype == img.dtype
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_augment_is_deterministic_given_rng(small):
    img = small[1].images[0]
    a = augment(img, np.random.default_rng(5))
    b = augment(img, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_crop_scale_bounds():
    from clmex.data.augment import sample_params

    rng = np.random.default_rng(0)
    sides = np.array([sample_params(rng).crop[2] for _ in range(2000)])
    assert sides.min() >= np.sqrt(0.2) - 1e-12 and sides.max() <= 1.0


# -- sampler --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def multiview():
    return generate_synthetic_dataset(SyntheticConfig(subjects=3, sessions=2, expressions=2, views=(-45, 0, 45), size=16, seed=2))[1]


def test_batch_counts(multiview):
    b = sample_batch(multiview, SamplerConfig(groups_per_batch=2, views_per_group=3), np.random.default_rng(0))
    assert len(b) == 12 and b.images.shape == (12, 3, 16, 16)
    _, counts = np.unique(b.view_ids, return_counts=True)
    assert counts.tolist() == [6, 6]
    assert b.labels is None


def test_single_view_batches_pair_up(multiview):
    b = sample_batch(multiview, SamplerConfig(groups_per_batch=4, views_per_group=1), np.random.default_rng(1))
    _, counts = np.unique(b.view_ids, return_counts=True)
    assert (counts == 2).all()


def test_batch_pair_invariant(multiview):
    rng = np.random.default_rng(2)
    for _ in range(10):
        b = sample_batch(multiview, SamplerConfig(groups_per_batch=3, views_per_group=2), rng)
        np.testing.assert_array_equal(b.view_ids[0::2], b.view_ids[1::2])
        np.testing.assert_array_equal(b.source_indices[0::2], b.source_indices[1::2])
        assert len(set(b.source_indices[0::2].tolist())) == len(b) // 2


def test_sampler_shortfall(multiview):
    with pytest.raises(SamplerError, match="short by 4"):
        sample_batch(multiview, SamplerConfig(groups_per_batch=10, views_per_group=3), np.random.default_rng(0))
    with pytest.raises(SamplerError):
        sample_batch(multiview, SamplerConfig(groups_per_batch=1, views_per_group=4), np.random.default_rng(0))


def test_sampler_determinism(multiview):
    cfg = SamplerConfig(groups_per_batch=2)
    a = [sample_batch(multiview, cfg, r) for r in [np.random.default_rng(9)] * 3]
    b = [sample_batch(multiview, cfg, r) for r in [np.random.default_rng(9)] * 3]
    for x, y in zip(a, b):
        assert x.images.tobytes() == y.images.tobytes()
        np.testing.assert_array_equal(x.view_ids, y.view_ids)


def test_sample_batch_group_histogram(multiview):
    rng = np.random.default_rng(321)
    cfg = SamplerConfig(groups_per_batch=2, views_per_group=1)
    counts = {}
    for _ in range(150):
        b = sample_batch(multiview, cfg, rng, AugmentConfig(crop_scale=(1, 1), jitter_strength=0.0))
        for g in set(b.view_ids.tolist()):
            counts[g] = counts.get(g, 0) + 1
    observed = np.array([counts.get(g, 0) for g in sorted(multiview.groups())])
    assert stats.chisquare(observed).pvalue > 0.01


def test_epoch_covers_each_group_once(multiview):
    seen = []
    for b in epoch_batches(multiview.without_labels(), SamplerConfig(groups_per_batch=4), np.random.default_rng(0)):
        seen.extend(set(b.view_ids.tolist()))
    assert sorted(seen) == sorted(multiview.groups())


def test_label_stripped_dataset_refuses_labels(multiview):
    stripped = multiview.without_labels()
    with pytest.raises(PermissionError):
        stripped.labels
    with pytest.raises(PermissionError):
        sample_batch(stripped, SamplerConfig(groups_per_batch=2), np.random.default_rng(0), with_labels=True)


def test_subject_split_is_disjoint():
    _, ds = generate_synthetic_dataset(SyntheticConfig(subjects=10, sessions=1, expressions=2, views=(0,), size=16))
    tr, te = split_by_subject(ds, 0.2, np.random.default_rng(0))
    assert not set(tr.subject_ids) & set(te.subject_ids)
    assert len(tr) + len(te) == len(ds)
    assert len(set(te.subject_ids)) == 2


def test_by_subject_order_keeps_subjects_together(multiview):
    cfg = SamplerConfig(groups_per_batch=2, group_order="by_subject")
    seen, subjects_per_batch = [], []
    for b in epoch_batches(multiview.without_labels(), cfg, np.random.default_rng(4)):
        seen.extend(sorted(set(b.view_ids.tolist())))
        subjects_per_batch.append(len(set(multiview.subject_ids[b.source_indices].tolist())))
    assert sorted(seen) == sorted(multiview.groups())
    # 3 subjects x 2 sessions, batches of 2 groups: every batch is one subject's two sessions
    assert subjects_per_batch == [1, 1, 1]
    with pytest.raises(SamplerError, match="group_order"):
        sample_batch(multiview, SamplerConfig(group_order="alphabetical"), np.random.default_rng(0))
