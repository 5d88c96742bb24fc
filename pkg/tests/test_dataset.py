import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmdgm.dataset import (
    DataConsistencyError,
    DataFormatError,
    LabeledDataset,
    binarize,
    load_idx,
    make_mask,
    minibatch_iter,
    nearest_template_predict,
    parse_mask_spec,
    save_idx,
    synth_toy,
    toy_templates,
)
from mmdgm.mathcore import RngStream


def _write_raw_idx(tmp_path, pixels, labels, img_magic=0x803, lbl_magic=0x801):
    """Independent IDX writer built straight from the header layout."""
    n, r, c = pixels.shape
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    ip.write_bytes(struct.pack(">IIII", img_magic, n, r, c) + pixels.astype(np.uint8).tobytes())
    lp.write_bytes(struct.pack(">II", lbl_magic, len(labels)) + np.asarray(labels, np.uint8).tobytes())
    return ip, lp


def test_idx_load_normalises_and_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, (5, 4, 4)).astype(np.uint8)
    pixels[0, 0, 0], pixels[0, 0, 1] = 0, 255
    labels = [0, 1, 2, 1, 0]
    ip, lp = _write_raw_idx(tmp_path, pixels, labels)
    ds = load_idx(ip, lp)
    assert ds.images.shape == (5, 16) and ds.n_classes == 3 and ds.side == 4
    assert ds.images[0, 0] == 0.0 and ds.images[0, 1] == 1.0
    np.testing.assert_array_equal(ds.labels, labels)
    out_i, out_l = tmp_path / "o_img", tmp_path / "o_lbl"
    save_idx(ds, out_i, out_l)
    assert out_i.read_bytes() == ip.read_bytes()
    assert out_l.read_bytes() == lp.read_bytes()


def test_idx_errors(tmp_path):
    pixels = np.zeros((3, 2, 2), np.uint8)
    ip, lp = _write_raw_idx(tmp_path, pixels, [0, 1, 0], img_magic=0x804)
    with pytest.raises(DataFormatError):
        load_idx(ip, lp)
    ip, lp = _write_raw_idx(tmp_path, pixels, [0, 1])
    with pytest.raises(DataConsistencyError):
        load_idx(ip, lp)
    ip, lp = _write_raw_idx(tmp_path, pixels, [0, 1, 0])
    ip.write_bytes(ip.read_bytes()[:-3])
    with pytest.raises(OSError):
        load_idx(ip, lp)


def test_dataset_invariants_enforced():
    with pytest.raises(DataConsistencyError):
        LabeledDataset(np.full((2, 4), 1.5), [0, 1], 2)
    with pytest.raises(DataConsistencyError):
        LabeledDataset(np.zeros((2, 4)), [0, 2], 2)
    with pytest.raises(DataConsistencyError):
        LabeledDataset(np.zeros((0, 4)), np.zeros(0, int), 2)
    ds = LabeledDataset(np.zeros((2, 4)), [0, 1], 2)
    with pytest.raises(ValueError):
        ds.images[0, 0] = 1.0


@pytest.mark.parametrize("M,side", [(2, 8), (4, 14), (10, 28)])
def test_zero_noise_reproduces_templates(M, side):
    ds = synth_toy(RngStream(0, "data"), 3, M, side, noise=0.0, shift=0)
    t = toy_templates(M, side)
    np.testing.assert_array_equal(ds.images, t[ds.labels])
    assert len(np.unique(t, axis=0)) == M


def test_synth_is_deterministic():
    a = synth_toy(RngStream(4, "data"), 10, 4, 14, noise=0.2)
    b = synth_toy(RngStream(4, "data"), 10, 4, 14, noise=0.2)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)


@pytest.mark.parametrize("side,shift", [(14, 1), (28, 1), (28, 0)])
def test_nearest_template_oracle_accuracy(side, shift):
    ds = synth_toy(RngStream(1, "data"), 50, 10, side, noise=0.05, shift=shift)
    pred = nearest_template_predict(ds.images, toy_templates(10, side), side, shift=shift)
    assert np.mean(pred == ds.labels) >= 0.99


def test_binarize_endpoints_and_rate():
    ds = LabeledDataset(np.array([[0.0, 1.0, 0.3]]), [0], 1)
    out = binarize(ds, RngStream(0, "binarize"))
    assert out.images[0, 0] == 0.0 and out.images[0, 1] == 1.0
    big = LabeledDataset(np.full((1, 100_000), 0.3), [0], 1)
    mean = binarize(big, RngStream(2, "binarize")).images.mean()
    assert abs(mean - 0.3) < 0.005
    again = binarize(big, RngStream(2, "binarize")).images
    np.testing.assert_array_equal(again, binarize(big, RngStream(2, "binarize")).images)
    thr = binarize(ds, None, "threshold").images
    np.testing.assert_array_equal(thr, [[0.0, 1.0, 0.0]])
    assert binarize(ds, None, "none") is ds


@given(n=st.integers(1, 200), data=st.data())
@settings(max_examples=20)
def test_epoch_covers_every_index_once(n, data):
    m = data.draw(st.integers(1, n))
    ds = LabeledDataset(np.zeros((n, 2)), np.zeros(n, int), 1)
    idx = np.concatenate([b.indices for b in minibatch_iter(ds, m, RngStream(0, "minibatch"), 3)])
    np.testing.assert_array_equal(np.sort(idx), np.arange(n))


def test_batch_sizes_and_epoch_permutations_differ():
    ds = LabeledDataset(np.zeros((10, 2)), np.zeros(10, int), 1)
    rng = RngStream(0, "minibatch")
    assert [len(b.indices) for b in minibatch_iter(ds, 3, rng, 0)] == [3, 3, 3, 1]
    perms = [tuple(np.concatenate([b.indices for b in minibatch_iter(ds, 10, rng, e)])) for e in range(10)]
    assert len(set(perms)) == 10
    with pytest.raises(ValueError):
        list(minibatch_iter(ds, 11, rng, 0))


def test_masks():
    assert not make_mask("rand_drop", 5, p=0.0).any()
    assert make_mask("rand_drop", 5, p=1.0).all()
    m = make_mask("rect", 28, h=12, w=12).reshape(28, 28)
    assert m.sum() == 144
    rows, cols = np.nonzero(m)
    assert (rows.min(), rows.max(), cols.min(), cols.max()) == (8, 19, 8, 19)
    frac = make_mask("rand_drop", 317, rng=RngStream(0, "mask"), p=0.6).mean()
    assert abs(frac - 0.6) < 0.01
    with pytest.raises(ValueError):
        make_mask("rect", 10, h=11, w=2)


@given(side=st.integers(1, 30), data=st.data())
def test_rect_mask_count(side, data):
    h = data.draw(st.integers(0, side))
    w = data.draw(st.integers(0, side))
    assert make_mask("rect", side, h=h, w=w).sum() == h * w


def test_parse_mask_spec():
    assert parse_mask_spec("rand_drop:0.6") == {"kind": "rand_drop", "p": 0.6}
    assert parse_mask_spec("rect:12x10") == {"kind": "rect", "h": 12, "w": 10}
    with pytest.raises(ValueError):
        parse_mask_spec("circle:3")
