"""Scene generator: layout, shift semantics, determinism, directory I/O."""

import dataclasses

import numpy as np
import pytest

from patchalign.pten import PtenError
from patchalign.synthdata import (SceneConfig, Shift, band_label_map,
                                  generate_domain_pair, read_dataset,
                                  render_scene, write_dataset)


def _cfg(**kw):
    base = dict(height=32, width=32, num_classes=4,
                band_fractions=(0.25, 0.25, 0.25, 0.25),
                object_count_range=(1, 3), object_size_range=(3, 6),
                base_noise_sigma=0.02, source_seed=11, target_seed=22)
    base.update(kw)
    return SceneConfig(**base)


def test_band_layout_equal_fractions():
    labels = band_label_map(_cfg())
    for k in range(4):
        assert (labels[8 * k:8 * (k + 1)] == k).all()


def test_band_layout_uneven_fractions_cover_all_rows():
    cfg = _cfg(band_fractions=(0.4, 0.3, 0.2, 0.1))
    labels = band_label_map(cfg)
    # floor boundaries: 12, 22, 28, then forced to height
    assert (labels[:12] == 0).all()
    assert (labels[12:22] == 1).all()
    assert (labels[22:28] == 2).all()
    assert (labels[28:] == 3).all()


def test_render_is_deterministic_and_indexed():
    cfg = _cfg()
    a_img, a_lbl = render_scene(cfg, "source", 5)
    b_img, b_lbl = render_scene(cfg, "source", 5)
    np.testing.assert_array_equal(a_img, b_img)
    np.testing.assert_array_equal(a_lbl, b_lbl)
    c_img, _ = render_scene(cfg, "source", 6)
    assert not np.array_equal(a_img, c_img)
    assert a_img.shape == (1, 32, 32) and a_img.dtype == np.float32
    assert a_lbl.shape == (32, 32) and a_lbl.dtype == np.uint8


def test_noiseless_image_is_class_intensity():
    cfg = _cfg(base_noise_sigma=0.0)
    img, lbl = render_scene(cfg, "source", 3)
    np.testing.assert_allclose(img[0], (lbl + 0.5) / 4, atol=1e-7)


def test_objects_carry_their_class():
    cfg = _cfg(object_count_range=(2, 2), object_size_range=(5, 5), object_class=3)
    _, lbl = render_scene(cfg, "source", 1)
    bands = band_label_map(cfg)
    touched = lbl != bands
    assert touched.any()
    assert (lbl[touched] == 3).all()


def test_identity_shift_and_shared_seed_match_source():
    cfg = _cfg(target_seed=11)  # same seed as source, identity shift
    s_img, s_lbl = render_scene(cfg, "source", 7)
    t_img, t_lbl = render_scene(cfg, "target", 7)
    np.testing.assert_array_equal(s_img, t_img)
    np.testing.assert_array_equal(s_lbl, t_lbl)


def test_vertical_offset_moves_labels_and_fills_top():
    cfg = _cfg(base_noise_sigma=0.0,
               shift=Shift(vertical_offset_px=6))
    ident = dataclasses.replace(cfg, shift=Shift())
    t_img, t_lbl = render_scene(cfg, "target", 4)
    u_img, u_lbl = render_scene(ident, "target", 4)
    np.testing.assert_array_equal(t_lbl[6:], u_lbl[:-6])
    assert (t_lbl[:6] == 0).all()  # entered rows take the top band class
    np.testing.assert_allclose(t_img[0, 6:], u_img[0, :-6], atol=1e-7)
    np.testing.assert_allclose(t_img[0, :6], 0.5 / 4, atol=1e-7)


def test_gain_bias_apply_to_image_only():
    cfg = _cfg(base_noise_sigma=0.0,
               shift=Shift(intensity_gain=0.8, intensity_bias=0.1))
    ident = dataclasses.replace(cfg, shift=Shift())
    t_img, t_lbl = render_scene(cfg, "target", 2)
    u_img, u_lbl = render_scene(ident, "target", 2)
    np.testing.assert_array_equal(t_lbl, u_lbl)
    np.testing.assert_allclose(t_img, 0.8 * u_img + 0.1, atol=1e-6)


def test_shift_noise_statistics():
    cfg = _cfg(height=64, width=64, base_noise_sigma=0.0,
               shift=Shift(noise_sigma=0.05))
    ident = dataclasses.replace(cfg, shift=Shift())
    diffs = []
    for i in range(20):
        t_img, _ = render_scene(cfg, "target", i)
        u_img, _ = render_scene(ident, "target", i)
        diffs.append((t_img - u_img).ravel())
    d = np.concatenate(diffs)
    assert abs(d.mean()) < 0.002
    assert abs(d.std() - 0.05) < 0.002


def test_domain_pair_splits():
    cfg = _cfg()
    src, t_train, t_test = generate_domain_pair(cfg, 6, 5, 3)
    assert len(src) == 6 and len(t_train) == 5 and len(t_test) == 3
    assert src.labels is not None and len(src.labels) == 6
    assert t_train.labels is None
    assert t_test.labels is not None
    assert src.split == "source_train"
    # test indices start after the train indices: scene 5 is shared here
    probe, _ = render_scene(cfg, "target", 5)
    np.testing.assert_array_equal(t_test.images[0], probe)
    for img in t_train.images:
        assert not np.array_equal(img, t_test.images[0])


def test_generate_count_validation():
    cfg = _cfg()
    with pytest.raises(ValueError):
        generate_domain_pair(cfg, 0, 1, 1)
    with pytest.raises(ValueError):
        generate_domain_pair(cfg, 1, 100_001, 1)


@pytest.mark.parametrize("bad", [
    dict(band_fractions=(0.5, 0.5, 0.25, -0.25)),
    dict(band_fractions=(0.3, 0.3, 0.3, 0.3)),
    dict(band_fractions=(0.5, 0.5)),
    dict(object_class=4),
    dict(object_count_range=(3, 1)),
    dict(object_size_range=(0, 4)),
    dict(base_noise_sigma=-0.1),
    dict(num_classes=1, band_fractions=(1.0,)),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        _cfg(**bad).validate()


def test_dataset_roundtrip(tmp_path):
    cfg = _cfg(shift=Shift(2, 0.9, 0.05, 0.01))
    src, t_train, _ = generate_domain_pair(cfg, 3, 2, 1)
    for ds, name in ((src, "src"), (t_train, "tt")):
        d = tmp_path / name
        write_dataset(ds, d)
        back = read_dataset(d)
        assert len(back) == len(ds)
        assert back.num_classes == ds.num_classes
        assert back.split == ds.split
        assert (back.labels is None) == (ds.labels is None)
        for i in range(len(ds)):
            np.testing.assert_array_equal(back.images[i], ds.images[i])
            if ds.labels is not None:
                np.testing.assert_array_equal(back.labels[i], ds.labels[i])
    assert (tmp_path / "tt" / "manifest.json").exists()
    back = read_dataset(tmp_path / "tt")
    assert back.meta["shift"]["vertical_offset_px"] == 2


def test_read_dataset_errors(tmp_path):
    with pytest.raises(PtenError, match="manifest"):
        read_dataset(tmp_path)
    cfg = _cfg()
    src, _, _ = generate_domain_pair(cfg, 2, 1, 1)
    write_dataset(src, tmp_path)
    img0 = tmp_path / "img_00000.pten"
    img0.write_bytes(img0.read_bytes()[:10])
    with pytest.raises(PtenError, match="img_00000"):
        read_dataset(tmp_path)
