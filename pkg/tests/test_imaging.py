import cv2
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tonefair import imaging, tone
from tonefair.errors import EmptySkinRegion
from tonefair.toytrain import SynthSpec, generate_synthetic


def test_flat_images_have_no_hair():
    for v in (0, 128, 255):
        img = np.full((48, 48, 3), v, np.uint8)
        assert not imaging.detect_hair_mask(img).any()


def test_dark_stroke_is_detected():
    img = np.full((64, 64, 3), 200, np.uint8)
    stroke = np.zeros((64, 64), np.uint8)
    cv2.line(stroke, (5, 10), (58, 50), 255, thickness=3)
    stroke = stroke > 0
    img[stroke] = 60
    mask = imaging.detect_hair_mask(img)
    assert mask[stroke].mean() >= 0.9
    assert mask[~stroke].mean() < 0.1


def test_hair_params_change_sensitivity():
    img = np.full((64, 64, 3), 200, np.uint8)
    img[30:33, :] = 170
    strict = imaging.detect_hair_mask(img, imaging.HairParams(threshold=200))
    assert not strict.any()


def test_extract_all_lesion_raises():
    img = np.zeros((4, 4, 3), np.uint8)
    with pytest.raises(EmptySkinRegion):
        imaging.extract_skin_pixels(img, np.ones((4, 4), bool), np.zeros((4, 4), bool))


def test_extract_two_pixels():
    img = np.array([[[10, 20, 30], [200, 150, 120]]], np.uint8)
    lab = imaging.extract_skin_pixels(img, np.array([[True, False]]), np.zeros((1, 2), bool))
    assert lab.shape == (1, 3)
    assert np.allclose(lab[0], tone.rgb_to_lab(np.array([200, 150, 120])))


def test_extract_shape_mismatch():
    with pytest.raises(ValueError):
        imaging.extract_skin_pixels(np.zeros((4, 4, 3), np.uint8), np.zeros((3, 4), bool), np.zeros((4, 4), bool))


def test_extract_counts_background_of_synthetic_swatch():
    s = next(x for x in generate_synthetic(SynthSpec(n_samples=20, hair_prob=1.0, seed=3)) if x.hair.any())
    lab = imaging.extract_skin_pixels(s.image, s.lesion, s.hair)
    assert lab.shape[0] == int((~(s.lesion | s.hair)).sum())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_growing_masks_never_adds_pixels(seed):
    r = np.random.default_rng(seed)
    img = r.integers(0, 256, (12, 12, 3)).astype(np.uint8)
    lesion = r.random((12, 12)) < 0.3
    hair = r.random((12, 12)) < 0.1
    n0 = (~(lesion | hair)).sum()
    if n0 == 0:
        return
    grown = lesion | (r.random((12, 12)) < 0.2)
    try:
        n1 = imaging.extract_skin_pixels(img, grown, hair).shape[0]
    except EmptySkinRegion:
        n1 = 0
    assert n1 <= imaging.extract_skin_pixels(img, lesion, hair).shape[0] == n0


def test_mask_roundtrip_through_files(tmp_path):
    s = generate_synthetic(SynthSpec(n_samples=3, seed=1))[0]
    imaging.write_rgb(tmp_path / "i.png", s.image)
    imaging.write_mask(tmp_path / "m.png", s.lesion)
    img = imaging.read_rgb(tmp_path / "i.png")
    les = imaging.read_mask(tmp_path / "m.png")
    assert np.array_equal(img, s.image) and np.array_equal(les, s.lesion)
    none = np.zeros_like(les)
    a = imaging.extract_skin_pixels(img, les, none)
    b = imaging.extract_skin_pixels(s.image, s.lesion, none)
    assert a.shape == b.shape


def test_read_errors(tmp_path):
    with pytest.raises(OSError):
        imaging.read_rgb(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(OSError):
        imaging.read_mask(tmp_path / "junk.png")


def test_lesion_lab():
    img = np.zeros((2, 2, 3), np.uint8)
    img[0, 0] = (255, 255, 255)
    assert imaging.lesion_lab(img, np.zeros((2, 2), bool)) is None
    m = np.zeros((2, 2), bool)
    m[0, 0] = True
    assert imaging.lesion_lab(img, m)[0] == pytest.approx(100.0, abs=1e-6)
