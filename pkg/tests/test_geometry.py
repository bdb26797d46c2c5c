import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatial_fsod.geometry import (Box, ImageDims, apply_offsets, box_targets, clip_to_image,
                                   encode_box, iou, iou_matrix)
from spatial_fsod.numerics import ContractError


def test_iou_examples():
    a = Box(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, Box(5, 5, 6, 6)) == 0.0
    assert iou(a, Box(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-15)


@st.composite
def boxes(draw):
    x0 = draw(st.floats(0, 50))
    y0 = draw(st.floats(0, 50))
    w = draw(st.floats(0.1, 50))
    h = draw(st.floats(0.1, 50))
    return Box(x0, y0, x0 + w, y0 + h)


@settings(max_examples=200, deadline=None)
@given(boxes(), boxes())
def test_iou_symmetric_bounded(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a), abs=1e-15)
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)
    assert iou_matrix([a], [b])[0, 0] == pytest.approx(v, abs=1e-12)


def test_encode_full_image():
    np.testing.assert_allclose(encode_box(Box(0, 0, 80, 60), ImageDims(80, 60)), [0, 0, 1, 1, 1, 60 / 80])


def test_encode_hand_value():
    got = encode_box(Box(10, 20, 30, 60), ImageDims(100, 100))
    np.testing.assert_allclose(got, [0.1, 0.2, 0.3, 0.6, 0.08, 2.0], atol=1e-15)


@pytest.mark.parametrize("s", [0.5, 3.0, 10.0])
def test_encode_scale_homogeneous(s):
    b, img = Box(7.3, 2.1, 40.9, 33.3), ImageDims(64.0, 48.0)
    np.testing.assert_allclose(encode_box(b.scaled(s), ImageDims(img.w_img * s, img.h_img * s)),
                               encode_box(b, img), atol=1e-12, rtol=0)


@settings(max_examples=100, deadline=None)
@given(boxes())
def test_encode_area_entry_is_product(b):
    g = encode_box(b, ImageDims(120.0, 110.0))
    assert g[4] == pytest.approx((g[2] - g[0]) * (g[3] - g[1]), abs=1e-12)
    assert g[4] > 0 and g[5] > 0


def test_encode_rejects_degenerate():
    with pytest.raises(ContractError):
        encode_box(Box(1, 1, 1, 5), ImageDims(10, 10))
    with pytest.raises(ContractError):
        encode_box(Box(0, 0, 1, 1), ImageDims(0, 10))


def test_offsets_identity_and_inverse():
    rng = np.random.default_rng(0)
    props = np.array([[10, 10, 30, 40], [5, 6, 9, 20.5]], dtype=float)
    out, clamped = apply_offsets(props, np.zeros((2, 4)))
    np.testing.assert_allclose(out, props, atol=1e-12)
    assert not clamped.any()
    gt = props + rng.uniform(-3, 3, size=props.shape)
    t = box_targets(props, gt)
    back, _ = apply_offsets(props, t)
    np.testing.assert_allclose(back, gt, atol=1e-9)
    np.testing.assert_array_equal(box_targets(props, props), 0.0)


def test_offsets_clamp_min_side():
    out, clamped = apply_offsets(np.array([[0, 0, 10, 10.0]]), np.array([[0, 0, -50, 0]]))
    assert clamped[0]
    assert out[0, 2] - out[0, 0] == pytest.approx(1e-3)


def test_clip_to_image():
    out = clip_to_image(np.array([[-5, -5, 5, 5], [95, 0, 120, 10.0]]), ImageDims(100, 50))
    assert out.min() >= 0 and out[:, [0, 2]].max() <= 100 and out[:, [1, 3]].max() <= 50
