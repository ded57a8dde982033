import numpy as np
import pytest
from hypothesis import given, strategies as st

from regionedit.fileio import FormatError
from regionedit.masks import (Mask, apply_mask, load_image, load_mask_pgm, rect_mask, region_mse, save_image_ppm,
                              save_mask_pgm, to_bytes_image)
from regionedit.rng import Rng


@st.composite
def masks(draw, max_side=10):
    H = draw(st.integers(1, max_side))
    W = draw(st.integers(1, max_side))
    top = draw(st.integers(0, H - 1))
    left = draw(st.integers(0, W - 1))
    return rect_mask(H, W, top, left, draw(st.integers(1, H - top)), draw(st.integers(1, W - left)))


def test_rect_examples():
    assert rect_mask(5, 7, 0, 0, 5, 7).coverage == 1.0
    assert rect_mask(4, 4, 0, 0, 1, 1).coverage == 1 / 16
    m = rect_mask(8, 8, 2, 3, 4, 2)
    assert m.coverage + m.complement().coverage == 1.0
    assert np.array_equal(m.complement().bits, 1 - m.bits)


@pytest.mark.parametrize("args", [(4, 4, 3, 0, 2, 1), (4, 4, 0, -1, 1, 1), (4, 4, 0, 0, 0, 1)])
def test_rect_out_of_bounds(args):
    with pytest.raises(ValueError):
        rect_mask(*args)


def test_mask_rejects_non_binary():
    with pytest.raises(ValueError):
        Mask(np.full((2, 2), 0.5))


def test_apply_mask_examples():
    img = Rng(0).fill_gaussian((2, 3, 3))
    ones, zeros = Mask(np.ones((3, 3))), Mask(np.zeros((3, 3)))
    assert np.array_equal(apply_mask(img, ones), img)
    assert np.array_equal(apply_mask(img, zeros), np.zeros_like(img))
    m = rect_mask(3, 3, 1, 1, 2, 2)
    assert np.array_equal(apply_mask(apply_mask(img, m), m), apply_mask(img, m))
    with pytest.raises(ValueError):
        apply_mask(img, rect_mask(4, 3, 0, 0, 1, 1))


def test_region_mse_examples():
    a = Rng(1).fill_gaussian((1, 4, 4))
    m = rect_mask(4, 4, 0, 0, 2, 4)
    r = region_mse(a, a, m)
    assert (r.mse_global, r.mse_in, r.mse_out) == (0.0, 0.0, 0.0)
    r = region_mse(a, a + 1, m)
    assert r.mse_global == pytest.approx(1.0, abs=1e-15)
    assert r.mse_in == pytest.approx(1.0, abs=1e-15) and r.mse_out == pytest.approx(1.0, abs=1e-15)
    b = a + 2 * m.bits[None]
    r = region_mse(a, b, m)
    assert (r.mse_in, r.mse_out, r.mse_global) == (4.0, 0.0, 2.0)


def test_region_mse_empty_region_undefined():
    a = np.zeros((1, 2, 2))
    r = region_mse(a, a + 1, Mask(np.ones((2, 2))))
    assert r.mse_in == 1.0 and r.mse_out is None
    r = region_mse(a, a + 1, Mask(np.zeros((2, 2))))
    assert r.mse_in is None and r.mse_out == 1.0


@given(masks(), st.integers(1, 3), st.integers(0, 10_000))
def test_region_mse_coverage_identity(m, C, seed):
    rng = Rng(seed)
    a, b = rng.fill_gaussian((C, *m.shape)), rng.fill_gaussian((C, *m.shape))
    r = region_mse(a, b, m)
    c = m.coverage
    parts = c * (r.mse_in or 0.0) + (1 - c) * (r.mse_out or 0.0)
    assert abs(r.mse_global - parts) <= 1e-12


@given(masks(), st.integers(0, 10_000))
def test_region_mse_symmetric_and_zero_iff_equal(m, seed):
    rng = Rng(seed)
    a, b = rng.fill_gaussian((1, *m.shape)), rng.fill_gaussian((1, *m.shape))
    assert region_mse(a, b, m) == region_mse(b, a, m)
    # equal inside only
    b_in = np.where(m.bits[None] == 1, a, b)
    r = region_mse(a, b_in, m)
    assert r.mse_in == 0.0
    assert r.mse_out is None or r.mse_out > 0.0


# ---------------------------------------------------------------- PGM / PPM


@given(masks())
def test_pgm_round_trip(tmp_path_factory, m):
    p = tmp_path_factory.mktemp("pgm") / "m.pgm"
    save_mask_pgm(m, p, comments=["seed = 3"])
    assert load_mask_pgm(p) == m


def _pgm(tmp_path, header: bytes, raster: bytes):
    p = tmp_path / "x.pgm"
    p.write_bytes(header + raster)
    return p


def test_pgm_all_255_is_full(tmp_path):
    assert load_mask_pgm(_pgm(tmp_path, b"P5\n3 2\n255\n", b"\xff" * 6)).coverage == 1.0


def test_pgm_threshold(tmp_path):
    m = load_mask_pgm(_pgm(tmp_path, b"P5 4 1 255\n", bytes([0, 127, 128, 200])))
    assert m.bits.tolist() == [[0, 0, 1, 1]]


def test_pgm_maxval_rejected(tmp_path):
    with pytest.raises(FormatError, match="maxval 15 at byte 7"):
        load_mask_pgm(_pgm(tmp_path, b"P5\n2 2\n15\n", b"\x00" * 4))


def test_pgm_header_errors_report_offsets(tmp_path):
    with pytest.raises(FormatError, match="malformed height b'x' at byte 5"):
        load_mask_pgm(_pgm(tmp_path, b"P5\n2 x\n255\n", b""))
    with pytest.raises(FormatError, match="bad magic"):
        load_mask_pgm(_pgm(tmp_path, b"P6\n2 2\n255\n", b"\x00" * 12))
    with pytest.raises(FormatError, match="header ends early at byte 7"):
        load_mask_pgm(_pgm(tmp_path, b"P5\n2 2\n", b""))
    with pytest.raises(FormatError, match="raster truncated"):
        load_mask_pgm(_pgm(tmp_path, b"P5\n2 2\n255\n", b"\x00"))


def test_pgm_comments_skipped(tmp_path):
    m = load_mask_pgm(_pgm(tmp_path, b"P5\n# hello\n2 1\n# more\n255\n", b"\xff\x00"))
    assert m.bits.tolist() == [[1, 0]]


def test_ppm_export_mapping(tmp_path):
    img = np.array([[[-2.0, -1.0, 0.0, 1.0, 3.0]]])
    u8 = to_bytes_image(img)
    assert u8.shape == (1, 5, 3)
    assert u8[0, :, 0].tolist() == [0, 0, 128, 255, 255]
    p = tmp_path / "a.ppm"
    save_image_ppm(img, p, ["alpha = 1.0"])
    data = p.read_bytes()
    assert data.startswith(b"P6\n# alpha = 1.0\n5 1\n255\n")
    back = load_image(p, 1)
    assert np.allclose(back, np.clip(img, -1, 1), atol=1 / 127.5)


def test_ppm_rgb_round_trip(tmp_path):
    img = np.round((Rng(2).uniforms(48).reshape(3, 4, 4) * 2 - 1) * 127.5) / 127.5
    img = np.clip(img, -1, 1)
    p = tmp_path / "c.ppm"
    save_image_ppm(img, p)
    back = load_image(p, 3)
    assert np.max(np.abs(back - img)) <= 1 / 127.5
