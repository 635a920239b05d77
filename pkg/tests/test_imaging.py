from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from dustsense.detection import BoundingBox
from dustsense.errors import DecodeError, DomainError
from dustsense.imaging import (
    BinaryImage, ImageDustClass, PixelReport, RasterImage, adaptive_enhance, binarize,
    classify_black_ratio, classify_image_dust, connected_components, crop, decode_pnm,
    encode_pnm, paint_fixture, pixel_report, run_pipeline, to_grayscale,
)

gray_arrays = hnp.arrays(np.uint8, hnp.array_shapes(min_dims=2, max_dims=2, max_side=12))
rgb_arrays = hnp.arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 8), st.just(3)))


def gray(rows):
    return RasterImage(np.array(rows, dtype=np.uint8))


class TestCodec:
    def test_minimal_plain_gray(self):
        img = decode_pnm(b"P2 1 1 255 0")
        assert (img.width, img.height, img.channels) == (1, 1, 1)
        assert img.pixels[0, 0] == 0

    def test_minimal_plain_rgb(self):
        img = decode_pnm(b"P3 1 1 255 255 0 0")
        assert img.channels == 3 and img.pixels[0, 0].tolist() == [255, 0, 0]

    def test_rejects_16bit(self):
        with pytest.raises(DecodeError, match="maxval"):
            decode_pnm(b"P5 2 2 65535\n" + bytes(8))

    @pytest.mark.parametrize("data", [
        b"P7 1 1 255\n\x00", b"P5 2 2 255\n\x00\x00", b"P5 2", b"P2 2 1 255 1",
        b"P2 x 1 255 0", b"P5 1 1 255", b"P2 1 1 255 300",
    ])
    def test_malformed(self, data):
        with pytest.raises(DecodeError):
            decode_pnm(data)

    def test_comments(self):
        img = decode_pnm(b"P2\n# made by hand\n2 1\n255\n10 # first\n20\n")
        assert img.pixels.tolist() == [[10, 20]]

    def test_binary_header_comment(self):
        img = decode_pnm(b"P5\n#c\n2 1\n255\n\x07\x08")
        assert img.pixels.tolist() == [[7, 8]]

    @given(gray_arrays, st.booleans())
    def test_roundtrip_gray(self, arr, plain):
        img = RasterImage(arr)
        data = encode_pnm(img, plain)
        assert decode_pnm(data) == img
        assert encode_pnm(decode_pnm(data), plain) == data

    @given(rgb_arrays, st.booleans())
    def test_roundtrip_rgb(self, arr, plain):
        data = encode_pnm(RasterImage(arr), plain)
        assert encode_pnm(decode_pnm(data), plain) == data

    def test_from_samples_validation(self):
        with pytest.raises(DomainError):
            RasterImage.from_samples(2, 2, 1, [0, 1, 2])
        with pytest.raises(DomainError):
            RasterImage.from_samples(1, 1, 1, [256])


class TestCropGray:
    def test_identity(self):
        img = RasterImage(np.arange(12, dtype=np.uint8).reshape(3, 4))
        assert crop(img, 0, 0, 4, 3) == img

    def test_inner(self):
        img = RasterImage(np.arange(16, dtype=np.uint8).reshape(4, 4))
        expected = [[img.pixels[y][x] for x in (1, 2)] for y in (1, 2)]
        assert crop(img, 1, 1, 2, 2).pixels.tolist() == expected

    @pytest.mark.parametrize("rect", [(3, 3, 2, 2), (-1, 0, 1, 1), (0, 0, 0, 1), (0, 0, 5, 4)])
    def test_out_of_bounds(self, rect):
        with pytest.raises(DomainError):
            crop(RasterImage(np.zeros((4, 4), np.uint8)), *rect)

    @pytest.mark.parametrize("rgb,expected", [
        ((255, 255, 255), 255), ((0, 0, 0), 0), ((255, 0, 0), 76),
        ((0, 255, 0), 150), ((0, 0, 255), 29),
    ])
    def test_luma(self, rgb, expected):
        img = RasterImage(np.array([[rgb]], dtype=np.uint8))
        assert to_grayscale(img).pixels[0, 0] == expected

    def test_luma_needs_rgb(self):
        with pytest.raises(DomainError):
            to_grayscale(gray([[1]]))


class TestEnhance:
    def test_uniform(self):
        for v in (0, 40, 255):
            out = adaptive_enhance(RasterImage(np.full((6, 7), v, np.uint8)), 2)
            assert (out.pixels == 128).all()

    def test_dark_blob(self):
        px = np.full((20, 20), 220, np.uint8)
        px[8:12, 8:12] = 60
        out = adaptive_enhance(RasterImage(px), 5).pixels
        assert out[8:12, 8:12].max() < out[0:4, 0:4].min()

    def test_checkerboard(self):
        px = ((np.indices((4, 4)).sum(0) % 2) * 255).astype(np.uint8)
        out = adaptive_enhance(RasterImage(px), 1).pixels
        # direct evaluation: value / clipped 3x3 mean * 128
        for y in range(4):
            for x in range(4):
                win = [int(px[j][i]) for j in range(max(0, y - 1), min(4, y + 2))
                       for i in range(max(0, x - 1), min(4, x + 2))]
                mean = sum(win) / len(win)
                want = min(255, int(px[y][x] / mean * 128 + 0.5))
                assert out[y, x] == want
        dark = out[px == 0]
        bright = out[px == 255]
        assert dark.max() < bright.min()

    def test_radius(self):
        with pytest.raises(DomainError):
            adaptive_enhance(gray([[1]]), 0)


class TestBinarize:
    def test_examples(self):
        assert not binarize(RasterImage(np.full((3, 3), 255, np.uint8))).bits.any()
        assert binarize(RasterImage(np.zeros((3, 3), np.uint8))).bits.all()
        assert binarize(gray([[100, 128, 200]]), 128).bits.tolist() == [[True, False, False]]

    @settings(max_examples=100)
    @given(gray_arrays, st.integers(0, 256), st.integers(0, 256))
    def test_monotone_in_threshold(self, arr, t1, t2):
        lo, hi = sorted((t1, t2))
        img = RasterImage(arr)
        assert pixel_report(binarize(img, lo)).black_pixels <= pixel_report(binarize(img, hi)).black_pixels


class TestReport:
    def test_all_white(self):
        r = pixel_report(BinaryImage(np.zeros((10, 10), bool)))
        assert r.black_ratio == 0.0 and r.white_pixels == 100

    def test_quarter(self):
        bits = np.zeros((10, 10), bool)
        bits[:5, :5] = True
        assert pixel_report(BinaryImage(bits)).black_ratio == 0.25

    @given(st.integers(1, 40), st.integers(1, 40), st.floats(0, 1), st.integers(0, 2**32))
    def test_painted_fixture(self, w, h, f, seed):
        img = paint_fixture(w, h, f, seed)
        k = int(round(f * w * h))
        r = pixel_report(binarize(img))
        assert r.black_pixels == k and r.black_ratio == k / (w * h)
        assert r.black_pixels + r.white_pixels == w * h

    @given(gray_arrays, st.integers(0, 256))
    def test_counts_cover_image(self, arr, t):
        r = pixel_report(binarize(RasterImage(arr), t))
        assert r.black_pixels + r.white_pixels == arr.size


class TestImageClass:
    @pytest.mark.parametrize("ratio,cls", [
        (0.2519, ImageDustClass.HEAVY_DUST), (0.1727, ImageDustClass.MEDIUM_DUST),
        (0.0, ImageDustClass.NO_DUST), (0.02, ImageDustClass.MEDIUM_DUST),
        (0.22, ImageDustClass.HEAVY_DUST),
    ])
    def test_anchors(self, ratio, cls):
        assert classify_black_ratio(ratio) is cls

    def test_from_report(self):
        assert classify_image_dust(PixelReport(2519, 7481)) is ImageDustClass.HEAVY_DUST

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert classify_black_ratio(lo) <= classify_black_ratio(hi)


def flood_fill_regions(bits):
    """4-connected regions by breadth-first search."""
    h, w = bits.shape
    seen = np.zeros_like(bits, dtype=bool)
    regions = []
    for y in range(h):
        for x in range(w):
            if bits[y, x] and not seen[y, x]:
                region, q = [], deque([(y, x)])
                seen[y, x] = True
                while q:
                    cy, cx = q.popleft()
                    region.append((cy, cx))
                    for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((ny, nx))
                regions.append(region)
    return regions


def region_box(region):
    ys = [p[0] for p in region]
    xs = [p[1] for p in region]
    return BoundingBox(min(xs), min(ys), max(xs) + 1, max(ys) + 1)


class TestComponents:
    def test_empty(self):
        assert connected_components(BinaryImage(np.zeros((5, 5), bool))) == []

    def test_square(self):
        bits = np.zeros((8, 8), bool)
        bits[2:5, 2:5] = True
        assert connected_components(BinaryImage(bits)) == [BoundingBox(2, 2, 5, 5)]

    def test_diagonal(self):
        bits = np.zeros((3, 3), bool)
        bits[0, 0] = bits[1, 1] = True
        boxes = connected_components(BinaryImage(bits))
        assert len(boxes) == len(flood_fill_regions(bits)) == 2

    def test_min_area(self):
        bits = np.zeros((6, 6), bool)
        bits[0, 0] = True
        bits[3:5, 3:5] = True
        assert connected_components(BinaryImage(bits), min_area=2) == [BoundingBox(3, 3, 5, 5)]
        with pytest.raises(DomainError):
            connected_components(BinaryImage(bits), 0)

    @given(hnp.arrays(bool, hnp.array_shapes(min_dims=2, max_dims=2, max_side=10)),
           st.integers(1, 4))
    def test_against_flood_fill(self, bits, min_area):
        regions = flood_fill_regions(bits)
        expected = sorted((region_box(r) for r in regions if len(r) >= min_area),
                          key=lambda b: (b.ymin, b.xmin, b.xmax, b.ymax))
        got = sorted(connected_components(BinaryImage(bits), min_area),
                     key=lambda b: (b.ymin, b.xmin, b.xmax, b.ymax))
        assert got == expected
        # regions partition the black set
        covered = set()
        for r in regions:
            assert covered.isdisjoint(r)
            covered.update(r)
        assert covered == {tuple(p) for p in np.argwhere(bits)}


class TestPipeline:
    def test_white_is_clean(self):
        res = run_pipeline(RasterImage(np.full((30, 30, 3), 255, np.uint8)))
        assert res.report.black_ratio == 0.0 and res.dust_class is ImageDustClass.NO_DUST

    @pytest.mark.parametrize("f,cls", [(0.2519, ImageDustClass.HEAVY_DUST),
                                       (0.1727, ImageDustClass.MEDIUM_DUST),
                                       (0.0, ImageDustClass.NO_DUST)])
    def test_painted_anchors(self, f, cls):
        res = run_pipeline(paint_fixture(100, 100, f, seed=3, rgb=True))
        assert res.report.black_ratio == f
        assert res.dust_class is cls

    def test_deterministic(self):
        data = encode_pnm(paint_fixture(40, 30, 0.1, seed=9, rgb=True))
        a = run_pipeline(decode_pnm(data)).report
        b = run_pipeline(decode_pnm(bytes(data))).report
        assert a == b

    def test_shading_removed(self):
        # a left-to-right illumination ramp with no dust should stay clean after enhancement
        ramp = np.tile(np.linspace(90, 250, 64), (48, 1)).astype(np.uint8)
        plain = run_pipeline(RasterImage(ramp), enhance=False, threshold=128)
        assert plain.report.black_ratio > 0.1
        res = run_pipeline(RasterImage(ramp), radius=8, threshold=110)
        assert res.report.black_ratio == 0.0

    def test_crop_and_invert(self):
        px = np.full((10, 10), 255, np.uint8)
        px[:, :5] = 0
        assert run_pipeline(RasterImage(px), rect=(5, 0, 5, 10)).report.black_ratio == 0.0
        inv = run_pipeline(RasterImage(px), enhance=False, invert=True)
        assert inv.report.black_ratio == 0.5
