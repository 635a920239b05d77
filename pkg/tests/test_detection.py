import itertools
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from dustsense.detection import (
    Annotation, BoundingBox, Detection, evaluate, iou, iou_components, iou_from_areas,
    load_voc, match_detections, parse_voc, read_predictions, format_predictions, to_voc_xml,
)
from dustsense.errors import AnnotationError, DomainError

DATA = Path(__file__).parent / "data"

FIG26 = [
    (1675.8000000000004, 2198.5655999999999, 0.762224242933666),
    (2680.7000000000007, 3108.4756999999999, 0.8623840939145838),
]

coord = st.floats(-500, 500, allow_nan=False)
size = st.floats(0.5, 300)


@st.composite
def boxes(draw):
    x, y = draw(coord), draw(coord)
    return BoundingBox(x, y, x + draw(size), y + draw(size))


def exhaustive_best(preds, gts, threshold):
    """Largest one-to-one matching (then largest IoU sum) by enumeration."""
    if len(preds) > len(gts):
        return exhaustive_best(gts, preds, threshold)
    best = (0, 0.0)
    for perm in itertools.permutations(range(len(gts)), len(preds)):
        vals = [iou(preds[i], gts[j]) for i, j in enumerate(perm)]
        hits = [v for v in vals if v >= threshold]
        best = max(best, (len(hits), sum(hits)))
    return best


class TestIoU:
    def test_identical(self):
        b = BoundingBox(1, 2, 30, 40)
        assert iou_components(b, b)[0] == 1.0

    def test_disjoint(self):
        v, inter, _ = iou_components(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30))
        assert v == 0.0 and inter == 0.0

    def test_half_overlap(self):
        v, inter, uni = iou_components(BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 15, 10))
        assert (inter, uni) == (50.0, 150.0)
        assert v == pytest.approx(1 / 3, abs=1e-15)

    @pytest.mark.parametrize("inter,union,expected", FIG26)
    def test_fig26_consistency(self, inter, union, expected):
        assert abs(iou_from_areas(inter, union) - expected) <= 1e-12

    def test_fig26_boxes(self):
        ann = load_voc(DATA / "voc" / "panel_001.xml")
        preds = read_predictions((DATA / "fig26_predictions.csv").read_text())
        for det, (_, gt), (inter, union, expected) in zip(preds, ann.boxes, FIG26):
            v, i, u = iou_components(det.box, gt)
            assert abs(i - inter) <= 1e-9 and abs(u - union) <= 1e-9
            assert abs(v - expected) <= 1e-12

    def test_degenerate(self):
        with pytest.raises(DomainError):
            BoundingBox(0, 0, 0, 5)
        with pytest.raises(DomainError):
            iou_from_areas(1.0, 0.0)

    @given(boxes(), boxes())
    def test_properties(self, a, b):
        v, inter, uni = iou_components(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou_components(b, a)[0]
        assert abs(v * uni - inter) <= 1e-9 * max(1.0, uni)

    @given(boxes(), boxes(), coord, coord, st.floats(0.25, 4))
    def test_invariance(self, a, b, dx, dy, s):
        def move(bx):
            return BoundingBox((bx.xmin + dx) * s, (bx.ymin + dy) * s,
                               (bx.xmax + dx) * s, (bx.ymax + dy) * s)
        assert iou(move(a), move(b)) == pytest.approx(iou(a, b), abs=1e-9)

    @given(boxes())
    def test_one_iff_identical(self, a):
        shifted = BoundingBox(a.xmin, a.ymin, a.xmax + 1.0, a.ymax)
        assert iou(a, a) == 1.0 and iou(a, shifted) < 1.0

    @given(boxes(), st.floats(0, 50))
    def test_zero_iff_disjoint_interiors(self, a, gap):
        right = BoundingBox(a.xmax + gap, a.ymin, a.xmax + gap + 5, a.ymax)
        assert iou(a, right) == 0.0


class TestVOC:
    def test_single_object(self):
        ann = parse_voc((DATA / "single_object.xml").read_text())
        assert ann.image_id == "bird_17"
        assert ann.boxes == [("droppings", BoundingBox(48, 240, 195, 371))]
        assert (ann.width, ann.height) == (512, 512)

    def test_empty(self):
        ann = parse_voc("<annotation><filename>x.jpg</filename></annotation>")
        assert ann.boxes == [] and ann.image_id == "x"

    def test_degenerate(self):
        xml = ("<annotation><filename>a.jpg</filename><object><name>d</name><bndbox>"
               "<xmin>5</xmin><ymin>1</ymin><xmax>5</xmax><ymax>9</ymax></bndbox></object></annotation>")
        with pytest.raises(AnnotationError, match="degenerate"):
            parse_voc(xml)

    @pytest.mark.parametrize("xml", [
        "<annotation><object>",
        "<notvoc/>",
        "<annotation><object><name>d</name></object></annotation>",
        "<annotation><object><bndbox><xmin>1</xmin><ymin>1</ymin><xmax>3</xmax></bndbox></object></annotation>",
        "<annotation><object><bndbox><xmin>a</xmin><ymin>1</ymin><xmax>3</xmax><ymax>4</ymax></bndbox></object></annotation>",
    ])
    def test_malformed(self, xml):
        with pytest.raises(AnnotationError):
            parse_voc(xml)

    def test_roundtrip_preserves_coordinates(self):
        ann = load_voc(DATA / "voc" / "panel_001.xml")
        again = parse_voc(to_voc_xml(ann))
        assert again.boxes == ann.boxes
        assert [type(v) for _, b in again.boxes for v in b.as_tuple()] == \
            [type(v) for _, b in ann.boxes for v in b.as_tuple()]

    @given(st.lists(boxes(), max_size=5))
    def test_roundtrip_property(self, bxs):
        ann = Annotation("img", [("droppings", b) for b in bxs])
        assert parse_voc(to_voc_xml(ann)).boxes == ann.boxes


class TestMatching:
    def test_fig26(self):
        ann = load_voc(DATA / "voc" / "panel_001.xml")
        preds = read_predictions((DATA / "fig26_predictions.csv").read_text())
        rep = match_detections([p.box for p in preds], [b for _, b in ann.boxes], 0.5)
        assert (rep.true_positives, rep.false_positives, rep.false_negatives) == (2, 0, 0)
        assert all(v >= 0.5 for _, _, v in rep.pairs)

    def test_no_preds(self):
        rep = match_detections([], [BoundingBox(0, 0, 1, 1)])
        assert rep.false_negatives == 1 and rep.recall == 0.0

    def test_two_preds_one_gt(self):
        gt = BoundingBox(0, 0, 10, 10)
        p_hi = BoundingBox(0, 0, 10, 8)      # iou 0.8
        p_lo = BoundingBox(0, 0, 10, 6)      # iou 0.6
        assert iou(p_hi, gt) == pytest.approx(0.8) and iou(p_lo, gt) == pytest.approx(0.6)
        rep = match_detections([p_lo, p_hi], [gt])
        assert (rep.true_positives, rep.false_positives) == (1, 1)
        assert rep.pairs == [(1, 0, pytest.approx(0.8))]
        assert exhaustive_best([p_lo, p_hi], [gt], 0.5) == (1, pytest.approx(0.8))

    def test_threshold_one(self):
        rep = match_detections([BoundingBox(0, 0, 10, 10)], [BoundingBox(0, 0, 10, 11)], 1.0)
        assert rep.true_positives == 0

    def test_bad_threshold(self):
        with pytest.raises(DomainError):
            match_detections([], [], 0.0)

    def test_greedy_can_lose_to_exhaustive(self):
        # A prefers G1, but the only partner for B is G1 as well
        g1, g2 = BoundingBox(0, 0, 10, 10), BoundingBox(0, 0, 10, 7)
        a, b = BoundingBox(0, 0, 10, 9), BoundingBox(0, 2, 10, 12)
        rep = match_detections([a, b], [g1, g2], 0.5)
        assert rep.true_positives == 1
        assert exhaustive_best([a, b], [g1, g2], 0.5)[0] == 2

    @given(st.lists(boxes(), max_size=3), st.lists(boxes(), max_size=3), st.floats(0.05, 1.0))
    def test_against_exhaustive(self, preds, gts, thr):
        rep = match_detections(preds, gts, thr)
        best_count, _ = exhaustive_best(preds, gts, thr)
        assert rep.true_positives <= best_count
        assert rep.true_positives + rep.false_positives == len(preds)
        assert rep.true_positives + rep.false_negatives == len(gts)
        assert len({i for i, _, _ in rep.pairs}) == len({j for _, j, _ in rep.pairs}) == len(rep.pairs)
        # without competing candidates greedy is optimal
        qualifying = [(i, j) for i, p in enumerate(preds) for j, g in enumerate(gts) if iou(p, g) >= thr]
        if len({i for i, _ in qualifying}) == len({j for _, j in qualifying}) == len(qualifying):
            assert rep.true_positives == best_count

    def test_labels(self):
        b = BoundingBox(0, 0, 4, 4)
        assert match_detections([b], [b], 0.5, ["DROPPINGS"], ["droppings"]).true_positives == 1
        assert match_detections([b], [b], 0.5, ["leaf"], ["droppings"]).true_positives == 0


class TestEvaluation:
    def test_report_lines(self):
        ann = load_voc(DATA / "voc" / "panel_001.xml")
        preds = read_predictions((DATA / "fig26_predictions.csv").read_text())
        ev = evaluate(preds, [ann])
        assert ev.true_positives == 2 and ev.precision == 1.0 and ev.recall == 1.0
        text = ev.render()
        assert "(0.8623840939145838, 2680.7000000000007, 3108.475699999999)" in text
        assert text.count("matched=yes") == 2

    def test_unmatched_prediction_image(self):
        ev = evaluate([Detection("ghost", BoundingBox(0, 0, 2, 2))], [])
        assert ev.false_positives == 1 and ev.lines[0].iou == 0.0

    def test_predictions_io(self):
        dets = [Detection("a", BoundingBox(1, 2, 3, 4), "droppings", 0.9),
                Detection("b", BoundingBox(0.5, 0, 3, 4.25))]
        assert read_predictions(format_predictions(dets)) == dets

    @pytest.mark.parametrize("text", ["a,1,2,3", "a,1,2,x,4", "a,3,2,1,4"])
    def test_bad_predictions(self, text):
        with pytest.raises(AnnotationError):
            read_predictions(text)
