"""
Droppings-detection evaluation: boxes, IoU, VOC ground truth and matching.

Coordinates are continuous, so a box spanning ``xmin..xmax`` has width
``xmax - xmin`` (no +1 pixel convention). Matching is one-to-one and greedy
in descending IoU order.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from dustsense.errors import AnnotationError, DomainError

DEFAULT_IOU_THRESHOLD = 0.5
DEFAULT_CLASS = "droppings"


@dataclass(frozen=True)
class BoundingBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise DomainError(f"degenerate box {self.as_tuple()}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)


@dataclass
class Annotation:
    image_id: str
    boxes: list[tuple[str, BoundingBox]] = field(default_factory=list)
    width: Optional[int] = None
    height: Optional[int] = None


@dataclass(frozen=True)
class Detection:
    """A predicted box. ``confidence`` is carried through but not used for matching."""

    image_id: str
    box: BoundingBox
    label: str = DEFAULT_CLASS
    confidence: Optional[float] = None


@dataclass
class MatchReport:
    pairs: list[tuple[int, int, float]]
    true_positives: int
    false_positives: int
    false_negatives: int
    threshold: float

    @property
    def precision(self) -> float:
        denom = self.true_positives + self.false_positives
        return self.true_positives / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.true_positives + self.false_negatives
        return self.true_positives / denom if denom else 0.0


def iou_from_areas(intersect: float, union: float) -> float:
    if not union > 0:
        raise DomainError("union area must be positive")
    return intersect / union


def iou_components(a: BoundingBox, b: BoundingBox) -> tuple[float, float, float]:
    """Return ``(iou, intersect_area, union_area)`` for two boxes."""
    w = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    h = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    intersect = w * h if (w > 0 and h > 0) else 0.0
    union = a.area + b.area - intersect
    return iou_from_areas(intersect, union), intersect, union


def iou(a: BoundingBox, b: BoundingBox) -> float:
    return iou_components(a, b)[0]


def _number(parent: ET.Element, tag: str) -> float:
    node = parent.find(tag)
    if node is None or node.text is None or not node.text.strip():
        raise AnnotationError(f"missing bndbox field <{tag}>")
    text = node.text.strip()
    try:
        value = int(text)
    except ValueError:
        try:
            value = float(text)
        except ValueError:
            raise AnnotationError(f"non-numeric <{tag}>: {text!r}") from None
    return value


def parse_voc(xml_text: str | bytes, image_id: Optional[str] = None) -> Annotation:
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise AnnotationError(f"malformed XML: {exc}") from None
    if root.tag != "annotation":
        raise AnnotationError(f"expected <annotation> root, got <{root.tag}>")

    if image_id is None:
        filename = root.findtext("filename") or root.findtext("path") or ""
        image_id = Path(filename.strip()).stem if filename.strip() else ""
    ann = Annotation(image_id=image_id)
    size = root.find("size")
    if size is not None:
        w, h = size.findtext("width"), size.findtext("height")
        ann.width = int(w) if w and w.strip().isdigit() else None
        ann.height = int(h) if h and h.strip().isdigit() else None

    for obj in root.iter("object"):
        name = (obj.findtext("name") or DEFAULT_CLASS).strip()
        bnd = obj.find("bndbox")
        if bnd is None:
            raise AnnotationError(f"object {name!r} has no <bndbox>")
        coords = [_number(bnd, t) for t in ("xmin", "ymin", "xmax", "ymax")]
        if coords[2] <= coords[0] or coords[3] <= coords[1]:
            raise AnnotationError(f"degenerate bndbox {coords}")
        ann.boxes.append((name, BoundingBox(*coords)))
    return ann


def load_voc(path: str | Path) -> Annotation:
    path = Path(path)
    ann = parse_voc(path.read_bytes())
    if not ann.image_id:
        ann.image_id = path.stem
    return ann


def _fmt(v: float) -> str:
    return str(v) if isinstance(v, int) else repr(v)


def to_voc_xml(ann: Annotation) -> str:
    """Serialize an annotation back to VOC XML, keeping coordinates verbatim."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = ann.image_id
    if ann.width is not None and ann.height is not None:
        size = ET.SubElement(root, "size")
        ET.SubElement(size, "width").text = str(ann.width)
        ET.SubElement(size, "height").text = str(ann.height)
        ET.SubElement(size, "depth").text = "3"
    for label, box in ann.boxes:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = label
        bnd = ET.SubElement(obj, "bndbox")
        for tag, v in zip(("xmin", "ymin", "xmax", "ymax"), box.as_tuple()):
            ET.SubElement(bnd, tag).text = _fmt(v)
    return ET.tostring(root, encoding="unicode")


def _same_class(a: str, b: str) -> bool:
    return a.casefold() == b.casefold()


def match_detections(preds: Sequence[BoundingBox], gts: Sequence[BoundingBox],
                     threshold: float = DEFAULT_IOU_THRESHOLD,
                     pred_labels: Optional[Sequence[str]] = None,
                     gt_labels: Optional[Sequence[str]] = None) -> MatchReport:
    """Greedy one-to-one matching by descending IoU.

    A pair qualifies when its IoU is at least ``threshold``. Labels, when
    given, must agree case-insensitively.
    """
    if not 0.0 < threshold <= 1.0:
        raise DomainError("threshold must lie in (0, 1]")
    candidates = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            if pred_labels is not None and gt_labels is not None \
                    and not _same_class(pred_labels[i], gt_labels[j]):
                continue
            v = iou(p, g)
            if v >= threshold:
                candidates.append((v, i, j))
    # ties broken by index so the result is deterministic
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_p, used_g, pairs = set(), set(), []
    for v, i, j in candidates:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, v))
    tp = len(pairs)
    return MatchReport(pairs=pairs, true_positives=tp, false_positives=len(preds) - tp,
                       false_negatives=len(gts) - tp, threshold=threshold)


@dataclass
class EvaluationLine:
    image_id: str
    iou: float
    intersect: float
    union: float
    matched: bool

    def render(self) -> str:
        return (f"{self.image_id} (iou, intersect, union): "
                f"({self.iou!r}, {self.intersect!r}, {self.union!r}) "
                f"matched={'yes' if self.matched else 'no'}")


@dataclass
class Evaluation:
    lines: list[EvaluationLine] = field(default_factory=list)
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    threshold: float = DEFAULT_IOU_THRESHOLD

    @property
    def precision(self) -> float:
        d = self.true_positives + self.false_positives
        return self.true_positives / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.true_positives + self.false_negatives
        return self.true_positives / d if d else 0.0

    def render(self) -> str:
        out = ["Intersection over Union (IoU) calculation:"]
        out += [ln.render() for ln in self.lines]
        out.append(f"threshold={self.threshold} TP={self.true_positives} "
                   f"FP={self.false_positives} FN={self.false_negatives} "
                   f"precision={self.precision:.4f} recall={self.recall:.4f}")
        return "\n".join(out) + "\n"


def evaluate(detections: Sequence[Detection], annotations: Sequence[Annotation],
             threshold: float = DEFAULT_IOU_THRESHOLD) -> Evaluation:
    """Match detections against ground truth image by image.

    Every prediction yields one report line with its best-overlap ground
    truth box (iou 0 when the image has none).
    """
    result = Evaluation(threshold=threshold)
    gt_by_image = {a.image_id: a for a in annotations}
    by_image: dict[str, list[Detection]] = {}
    for d in detections:
        by_image.setdefault(d.image_id, []).append(d)

    for image_id in sorted(set(gt_by_image) | set(by_image)):
        preds = by_image.get(image_id, [])
        ann = gt_by_image.get(image_id)
        gts = [b for _, b in ann.boxes] if ann else []
        gt_labels = [lbl for lbl, _ in ann.boxes] if ann else []
        report = match_detections([p.box for p in preds], gts, threshold,
                                  [p.label for p in preds], gt_labels)
        matched = {i: j for i, j, _ in report.pairs}
        for i, p in enumerate(preds):
            if i in matched:
                v, inter, uni = iou_components(p.box, gts[matched[i]])
            elif gts:
                v, inter, uni = max((iou_components(p.box, g) for g in gts), key=lambda c: c[0])
            else:
                v, inter, uni = 0.0, 0.0, p.box.area
            result.lines.append(EvaluationLine(image_id, v, inter, uni, i in matched))
        result.true_positives += report.true_positives
        result.false_positives += report.false_positives
        result.false_negatives += report.false_negatives
    return result


def read_predictions(text: str) -> list[Detection]:
    """Parse prediction records: ``image_id,xmin,ymin,xmax,ymax[,confidence[,label]]``.

    Blank lines, ``#`` comments and a header line starting with ``image_id``
    are skipped.
    """
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#") or line.lower().startswith("image_id"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 5:
            raise AnnotationError(f"line {lineno}: expected at least 5 fields")
        try:
            coords = [float(v) for v in parts[1:5]]
            conf = float(parts[5]) if len(parts) > 5 and parts[5] else None
        except ValueError:
            raise AnnotationError(f"line {lineno}: non-numeric field") from None
        label = parts[6] if len(parts) > 6 and parts[6] else DEFAULT_CLASS
        try:
            box = BoundingBox(*coords)
        except DomainError as exc:
            raise AnnotationError(f"line {lineno}: {exc}") from None
        out.append(Detection(parts[0], box, label, conf))
    return out


def format_predictions(detections: Sequence[Detection]) -> str:
    lines = ["image_id,xmin,ymin,xmax,ymax,confidence,label"]
    for d in detections:
        conf = "" if d.confidence is None else repr(d.confidence)
        lines.append(",".join([d.image_id, *(repr(float(v)) for v in d.box.as_tuple()),
                               conf, d.label]))
    return "\n".join(lines) + "\n"
