"""Manifest files: one CSV record per image.

::

    # expressions: afraid,angry,happy
    # views: -90,-45,0,45,90
    image_path,subject_id,expression_name,view_angle_deg,session_id
    images.npy:0,s00,happy,-90,p0
    faces/s01_sad_0.png,s01,sad,0,p3

The two ``#`` directives are optional. Without them the vocabulary is the
expression names in order of first appearance and the view set is the
sorted distinct angles. ``image_path`` is relative to the manifest file and
is either a PNG or ``<file>.npy:<index>`` into a float array container of
shape (n, H, W, C).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import MultiViewDataset

HEADER = ["image_path", "subject_id", "expression_name", "view_angle_deg", "session_id"]


class ManifestError(ValueError):
    pass


class ManifestNotFoundError(ManifestError, FileNotFoundError):
    pass


class DuplicateRecordError(ManifestError):
    def __init__(self, triple):
        self.triple = triple
        super().__init__(f"duplicate (subject, session, angle) record: {triple}")


class UnknownExpressionError(ManifestError):
    pass


class UnknownViewError(ManifestError):
    pass


class EmptyDatasetError(ManifestError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    subject_id: str
    expression_name: str
    view_angle_deg: int
    session_id: str


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    expression_vocabulary: list[str]
    view_set: list[int]
    root: Path = field(default_factory=Path)

    def validate(self) -> "DatasetManifest":
        if not self.records:
            raise EmptyDatasetError("manifest has no records")
        vocab = set(self.expression_vocabulary)
        views = set(self.view_set)
        seen = set()
        for r in self.records:
            if r.expression_name not in vocab:
                raise UnknownExpressionError(f"expression {r.expression_name!r} not in vocabulary {self.expression_vocabulary}")
            if r.view_angle_deg not in views:
                raise UnknownViewError(f"view angle {r.view_angle_deg} not in view set {self.view_set}")
            triple = (r.subject_id, r.session_id, r.view_angle_deg)
            if triple in seen:
                raise DuplicateRecordError(triple)
            seen.add(triple)
        return self

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# expressions: " + ",".join(self.expression_vocabulary) + "\n")
        buf.write("# views: " + ",".join(str(v) for v in self.view_set) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for r in self.records:
            w.writerow([r.image_path, r.subject_id, r.expression_name, r.view_angle_deg, r.session_id])
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        return path


def parse_manifest(text: str, root: Path = Path(".")) -> DatasetManifest:
    vocab = None
    views = None
    body = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, _, value = stripped[1:].partition(":")
            key = key.strip().lower()
            items = [v.strip() for v in value.split(",") if v.strip()]
            if key == "expressions":
                vocab = items
            elif key == "views":
                views = [int(v) for v in items]
            continue
        body.append(line)
    rows = list(csv.reader(body))
    if not rows or [c.strip() for c in rows[0]] != HEADER:
        raise ManifestError(f"manifest header must be {','.join(HEADER)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(HEADER):
            raise ManifestError(f"record {lineno}: expected {len(HEADER)} fields, got {len(row)}")
        path, subject, expr, angle, session = (c.strip() for c in row)
        try:
            angle_i = int(angle)
        except ValueError:
            raise ManifestError(f"record {lineno}: view angle {angle!r} is not an integer") from None
        records.append(ManifestRecord(path, subject, expr, angle_i, session))
    if vocab is None:
        vocab = list(dict.fromkeys(r.expression_name for r in records))
    if views is None:
        views = sorted({r.view_angle_deg for r in records})
    return DatasetManifest(records, vocab, views, root).validate()


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestNotFoundError(f"manifest not found: {path}")
    return parse_manifest(path.read_text(), root=path.parent)


def _load_image(root: Path, ref: str, cache: dict) -> np.ndarray:
    file, sep, index = ref.rpartition(":")
    if sep and file.endswith(".npy") and index.isdigit():
        if file not in cache:
            cache[file] = np.load(root / file, mmap_mode="r")
        return np.asarray(cache[file][int(index)], dtype=np.float32)
    from PIL import Image

    with Image.open(root / ref) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def load_dataset(manifest: DatasetManifest) -> MultiViewDataset:
    """Read every image referenced by the manifest into memory."""
    cache: dict = {}
    images = np.stack([_load_image(manifest.root, r.image_path, cache) for r in manifest.records])
    if images.min() < 0 or images.max() > 1:
        raise ManifestError("image values must lie in [0, 1]")
    index = {name: i for i, name in enumerate(manifest.expression_vocabulary)}
    return MultiViewDataset(
        images=images,
        subject_ids=np.array([r.subject_id for r in manifest.records]),
        session_ids=np.array([r.session_id for r in manifest.records]),
        view_angles=np.array([r.view_angle_deg for r in manifest.records], dtype=np.int64),
        expressions=np.array([index[r.expression_name] for r in manifest.records], dtype=np.int64),
        expression_vocabulary=list(manifest.expression_vocabulary),
        view_set=list(manifest.view_set),
    )
