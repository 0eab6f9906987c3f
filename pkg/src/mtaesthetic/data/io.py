"""On-disk dataset format: image container, label table and manifest.

Image container (little-endian)::

    8 bytes  magic b"MTAIMG1\\0"
    u32      record count N
    u32      height H
    u32      width W
    u32      CRC-32 of the payload
    payload  N * H * W * 3 bytes, 8-bit RGB, row-major

Label table: CSV with header ``id,mean_score,<attribute names...>``, one
row per container record in the same order, attribute cells 0 or 1.

Manifest: flat ``key=value`` text; relative paths resolve against the
manifest's directory.
"""
import csv
from dataclasses import dataclass, field
import os
import struct
import zlib

import numpy as np

from ..errors import IngestionError
from .records import Dataset

IMAGE_MAGIC = b"MTAIMG1\0"
_IMG_HEADER = struct.Struct("<8sIIII")


def write_images(path, images):
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, h, w, c = images.shape
    if c != 3:
        raise IngestionError("container stores RGB images only")
    payload = images.tobytes()
    with open(path, "wb") as fh:
        fh.write(_IMG_HEADER.pack(IMAGE_MAGIC, n, h, w, zlib.crc32(payload)))
        fh.write(payload)


def read_images(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _IMG_HEADER.size:
        raise IngestionError(f"{path}: truncated image container")
    magic, n, h, w, crc = _IMG_HEADER.unpack_from(blob)
    if magic != IMAGE_MAGIC:
        raise IngestionError(f"{path}: bad magic, not an image container")
    payload = blob[_IMG_HEADER.size :]
    if len(payload) != n * h * w * 3:
        raise IngestionError(
            f"{path}: dimension mismatch, header says {n}x{h}x{w}x3 but payload has {len(payload)} bytes"
        )
    if zlib.crc32(payload) != crc:
        raise IngestionError(f"{path}: checksum mismatch")
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w, 3).copy()


def write_labels(path, dataset):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["id", "mean_score", *dataset.attributes])
        for i in range(len(dataset)):
            out.writerow([int(dataset.ids[i]), repr(float(dataset.scores[i])), *dataset.semantic[i].tolist()])


def read_labels(path, attributes, score_range=None, full_coverage=False):
    """Parse and validate a label table; returns ``(ids, scores, semantic)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: empty label table")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["id", "mean_score"]:
        raise IngestionError(f"{path}: header must start with id,mean_score")
    columns = header[2:]
    unknown = [c for c in columns if c not in attributes]
    if unknown:
        raise IngestionError(f"{path}: unknown attribute column(s) {unknown}")
    if columns != list(attributes):
        raise IngestionError(f"{path}: attribute columns {columns} do not match manifest {list(attributes)}")
    body = rows[1:]
    if not body:
        raise IngestionError(f"{path}: label table has no rows")
    m = len(attributes)
    ids = np.empty(len(body), dtype=np.int64)
    scores = np.empty(len(body))
    semantic = np.zeros((len(body), m), dtype=np.uint8)
    bad = []
    for r, row in enumerate(body):
        line = r + 2
        if len(row) != m + 2:
            bad.append(f"line {line}: expected {m} attribute values, got {len(row) - 2}")
            continue
        try:
            ids[r] = int(row[0])
            scores[r] = float(row[1])
            vals = [float(v) for v in row[2:]]
        except ValueError as exc:
            bad.append(f"line {line}: {exc}")
            continue
        if not np.isfinite(scores[r]):
            bad.append(f"line {line}: non-finite score")
        elif score_range is not None and not score_range[0] <= scores[r] <= score_range[1]:
            bad.append(f"line {line}: score {scores[r]} outside {tuple(score_range)}")
        if any(v not in (0.0, 1.0) for v in vals):
            bad.append(f"line {line}: attribute values must be 0 or 1")
            continue
        semantic[r] = vals
        if full_coverage and not any(vals):
            bad.append(f"line {line}: no attribute set but dataset declares full coverage")
    if bad:
        shown = bad[:20] + ([f"... {len(bad) - 20} more"] if len(bad) > 20 else [])
        raise IngestionError(f"{path}: {len(bad)} malformed row(s):\n  " + "\n  ".join(shown))
    return ids, scores, semantic


@dataclass
class DatasetManifest:
    images: str
    labels: str
    attributes: tuple
    midpoint: float = 5.0
    delta: float = 0.0
    split_seed: int = 0
    split_fractions: tuple = (0.8, 0.2)
    score_min: float = 1.0
    score_max: float = 10.0
    full_coverage: bool = True
    plan: tuple = None
    base_dir: str = field(default=".", compare=False)

    _KEYS = ("images", "labels", "attributes", "m", "midpoint", "delta", "split_seed",
             "split_fractions", "score_min", "score_max", "full_coverage", "plan")

    @property
    def m(self):
        return len(self.attributes)

    def path(self, key):
        p = getattr(self, key)
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def to_text(self):
        lines = [
            f"images={self.images}",
            f"labels={self.labels}",
            f"attributes={','.join(self.attributes)}",
            f"m={self.m}",
            f"midpoint={self.midpoint!r}",
            f"delta={self.delta!r}",
            f"split_seed={self.split_seed}",
            f"split_fractions={','.join(repr(float(f)) for f in self.split_fractions)}",
            f"score_min={self.score_min!r}",
            f"score_max={self.score_max!r}",
            f"full_coverage={int(self.full_coverage)}",
        ]
        if self.plan is not None:
            lines.append(f"plan={','.join(repr(float(p)) for p in self.plan)}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        from ..config import parse_kv_file

        kv = parse_kv_file(path)
        unknown = sorted(set(kv) - set(cls._KEYS))
        if unknown:
            raise IngestionError(f"{path}: unknown manifest key(s) {unknown}")
        for key in ("images", "labels", "attributes"):
            if key not in kv:
                raise IngestionError(f"{path}: manifest is missing {key}")
        attributes = tuple(a.strip() for a in kv["attributes"].split(",") if a.strip())
        if "m" in kv and int(kv["m"]) != len(attributes):
            raise IngestionError(f"{path}: m={kv['m']} but {len(attributes)} attribute names")
        try:
            fr = tuple(float(v) for v in kv.get("split_fractions", "0.8,0.2").split(","))
            man = cls(
                images=kv["images"],
                labels=kv["labels"],
                attributes=attributes,
                midpoint=float(kv.get("midpoint", 5.0)),
                delta=float(kv.get("delta", 0.0)),
                split_seed=int(kv.get("split_seed", 0)),
                split_fractions=fr,
                score_min=float(kv.get("score_min", 1.0)),
                score_max=float(kv.get("score_max", 10.0)),
                full_coverage=kv.get("full_coverage", "1") not in ("0", "false", "no"),
                plan=tuple(float(v) for v in kv["plan"].split(",")) if "plan" in kv else None,
                base_dir=os.path.dirname(os.path.abspath(path)),
            )
        except ValueError as exc:
            raise IngestionError(f"{path}: {exc}") from None
        if abs(sum(man.split_fractions) - 1.0) > 1e-9:
            raise IngestionError(f"{path}: split fractions must sum to 1")
        return man


def persist(dataset, out_dir, plan=None, stem="dataset", **manifest_fields):
    """Write container, labels and manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    write_images(os.path.join(out_dir, f"{stem}.img"), dataset.images)
    write_labels(os.path.join(out_dir, f"{stem}_labels.csv"), dataset)
    man = DatasetManifest(
        images=f"{stem}.img",
        labels=f"{stem}_labels.csv",
        attributes=dataset.attributes,
        score_min=float(dataset.score_range[0]),
        score_max=float(dataset.score_range[1]),
        plan=plan,
        base_dir=out_dir,
        **manifest_fields,
    )
    path = os.path.join(out_dir, f"{stem}.manifest")
    man.save(path)
    return path


def ingest(manifest):
    """Load and validate the dataset a manifest (or manifest path) points to."""
    if isinstance(manifest, (str, os.PathLike)):
        manifest = DatasetManifest.load(manifest)
    for key in ("images", "labels"):
        if not os.path.exists(manifest.path(key)):
            raise IngestionError(f"{key} file not found: {manifest.path(key)}")
    images = read_images(manifest.path("images"))
    ids, scores, semantic = read_labels(
        manifest.path("labels"), manifest.attributes,
        (manifest.score_min, manifest.score_max), manifest.full_coverage,
    )
    if len(ids) != images.shape[0]:
        raise IngestionError(
            f"dimension mismatch: {images.shape[0]} images but {len(ids)} label rows"
        )
    return Dataset(images, scores, semantic, manifest.attributes, ids,
                   (manifest.score_min, manifest.score_max))
