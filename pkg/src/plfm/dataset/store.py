"""On-disk dataset layout.

    <root>/<roi_id>/t<k>/s1.f32     SAR (VV)
    <root>/<roi_id>/t<k>/s2.f32     observed optical (possibly cloudy)
    <root>/<roi_id>/t<k>/gt.f32     clean optical, synthetic data only
    <root>/<roi_id>/t<k>/mask.f32   cloud mask, synthetic data only
    <root>/index.tsv                manifest
    <root>/split.tsv                roi_id -> train|val|test

Every ``.f32`` has a ``.meta`` sidecar (see :mod:`plfm.data_model`).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data_model import OpticalImage, load_image, read_meta, read_tensor, save_image, write_tensor

INDEX_NAME = "index.tsv"
SPLIT_NAME = "split.tsv"
INDEX_COLUMNS = ("roi_id", "time_index", "optical_path", "sar_path", "coverage")
SETS = ("train", "val", "test")


class DatasetError(Exception):
    """Missing files or malformed metadata under a dataset root."""


@dataclass(frozen=True)
class IndexEntry:
    roi_id: str
    time_index: int
    optical_path: str
    sar_path: str
    coverage: float

    def frame_dir(self, root) -> Path:
        return Path(root) / Path(self.optical_path).parent


@dataclass
class DatasetIndex:
    root: Path
    entries: list = field(default_factory=list)
    split_labels: dict | None = None

    def rois(self) -> list:
        return sorted({e.roi_id for e in self.entries})

    def series(self, roi_id) -> list:
        return sorted((e for e in self.entries if e.roi_id == roi_id), key=lambda e: e.time_index)

    def rois_in(self, which: str) -> list:
        if self.split_labels is None:
            raise DatasetError(f"{self.root}: no split labels (run `dataset split` first)")
        return sorted(r for r, s in self.split_labels.items() if s == which)


def write_series(root, series) -> list:
    """Write one ROISeries under ``root``; returns its index entries."""
    root = Path(root)
    entries = []
    for t in range(len(series.optical)):
        rel = Path(series.roi_id) / f"t{t}"
        d = root / rel
        save_image(d / "s2.f32", series.cloudy[t], sensor="S2", timestamp=t)
        save_image(d / "gt.f32", series.optical[t], sensor="synthetic", timestamp=t)
        save_image(d / "s1.f32", series.sar[t], sensor="S1", timestamp=t)
        write_tensor(d / "mask.f32", series.cloud_masks[t].astype(np.float64),
                     range_tag="unit", sensor="synthetic", timestamp=t)
        entries.append(IndexEntry(series.roi_id, t, (rel / "s2.f32").as_posix(),
                                  (rel / "s1.f32").as_posix(), series.coverage(t)))
    return entries


def write_index(index: DatasetIndex, path=None) -> Path:
    path = Path(path) if path is not None else Path(index.root) / INDEX_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(INDEX_COLUMNS)
        for e in index.entries:
            w.writerow([e.roi_id, e.time_index, e.optical_path, e.sar_path, repr(float(e.coverage))])
    return path


def _check_tensor(path: Path):
    if not path.exists():
        raise DatasetError(f"missing file {path}")
    try:
        meta = read_meta(path)
    except (ValueError, FileNotFoundError) as exc:
        raise DatasetError(f"corrupt sidecar for {path}: {exc}") from None
    expected = int(np.prod(meta["shape"])) * 4
    if path.stat().st_size != expected:
        raise DatasetError(f"{path}: size {path.stat().st_size} does not match sidecar shape {meta['shape']}")
    return meta


def scan_index(root) -> DatasetIndex:
    """Rebuild the manifest by walking the directory tree."""
    root = Path(root)
    entries = []
    for s2 in sorted(root.glob("*/t*/s2.f32")):
        tdir = s2.parent
        try:
            t = int(tdir.name[1:])
        except ValueError:
            continue
        _check_tensor(s2)
        s1 = tdir / "s1.f32"
        _check_tensor(s1)
        mask = tdir / "mask.f32"
        if mask.exists():
            _check_tensor(mask)
            m, _ = read_tensor(mask)
            cov = float((m > 0.5).mean())
        else:
            cov = estimate_coverage(read_tensor(s2)[0])
        rel = tdir.relative_to(root)
        entries.append(IndexEntry(tdir.parent.name, t, (rel / "s2.f32").as_posix(),
                                  (rel / "s1.f32").as_posix(), cov))
    entries.sort(key=lambda e: (e.roi_id, e.time_index))
    return DatasetIndex(root, entries, read_split(root))


def load_index(root) -> DatasetIndex:
    """Read ``index.tsv`` (or scan the tree when absent) and validate every file."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    path = root / INDEX_NAME
    if not path.exists():
        return scan_index(root)
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0]) != INDEX_COLUMNS:
        raise DatasetError(f"{path}: bad header")
    for n, row in enumerate(rows[1:], 2):
        if len(row) != len(INDEX_COLUMNS):
            raise DatasetError(f"{path}:{n}: expected {len(INDEX_COLUMNS)} columns")
        try:
            e = IndexEntry(row[0], int(row[1]), row[2], row[3], float(row[4]))
        except ValueError:
            raise DatasetError(f"{path}:{n}: malformed row") from None
        _check_tensor(root / e.optical_path)
        _check_tensor(root / e.sar_path)
        entries.append(e)
    return DatasetIndex(root, entries, read_split(root))


def write_split(root, labels: dict) -> Path:
    path = Path(root) / SPLIT_NAME
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("roi_id", "set"))
        for roi in sorted(labels):
            w.writerow((roi, labels[roi]))
    return path


def read_split(root) -> dict | None:
    path = Path(root) / SPLIT_NAME
    if not path.exists():
        return None
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    labels = {}
    for n, row in enumerate(rows[1:], 2):
        if len(row) != 2 or row[1] not in SETS:
            raise DatasetError(f"{path}:{n}: malformed split row")
        labels[row[0]] = row[1]
    return labels


def load_optical(root, entry: IndexEntry) -> OpticalImage:
    return load_image(Path(root) / entry.optical_path)


def estimate_coverage(values, threshold: float = 0.85) -> float:
    """Fraction of "white" pixels: mean RGB above ``threshold``."""
    v = np.asarray(values)
    return float((v.mean(axis=-1) > threshold).mean())


def load_frame(root, entry: IndexEntry, name: str):
    path = Path(root) / Path(entry.optical_path).parent / f"{name}.f32"
    _check_tensor(path)
    return load_image(path)
