"""On-disk histogram datasets.

One window = one ``.fh1`` file: a 12-byte header (magic "FH01", u16 rows,
u16 cols, u16 label, u16 reserved) followed by rows*cols little-endian u16
counts in row-major order; counts saturate at 65535.  A dataset directory
holds these files plus ``index.csv`` (path,label,source_flow,t0) and an
optional ``label_names.csv`` sidecar naming the integer labels.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .features import FlowHistogram

FH01_MAGIC = b"FH01"
_HEADER = struct.Struct("<4sHHHH")
LABEL_NONE = 0xFFFF

INDEX_NAME = "index.csv"
INDEX_HEADER = ["path", "label", "source_flow", "t0"]
LABEL_NAMES_FILE = "label_names.csv"


class DatasetError(ValueError):
    pass


def histogram_to_bytes(hist: FlowHistogram) -> bytes:
    rows, cols = hist.counts.shape
    label = LABEL_NONE if hist.label is None else int(hist.label)
    if not 0 <= label <= 0xFFFF:
        raise DatasetError(f"label {label} does not fit in u16")
    body = np.minimum(hist.counts, 0xFFFF).astype("<u2").tobytes()
    return _HEADER.pack(FH01_MAGIC, rows, cols, label, 0) + body


def histogram_from_bytes(data: bytes) -> FlowHistogram:
    if len(data) < _HEADER.size:
        raise DatasetError("histogram file shorter than header")
    magic, rows, cols, label, _ = _HEADER.unpack(data[: _HEADER.size])
    if magic != FH01_MAGIC:
        raise DatasetError(f"bad histogram magic {magic!r}")
    expected = _HEADER.size + rows * cols * 2
    if len(data) != expected:
        raise DatasetError(f"histogram file is {len(data)} bytes, expected {expected}")
    counts = (
        np.frombuffer(data, dtype="<u2", offset=_HEADER.size)
        .reshape(rows, cols)
        .astype(np.int64)
    )
    return FlowHistogram(counts, None if label == LABEL_NONE else label)


def save_histogram(path: str | Path, hist: FlowHistogram) -> None:
    Path(path).write_bytes(histogram_to_bytes(hist))


def load_histogram(path: str | Path) -> FlowHistogram:
    return histogram_from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class SampleRef:
    """One index.csv row; path is relative to the dataset directory."""

    path: str
    label: int
    source_flow: str
    t0: float


def write_index(dataset_dir: str | Path, refs: Iterable[SampleRef]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(INDEX_HEADER)
    for ref in refs:
        writer.writerow([ref.path, ref.label, ref.source_flow, f"{ref.t0:.6f}"])
    (Path(dataset_dir) / INDEX_NAME).write_text(buf.getvalue())


def read_index(dataset_dir: str | Path) -> list[SampleRef]:
    index_path = Path(dataset_dir) / INDEX_NAME
    if not index_path.exists():
        raise DatasetError(f"no {INDEX_NAME} in {dataset_dir}")
    rows = csv.reader(io.StringIO(index_path.read_text()))
    header = next(rows, None)
    if header != INDEX_HEADER:
        raise DatasetError(f"index header must be {','.join(INDEX_HEADER)}")
    refs = []
    for row in rows:
        if not row:
            continue
        if len(row) != 4:
            raise DatasetError(f"index row has {len(row)} fields: {row!r}")
        refs.append(SampleRef(row[0], int(row[1]), row[2], float(row[3])))
    return refs


def write_label_names(dataset_dir: str | Path, names: Iterable[str]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "name"])
    for i, name in enumerate(names):
        writer.writerow([i, name])
    (Path(dataset_dir) / LABEL_NAMES_FILE).write_text(buf.getvalue())


def read_label_names(dataset_dir: str | Path) -> list[str] | None:
    path = Path(dataset_dir) / LABEL_NAMES_FILE
    if not path.exists():
        return None
    rows = list(csv.reader(io.StringIO(path.read_text())))
    if not rows or rows[0] != ["label", "name"]:
        raise DatasetError("label_names.csv header must be label,name")
    names: dict[int, str] = {int(r[0]): r[1] for r in rows[1:] if r}
    return [names[i] for i in sorted(names)]


@dataclass
class Sample:
    """A loaded histogram in sparse form (only non-zero cells kept)."""

    label: int
    source_flow: str
    t0: float
    rows: np.ndarray  # int32 indices of non-zero cells
    cols: np.ndarray
    vals: np.ndarray  # int64 counts
    shape: tuple[int, int]

    @classmethod
    def from_histogram(cls, hist: FlowHistogram, source_flow: str, t0: float) -> "Sample":
        rows, cols = np.nonzero(hist.counts)
        return cls(
            label=int(hist.label) if hist.label is not None else -1,
            source_flow=source_flow,
            t0=t0,
            rows=rows.astype(np.int32),
            cols=cols.astype(np.int32),
            vals=hist.counts[rows, cols],
            shape=hist.counts.shape,
        )

    def to_dense(self) -> np.ndarray:
        counts = np.zeros(self.shape, dtype=np.int64)
        counts[self.rows, self.cols] = self.vals
        return counts

    @property
    def total(self) -> int:
        return int(self.vals.sum())


def save_dataset(
    dataset_dir: str | Path,
    histograms: Iterable[tuple[FlowHistogram, str, float]],
    label_names: Iterable[str] | None = None,
) -> list[SampleRef]:
    """Write (histogram, source_flow, t0) triples as numbered .fh1 files plus
    the index; returns the refs in write order."""
    out_dir = Path(dataset_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    refs = []
    for i, (hist, source_flow, t0) in enumerate(histograms):
        if hist.label is None:
            raise DatasetError("datasets require labeled histograms")
        name = f"{i:06d}.fh1"
        save_histogram(out_dir / name, hist)
        refs.append(SampleRef(name, int(hist.label), source_flow, t0))
    write_index(out_dir, refs)
    if label_names is not None:
        write_label_names(out_dir, label_names)
    return refs


def load_samples(dataset_dir: str | Path) -> tuple[list[Sample], list[str] | None]:
    """Load a dataset directory into memory (sparse), index order preserved."""
    base = Path(dataset_dir)
    samples = []
    for ref in read_index(base):
        hist = load_histogram(base / ref.path)
        label = ref.label if hist.label is None else hist.label
        if hist.label is not None and hist.label != ref.label:
            raise DatasetError(
                f"{ref.path}: file label {hist.label} != index label {ref.label}"
            )
        hist.label = label
        samples.append(Sample.from_histogram(hist, ref.source_flow, ref.t0))
    return samples, read_label_names(base)
