"""CSV ingestion with min-max normalisation, dataset presets and synthetic data."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ml_core import Dataset

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass
class Normalization:
    mins: np.ndarray
    maxs: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        # constant columns map to all zeros
        return np.where(span > 0, (features - self.mins) / safe, 0.0)

    def to_dict(self) -> dict:
        return {"min": self.mins.tolist(), "max": self.maxs.tolist()}


def _label_value(raw: str, positive: str | None) -> int:
    if positive is not None:
        return int(raw.strip() == positive)
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"non-numeric label {raw!r}; pass the positive label explicitly") from None
    if value not in (0.0, 1.0):
        raise DataError(f"label {raw!r} is not binary")
    return int(value)


def ingest_csv(
    path: str | os.PathLike,
    label_column: str | int = -1,
    positive_label: str | None = None,
) -> tuple[Dataset, Normalization]:
    """Read a headed CSV of numeric features plus a binary label column.

    Features are min-max normalised column-wise to [0, 1].  ``label_column``
    is a header name or a column position (default: last column).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if label_column not in header:
            raise DataError(f"{path}: no label column {label_column!r}")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column) % len(header)
    if not rows:
        raise DataError(f"{path}: no data rows")
    features, labels = [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            values = [float(c) for i, c in enumerate(row) if i != label_idx]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric feature cell") from None
        if not all(math.isfinite(v) for v in values):
            raise DataError(f"{path}:{lineno}: missing or non-finite value")
        features.append(values)
        labels.append(_label_value(row[label_idx], positive_label))
    X = np.array(features, dtype=np.float64)
    y = np.array(labels, dtype=np.int64)
    if np.unique(y).size < 2:
        raise DataError(f"{path}: labels contain a single class")
    norm = Normalization(X.min(axis=0), X.max(axis=0))
    names = [h for i, h in enumerate(header) if i != label_idx]
    return Dataset(norm.apply(X), y, names), norm


def read_column(path: str | os.PathLike, column: str | int) -> np.ndarray:
    """One numeric column of a headed CSV, by name or position."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if isinstance(column, str) and column in header:
            idx = header.index(column)
        else:
            try:
                idx = int(column)
            except ValueError:
                raise DataError(f"{path}: no column {column!r}") from None
        try:
            return np.array([float(row[idx]) for row in reader if row], dtype=np.float64)
        except (ValueError, IndexError):
            raise DataError(f"{path}: column {column!r} is not numeric") from None


def write_csv(path: str | os.PathLike, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def synthetic_dataset(n: int, dim: int, rng: np.random.Generator, margin: float = 0.1) -> Dataset:
    """Linearly separable points in the unit cube, labelled by a random hyperplane."""
    normal = rng.normal(size=dim)
    X = rng.random((2 * n, dim))
    score = (X - 0.5) @ normal / np.linalg.norm(normal)
    keep = np.abs(score) > margin * 0.5
    X, score = X[keep][:n], score[keep][:n]
    return Dataset(X, (score > 0).astype(np.int64))


def write_synthetic_csv(path: str | os.PathLike, n: int, dim: int, seed: int) -> None:
    data = synthetic_dataset(n, dim, np.random.default_rng(seed))
    write_csv(
        path,
        [*data.feature_names, "label"],
        ([*map(repr, row), int(lbl)] for row, lbl in zip(data.features.tolist(), data.labels)),
    )


# --------------------------------------------------------------------------
# Spambase preset
# --------------------------------------------------------------------------

SPAMBASE_COLUMNS = [
    *(
        f"word_freq_{w}"
        for w in (
            "make address all 3d our over remove internet order mail receive will people "
            "report addresses free business email you credit your font 000 money hp hpl "
            "george 650 lab labs telnet 857 data 415 85 technology 1999 parts pm direct cs "
            "meeting original project re edu table conference"
        ).split()
    ),
    *(f"char_freq_{c}" for c in (";", "(", "[", "!", "$", "#")),
    "capital_run_length_average",
    "capital_run_length_longest",
    "capital_run_length_total",
    "spam",
]

SPAMBASE_UCI_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/spambase/spambase.data"
# The KEEL repository's copy of Spambase (4597 rows) as shipped in keel-ds 0.2.5.
SPAMBASE_KEEL = {
    "requirement": "keel-ds==0.2.5",
    "wheel_glob": "keel_ds-0.2.5-*.whl",
    "member": "keel_ds/data/balanced/raw/spambase.dat",
    "sha256": "4000f307ace66d6e24ab4a017cd5617887ef81a243155a677eafcc1c759d2f32",
}


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _raw_rows(text: str) -> list[list[str]]:
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        rows.append([cell.strip() for cell in line.split(",")])
    return rows


def _fetch_keel(workdir: Path) -> bytes:
    wheels = sorted(workdir.glob(SPAMBASE_KEEL["wheel_glob"]))
    if not wheels:
        cmd = [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", str(workdir), SPAMBASE_KEEL["requirement"]]
        subprocess.run(cmd, check=True, stdout=subprocess.DEVNULL)
        wheels = sorted(workdir.glob(SPAMBASE_KEEL["wheel_glob"]))
    if not wheels:
        raise DataError("pip did not produce the keel-ds wheel")
    with zipfile.ZipFile(wheels[0]) as zf:
        return zf.read(SPAMBASE_KEEL["member"])


def fetch_spambase(
    dest: str | os.PathLike,
    source: str = "keel",
    sha256: str | None = None,
    wheel_dir: str | os.PathLike | None = None,
) -> Path:
    """Download Spambase, verify its checksum and write a headed CSV.

    ``source="keel"`` pulls the pinned keel-ds wheel through pip (works behind
    a package mirror) and checks the pinned digest.  ``source="uci"`` reads the
    original UCI file; pass ``sha256`` to pin it.
    """
    dest = Path(dest)
    if source == "keel":
        if wheel_dir is not None:
            raw = _fetch_keel(Path(wheel_dir))
        else:
            with tempfile.TemporaryDirectory() as tmp:
                raw = _fetch_keel(Path(tmp))
        expected = SPAMBASE_KEEL["sha256"]
    elif source == "uci":
        with urllib.request.urlopen(SPAMBASE_UCI_URL, timeout=60) as resp:
            raw = resp.read()
        expected = sha256
    else:
        raise DataError(f"unknown source {source!r}")
    digest = _sha256(raw)
    if expected is None:
        log.warning("no checksum pinned for %s; got sha256=%s", source, digest)
    elif digest != expected:
        raise DataError(f"checksum mismatch for {source}: {digest} != {expected}")
    rows = _raw_rows(raw.decode("ascii"))
    if any(len(r) != len(SPAMBASE_COLUMNS) for r in rows):
        raise DataError("unexpected Spambase row width")
    dest.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(SPAMBASE_COLUMNS)
    writer.writerows(rows)
    dest.write_text(buf.getvalue())
    return dest
