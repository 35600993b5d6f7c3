"""Text file formats: vote matrices, labelings, bounds, samples, reports.

Everything is line-oriented plain text.  Tabular data is comma-separated;
structured records are ``key = value`` lines.  Floats are written with 17
significant digits so every double survives a write/read cycle bit-exactly;
``#`` starts a comment line in any format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Bounds, VoteMatrix, check_labeling, one_hot_labels
from .intervals import LabeledSample
from .ocds import CoinParams

FLOAT_FMT = "%.17g"


class DataError(Exception):
    """A file or its contents violate the documented format."""


def _data_lines(path) -> list[str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    lines = []
    for raw in text.splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    if not lines:
        raise DataError(f"{path}: no data rows")
    return lines


def _split_row(line: str) -> list[str]:
    return [f.strip() for f in line.split(",")]


def _int_fields(fields: list[str]) -> list[int] | None:
    try:
        return [int(f) for f in fields]
    except ValueError:
        return None


def _float_fields(fields: list[str]) -> list[float] | None:
    try:
        return [float(f) for f in fields]
    except ValueError:
        return None


def _int_table(path, what: str) -> np.ndarray:
    """Parse an integer CSV, skipping one auto-detected header row."""
    lines = _data_lines(path)
    rows = [_split_row(ln) for ln in lines]
    if _int_fields(rows[0]) is None:
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: header but no data rows")
    width = len(rows[0])
    table = []
    for num, fields in enumerate(rows, start=1):
        if len(fields) != width:
            raise DataError(f"{path}: row {num} has {len(fields)} fields, expected {width}")
        vals = _int_fields(fields)
        if vals is None:
            raise DataError(f"{path}: row {num} has a non-integer {what} value")
        table.append(vals)
    return np.array(table, dtype=np.int64)


def load_votes(path, k: int | None = None) -> VoteMatrix:
    """Read a vote matrix: n rows, p integer columns, 0 = abstain."""
    table = _int_table(path, "vote")
    if table.min(initial=0) < 0:
        raise DataError(f"{path}: negative vote values")
    try:
        return VoteMatrix(table, k)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_votes(path, votes: VoteMatrix) -> None:
    rows = "\n".join(",".join(str(v) for v in row) for row in votes.votes)
    Path(path).write_text(rows + "\n")


def load_labels(path, k: int) -> np.ndarray:
    """Read a labeling: one integer column (hard) or k float columns (soft).

    Soft rows must sum to 1 within 1e-6.  Rows already normalized to 1e-12
    pass through bit-exactly; anything looser is rescaled.
    """
    lines = _data_lines(path)
    rows = [_split_row(ln) for ln in lines]
    if _float_fields(rows[0]) is None:
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: header but no data rows")
    width = len(rows[0])
    if width == 1:
        table = []
        for num, fields in enumerate(rows, start=1):
            if len(fields) != 1:
                raise DataError(f"{path}: row {num} is not a single label")
            vals = _int_fields(fields)
            if vals is None:
                raise DataError(f"{path}: row {num} has a non-integer hard label")
            table.append(vals[0])
        try:
            return one_hot_labels(np.array(table), k)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
    if width != k:
        raise DataError(f"{path}: expected 1 or {k} columns, found {width}")
    return _soft_table(path, rows, k)


def load_prediction(path) -> np.ndarray:
    """Read an n x k prediction: float rows, k inferred from the width."""
    lines = _data_lines(path)
    rows = [_split_row(ln) for ln in lines]
    if _float_fields(rows[0]) is None:
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: header but no data rows")
    if len(rows[0]) < 2:
        raise DataError(f"{path}: a prediction needs at least 2 columns")
    return _soft_table(path, rows, len(rows[0]))


def _soft_table(path, rows: list[list[str]], width: int) -> np.ndarray:
    table = []
    for num, fields in enumerate(rows, start=1):
        if len(fields) != width:
            raise DataError(f"{path}: row {num} has {len(fields)} fields, expected {width}")
        vals = _float_fields(fields)
        if vals is None:
            raise DataError(f"{path}: row {num} has a non-numeric probability")
        table.append(vals)
    arr = np.array(table)
    sums = arr.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise DataError(f"{path}: rows must sum to 1 within 1e-6")
    loose = np.abs(sums - 1.0) > 1e-12
    arr[loose] /= sums[loose, None]
    try:
        return check_labeling(arr, None, width)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def labeling_text(g) -> str:
    arr = check_labeling(g)
    return "\n".join(",".join(FLOAT_FMT % v for v in row) for row in arr) + "\n"


def write_labeling(path, g) -> None:
    Path(path).write_text(labeling_text(g))


def write_hard_labels(path, labels) -> None:
    Path(path).write_text("\n".join(str(int(v)) for v in labels) + "\n")


def load_labeled_sample(path) -> LabeledSample:
    """Read a labeled sample: rows of ``point_index,class`` (0-based, 1-based)."""
    table = _int_table(path, "sample")
    if table.shape[1] != 2:
        raise DataError(f"{path}: expected 2 columns (index,label), found {table.shape[1]}")
    try:
        return LabeledSample(table[:, 0], table[:, 1])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_labeled_sample(path, sample: LabeledSample) -> None:
    rows = "\n".join(f"{i},{lab}" for i, lab in zip(sample.indices, sample.labels))
    Path(path).write_text(rows + "\n")


def _kv_lines(path) -> dict[str, str]:
    out = {}
    for num, line in enumerate(_data_lines(path), start=1):
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}: line {num} is not a 'key = value' line")
        out[key.strip()] = value.strip()
    return out


def _float_vector(path, fields: dict[str, str], key: str) -> np.ndarray:
    if key not in fields:
        raise DataError(f"{path}: missing '{key} = ...' line")
    vals = _float_fields(fields[key].split())
    if vals is None or not vals:
        raise DataError(f"{path}: '{key}' must list space-separated floats")
    return np.array(vals)


def load_bounds(path) -> Bounds:
    """Read interval bounds: lines ``b = ...`` and ``eps = ...``."""
    fields = _kv_lines(path)
    b = _float_vector(path, fields, "b")
    eps = _float_vector(path, fields, "eps")
    try:
        return Bounds(b, eps)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_bounds(path, bounds: Bounds) -> None:
    Path(path).write_text(bounds_text(bounds))


def bounds_text(bounds: Bounds) -> str:
    return (
        "b = " + " ".join(FLOAT_FMT % v for v in bounds.b)
        + "\neps = " + " ".join(FLOAT_FMT % v for v in bounds.eps)
        + "\n"
    )


def load_coin_params(path) -> CoinParams:
    """Read one-coin parameters: ``accuracy = ...`` and ``class_freq = ...`` lines."""
    fields = _kv_lines(path)
    acc = _float_vector(path, fields, "accuracy")
    freq = _float_vector(path, fields, "class_freq")
    try:
        return CoinParams(acc, freq)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_coin_params(path, params: CoinParams) -> None:
    Path(path).write_text(
        "accuracy = " + " ".join(FLOAT_FMT % v for v in params.accuracy)
        + "\nclass_freq = " + " ".join(FLOAT_FMT % v for v in params.class_freq)
        + "\n"
    )


@dataclass(frozen=True)
class RunReport:
    """Ordered ``key = value`` record of one command's outcome.

    Values are bools, ints, floats, or bare strings; the text form parses
    back to equal values (floats via 17-significant-digit round trip).
    """

    entries: tuple[tuple[str, object], ...] = field(default_factory=tuple)

    def get(self, key: str, default=None):
        for k, v in self.entries:
            if k == key:
                return v
        return default

    def keys(self) -> list[str]:
        return [k for k, _ in self.entries]


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % float(value)
    text = str(value)
    if "\n" in text or not text:
        raise ValueError(f"report value {text!r} cannot be serialized on one line")
    return text


def _parse_value(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def report_text(report: RunReport) -> str:
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in report.entries)


def write_report(path, report: RunReport) -> None:
    Path(path).write_text(report_text(report))


def read_report(path) -> RunReport:
    entries = []
    for num, line in enumerate(_data_lines(path), start=1):
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}: line {num} is not a 'key = value' line")
        entries.append((key.strip(), _parse_value(value.strip())))
    return RunReport(tuple(entries))


@dataclass(frozen=True)
class DatasetBundle:
    """Votes plus whatever side information a workflow loaded with them."""

    votes: VoteMatrix
    labels: np.ndarray | None = None
    sample: LabeledSample | None = None
    name: str = ""

    @property
    def k(self) -> int:
        return self.votes.k


def load_bundle(
    preds_path,
    k: int | None = None,
    labels_path=None,
    sample_path=None,
    name: str = "",
) -> DatasetBundle:
    """Load a vote file and optional labels / labeled-sample files."""
    votes = load_votes(preds_path, k)
    labels = None if labels_path is None else load_labels(labels_path, votes.k)
    if labels is not None and labels.shape[0] != votes.n:
        raise DataError(f"{labels_path}: {labels.shape[0]} labels for {votes.n} points")
    sample = None if sample_path is None else load_labeled_sample(sample_path)
    if sample is not None and sample.v and sample.indices.max() >= votes.n:
        raise DataError(f"{sample_path}: sample indices exceed the vote matrix")
    return DatasetBundle(votes, labels, sample, name or str(preds_path))
