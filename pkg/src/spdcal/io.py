"""File formats: measurement CSVs, simulation configs and fit reports.

Measurement CSV::

    power_w,sample_rates_hz          (or  mu,sample_rates_hz)
    3.6e-09,14012.0;13977.0;...

Extra columns after the first two are carried through untouched, so a
corrected CSV can be read back as input.  Output is locale-independent:
floats use ``repr`` and lines end in LF.
"""
import csv
import io
import json
import math
from pathlib import Path

from .exceptions import CalibrationError, EmptyInput
from .fitting import MeasurementPoint

INPUT_HEADERS = (("power_w", "sample_rates_hz"), ("mu", "sample_rates_hz"))


class CsvFormatError(CalibrationError):
    """Malformed measurement CSV; the message names the file line."""


def fmt(x):
    """Exact, locale-free float rendering."""
    if x is None:
        return ""
    return repr(float(x))


def fmt6(x):
    """Six significant digits, for human-facing tables."""
    return format(float(x), ".6g")


def read_rows(path):
    """Header and data rows of a measurement CSV as ``(header, [(line_no, row), ...])``."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    rows = [(reader.line_num, row) for row in reader if any(cell.strip() for cell in row)]
    if not rows:
        raise EmptyInput(f"{path}: no header")
    (_, header), data = rows[0], rows[1:]
    header = [h.strip() for h in header]
    if tuple(header[:2]) not in INPUT_HEADERS:
        raise CsvFormatError(
            f"{path}:1: header must start with 'power_w,sample_rates_hz' or 'mu,sample_rates_hz', "
            f"got {','.join(header)!r}"
        )
    if not data:
        raise EmptyInput(f"{path}: no data rows")
    return header, data


def parse_point(header, line_no, row, path="<csv>"):
    if len(row) < 2:
        raise CsvFormatError(f"{path}:{line_no}: expected at least 2 columns, got {len(row)}")
    try:
        x = float(row[0])
    except ValueError:
        raise CsvFormatError(f"{path}:{line_no}: bad {header[0]} value {row[0]!r}") from None
    try:
        samples = [float(s) for s in row[1].split(";") if s.strip()]
    except ValueError:
        raise CsvFormatError(f"{path}:{line_no}: bad sample list {row[1]!r}") from None
    if not samples or not all(math.isfinite(s) for s in samples):
        raise CsvFormatError(f"{path}:{line_no}: sample list must hold finite numbers")
    try:
        if header[0] == "power_w":
            return MeasurementPoint(samples, power_w=x)
        return MeasurementPoint(samples, mu=x)
    except ValueError as exc:
        raise CsvFormatError(f"{path}:{line_no}: {exc}") from None


def read_points(path):
    """``(kind, points)`` with ``kind`` either ``'power_w'`` or ``'mu'``."""
    header, data = read_rows(path)
    return header[0], [parse_point(header, n, row, path) for n, row in data]


def read_dark(path):
    """The single laser-off point of a dark CSV."""
    header, data = read_rows(path)
    if len(data) != 1:
        raise CsvFormatError(f"{path}: dark file must hold exactly one data row, got {len(data)}")
    (n, row), = data
    if len(row) < 2:
        raise CsvFormatError(f"{path}:{n}: expected at least 2 columns, got {len(row)}")
    try:
        samples = [float(s) for s in row[1].split(";") if s.strip()]
    except ValueError:
        raise CsvFormatError(f"{path}:{n}: bad sample list {row[1]!r}") from None
    if not samples:
        raise CsvFormatError(f"{path}:{n}: empty sample list")
    return MeasurementPoint(samples)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def point_row(point, kind):
    x = point.power_w if kind == "power_w" else point.mu
    return [fmt(x), ";".join(fmt(s) for s in point.samples)]


def write_series(path, series, dark_path=None):
    """Write a series in the input schema; the dark point goes to ``dark_path`` if given."""
    kind = "power_w" if series.uses_power else "mu"
    write_csv(path, [kind, "sample_rates_hz"], [point_row(p, kind) for p in series.points])
    if dark_path is not None:
        write_csv(dark_path, [kind, "sample_rates_hz"], [["0.0", ";".join(fmt(s) for s in series.dark.samples)]])


def load_config(path):
    """JSON or TOML (by extension) into a dict."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, allow_nan=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
