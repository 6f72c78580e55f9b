"""Aligned X/Y/Z functional samples and their CSV representations.

Two file shapes are supported:

``long_csv``
    One observation per row with columns ``subject_id, channel, time, value``
    (column order free, header required).  Suits sensor streams where every
    subject has its own sampling times.
``wide_csv``
    One row per subject and channel: ``subject_id, channel, <t_1>, <t_2>, ...``
    where the header cells after the first two are the observation times.
    Suits yearly indicator panels observed on a common grid.

Empty cells and ``NA``/``nan`` values mark an observation as missing; the
subject is then dropped from any triple that uses that channel.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from funcci.errors import EmptyDatasetError, InvalidArgumentError, ParseError
from funcci.smoothing import FunctionalSample

MISSING_TOKENS = {"", "na", "nan", "null", "none", ".."}
LONG_COLUMNS = ("subject_id", "channel", "time", "value")


@dataclass(frozen=True)
class TripleDataset:
    """Subjects observed on three channels, aligned by position.

    ``x[i]``, ``y[i]`` and ``z[i]`` belong to the same subject.
    """

    x: Tuple[FunctionalSample, ...]
    y: Tuple[FunctionalSample, ...]
    z: Tuple[FunctionalSample, ...]
    names: Tuple[str, str, str] = ("X", "Y", "Z")
    dropped: int = 0

    def __post_init__(self):
        x, y, z = tuple(self.x), tuple(self.y), tuple(self.z)
        if not (len(x) == len(y) == len(z)):
            raise InvalidArgumentError("channels must hold the same number of subjects")
        for a, b, c in zip(x, y, z):
            if not (a.subject_id == b.subject_id == c.subject_id):
                raise InvalidArgumentError(
                    f"subject ids misaligned: {a.subject_id!r}, {b.subject_id!r}, {c.subject_id!r}"
                )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def subject_ids(self) -> List:
        return [s.subject_id for s in self.x]

    @property
    def channels(self) -> Tuple[Tuple[FunctionalSample, ...], ...]:
        return (self.x, self.y, self.z)

    def common_grid(self) -> Optional[np.ndarray]:
        """The shared, equally spaced observation grid, or None if the schedule is unbalanced."""
        if self.n == 0:
            return None
        t0 = self.x[0].times
        if t0.size < 2:
            return None
        for channel in self.channels:
            for s in channel:
                if s.times.shape != t0.shape or not np.array_equal(s.times, t0):
                    return None
        steps = np.diff(t0)
        if np.max(np.abs(steps - steps.mean())) > 1e-9 * (t0[-1] - t0[0]):
            return None
        return t0

    def is_balanced(self) -> bool:
        return self.common_grid() is not None

    def permuted(self, order: Sequence[int]) -> "TripleDataset":
        order = list(order)
        if sorted(order) != list(range(self.n)):
            raise InvalidArgumentError("order must be a permutation of range(n)")
        return TripleDataset(
            tuple(self.x[i] for i in order),
            tuple(self.y[i] for i in order),
            tuple(self.z[i] for i in order),
            self.names,
            self.dropped,
        )

    def swapped_xy(self) -> "TripleDataset":
        names = (self.names[1], self.names[0], self.names[2])
        return TripleDataset(self.y, self.x, self.z, names, self.dropped)

    def summary(self) -> Dict:
        """Sample size and per-channel observation-count statistics."""
        out = {"n": self.n, "dropped": self.dropped, "balanced": self.is_balanced(), "channels": {}}
        for name, channel in zip(self.names, self.channels):
            m = np.array([s.m for s in channel]) if channel else np.zeros(1, dtype=int)
            out["channels"][name] = {
                "m_min": int(m.min()),
                "m_max": int(m.max()),
                "m_mean": float(m.mean()),
            }
        return out


@dataclass
class Panel:
    """Every channel of a data file, keyed ``channel -> subject -> (times, values)``.

    ``missing`` lists (channel, subject) pairs holding at least one missing value.
    ``time_offset`` and ``time_scale`` record the affine map applied to the time
    axis (``t_new = (t_old - offset) / scale``).
    """

    series: Dict[str, Dict[str, Tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)
    missing: set = field(default_factory=set)
    time_offset: float = 0.0
    time_scale: float = 1.0

    @property
    def channel_names(self) -> List[str]:
        return sorted(self.series)

    def subjects(self) -> List[str]:
        ids = set()
        for by_subject in self.series.values():
            ids.update(by_subject)
        return sorted(ids)

    def triple(self, x: str = "X", y: str = "Y", z: str = "Z") -> TripleDataset:
        """Assemble the subjects complete on channels ``x``, ``y`` and ``z``."""
        for name in (x, y, z):
            if name not in self.series:
                raise EmptyDatasetError(f"channel {name!r} not present in the data")
        if len({x, y, z}) < 3:
            raise InvalidArgumentError("the three channels must be distinct")
        kept, dropped = [], 0
        for sid in self.subjects():
            complete = all(
                sid in self.series[c] and (c, sid) not in self.missing for c in (x, y, z)
            )
            if complete:
                kept.append(sid)
            else:
                dropped += 1
        if not kept:
            raise EmptyDatasetError(f"no subject has complete observations on {x}, {y}, {z}")
        samples = [
            tuple(FunctionalSample(sid, *self.series[c][sid]) for sid in kept) for c in (x, y, z)
        ]
        return TripleDataset(*samples, names=(x, y, z), dropped=dropped)


def _parse_float(text):
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def _is_missing(text):
    return text.strip().lower() in MISSING_TOKENS


def _rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            yield reader.line_num, [c.strip() for c in row]


def read_panel(path, fmt: str = "long_csv") -> Panel:
    """Parse a data file into a Panel.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    ParseError
        On a missing header, a wrong field count, an unparseable time or a
        duplicated observation.  The message carries the line number.
    """
    if fmt == "long_csv":
        raw, missing = _read_long(path)
    elif fmt == "wide_csv":
        raw, missing = _read_wide(path)
    else:
        raise InvalidArgumentError(f"unknown format {fmt!r}; expected long_csv or wide_csv")
    return _finalize(raw, missing)


def _read_long(path):
    rows = _rows(path)
    try:
        line, header = next(rows)
    except StopIteration:
        raise ParseError("file is empty; a header row is required", line=1) from None
    cols = [h.lower() for h in header]
    if sorted(cols) != sorted(LONG_COLUMNS):
        raise ParseError(f"header must name the columns {', '.join(LONG_COLUMNS)}", line=line)
    idx = {c: cols.index(c) for c in LONG_COLUMNS}
    raw: Dict[str, Dict[str, Dict[float, float]]] = {}
    missing = set()
    for line, row in rows:
        if len(row) != len(cols):
            raise ParseError(f"expected {len(cols)} fields, found {len(row)}", line=line)
        sid, channel = row[idx["subject_id"]], row[idx["channel"]]
        if not sid or not channel:
            raise ParseError("subject_id and channel must be nonempty", line=line)
        t = _parse_float(row[idx["time"]])
        if t is None:
            raise ParseError(f"unparseable time {row[idx['time']]!r}", line=line)
        cell = raw.setdefault(channel, {}).setdefault(sid, {})
        if t in cell:
            raise ParseError(f"duplicate observation for ({sid}, {channel}, {t})", line=line)
        text = row[idx["value"]]
        v = None if _is_missing(text) else _parse_float(text)
        if v is None:
            missing.add((channel, sid))
            v = math.nan
        cell[t] = v
    return raw, missing


def _read_wide(path):
    rows = _rows(path)
    try:
        line, header = next(rows)
    except StopIteration:
        raise ParseError("file is empty; a header row is required", line=1) from None
    if len(header) < 3 or [h.lower() for h in header[:2]] != ["subject_id", "channel"]:
        raise ParseError("header must start with subject_id,channel followed by time columns", line=line)
    times = []
    for h in header[2:]:
        t = _parse_float(h)
        if t is None:
            raise ParseError(f"time column header {h!r} is not a number", line=line)
        times.append(t)
    if len(set(times)) != len(times):
        raise ParseError("duplicate time columns in header", line=line)
    raw: Dict[str, Dict[str, Dict[float, float]]] = {}
    missing = set()
    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line)
        sid, channel = row[0], row[1]
        if not sid or not channel:
            raise ParseError("subject_id and channel must be nonempty", line=line)
        by_subject = raw.setdefault(channel, {})
        if sid in by_subject:
            raise ParseError(f"duplicate row for ({sid}, {channel})", line=line)
        cell = {}
        for t, text in zip(times, row[2:]):
            v = None if _is_missing(text) else _parse_float(text)
            if v is None:
                missing.add((channel, sid))
                v = math.nan
            cell[t] = v
        by_subject[sid] = cell
    return raw, missing


def _finalize(raw, missing) -> Panel:
    all_times = [t for by_subject in raw.values() for cell in by_subject.values() for t in cell]
    if not all_times:
        raise EmptyDatasetError("file contains no observations")
    lo, hi = min(all_times), max(all_times)
    offset, scale = 0.0, 1.0
    if lo < 0 or hi > 1:
        if hi == lo:
            offset, scale = lo, 1.0
        else:
            offset, scale = lo, hi - lo
    panel = Panel(missing=set(missing), time_offset=offset, time_scale=scale)
    for channel, by_subject in raw.items():
        panel.series[channel] = {}
        for sid, cell in by_subject.items():
            ts = np.array(sorted(cell), dtype=float)
            vs = np.array([cell[t] for t in sorted(cell)], dtype=float)
            ts = (ts - offset) / scale
            # Rescaling can push endpoints a hair outside [0, 1].
            ts = np.clip(ts, 0.0, 1.0)
            panel.series[channel][sid] = (ts, vs)
    return panel


def ingest(path, fmt: str = "long_csv", x: str = "X", y: str = "Y", z: str = "Z") -> TripleDataset:
    """Read a data file and assemble the X/Y/Z triple, dropping incomplete subjects."""
    return read_panel(path, fmt).triple(x, y, z)


def write_long_csv(data: TripleDataset, path) -> None:
    """Write every observation as one row; floats use ``repr`` so they round-trip exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_COLUMNS)
        for name, channel in zip(data.names, data.channels):
            for s in channel:
                for t, v in zip(s.times, s.values):
                    w.writerow([s.subject_id, name, repr(float(t)), repr(float(v))])


def write_wide_csv(data: TripleDataset, path) -> None:
    grid = data.common_grid()
    if grid is None:
        raise InvalidArgumentError("wide_csv needs a balanced dataset")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "channel"] + [repr(float(t)) for t in grid])
        for name, channel in zip(data.names, data.channels):
            for s in channel:
                w.writerow([s.subject_id, name] + [repr(float(v)) for v in s.values])
