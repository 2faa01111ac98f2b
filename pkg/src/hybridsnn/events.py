"""Event ingestion and the two input encodings.

Events are stored column-wise (``t``, ``x``, ``y``, ``p`` arrays) rather than
as a list of objects; ``EventStream.events`` materializes ``Event`` tuples on
demand. Timestamps are integer microseconds and all time windows are
half-open ``[start, end)``.
"""

import logging
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ContractError, GeometryError, ParseError

log = logging.getLogger(__name__)

BINARY_MAGIC = b"EVT0"
_HEADER = struct.Struct("<4sHHQ")
RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
assert RECORD_DTYPE.itemsize == 13


class Event(NamedTuple):
    t: int
    x: int
    y: int
    polarity: int


@dataclass
class EventStream:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    resorted: bool = False

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ContractError("event columns differ in length")
        if n:
            if self.t.min() < 0:
                raise ContractError("negative timestamp")
            bad = (self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise GeometryError(
                    f"event {i} at ({self.x[i]}, {self.y[i]}) outside {self.width}x{self.height} sensor"
                )
            if not np.isin(self.p, (0, 1)).all():
                raise ContractError("polarity must be 0 or 1")
            if (np.diff(self.t) < 0).any():
                order = np.argsort(self.t, kind="stable")
                self.t, self.x, self.y, self.p = self.t[order], self.x[order], self.y[order], self.p[order]
                self.resorted = True
                log.warning("event timestamps were not monotonic; stream re-sorted")

    @classmethod
    def from_events(cls, events, width, height):
        arr = np.array([tuple(e) for e in events], dtype=np.int64).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height)

    @classmethod
    def empty(cls, width, height):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height)

    @classmethod
    def concat(cls, chunks):
        """Join streams ingested piecewise (e.g. read in chunks from a live source)."""
        chunks = list(chunks)
        if not chunks:
            raise ContractError("no chunks to concatenate")
        w, h = chunks[0].width, chunks[0].height
        if any((c.width, c.height) != (w, h) for c in chunks):
            raise ContractError("chunks disagree on sensor geometry")
        out = cls(*(np.concatenate([getattr(c, a) for c in chunks]) for a in "txyp"), w, h)
        out.resorted = out.resorted or any(c.resorted for c in chunks)
        return out

    def __len__(self):
        return len(self.t)

    @property
    def events(self):
        return [Event(*map(int, r)) for r in zip(self.t, self.x, self.y, self.p)]

    def window(self, t_start, t_end):
        """Index range of events with ``t_start <= t < t_end``."""
        return np.searchsorted(self.t, t_start, "left"), np.searchsorted(self.t, t_end, "left")


def load_events(path, format="csv", width=None, height=None):
    """Read an event file. CSV needs ``width``/``height``; binary carries them."""
    if format == "csv":
        if width is None or height is None:
            raise ContractError("CSV event files need an explicit sensor width and height")
        return _load_csv(path, width, height)
    if format == "binary":
        return _load_binary(path, width, height)
    raise ContractError(f"unknown event format {format!r}")


def _load_csv(path, width, height):
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if lineno == 1 and not line[0].isdigit():
                continue  # header
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields t_us,x,y,p, got {len(parts)}")
            try:
                rows.append([int(v) for v in parts])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer field in {line!r}") from None
    if not rows:
        return EventStream.empty(width, height)
    arr = np.array(rows, dtype=np.int64)
    return EventStream(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height)


def _load_binary(path, width=None, height=None):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ParseError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, w, h, count = _HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r} at offset 0")
    if (width is not None and width != w) or (height is not None and height != h):
        raise GeometryError(f"{path}: file geometry {w}x{h} differs from requested {width}x{height}")
    expected = _HEADER.size + count * RECORD_DTYPE.itemsize
    if len(raw) != expected:
        raise ParseError(f"{path}: header declares {count} records ({expected} bytes), file has {len(raw)} bytes")
    rec = np.frombuffer(raw, dtype=RECORD_DTYPE, count=count, offset=_HEADER.size)
    bad = np.flatnonzero(rec["p"] > 1)
    if len(bad):
        off = _HEADER.size + int(bad[0]) * RECORD_DTYPE.itemsize
        raise ParseError(f"{path}: invalid polarity in record at offset {off}")
    return EventStream(rec["t"].astype(np.int64), rec["x"], rec["y"], rec["p"], w, h)


def save_events(stream, path, format="csv"):
    if format == "csv":
        with open(path, "w") as f:
            for r in zip(stream.t, stream.x, stream.y, stream.p):
                f.write("%d,%d,%d,%d\n" % r)
    elif format == "binary":
        rec = np.empty(len(stream), dtype=RECORD_DTYPE)
        rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
        with open(path, "wb") as f:
            f.write(_HEADER.pack(BINARY_MAGIC, stream.width, stream.height, len(stream)))
            f.write(rec.tobytes())
    else:
        raise ContractError(f"unknown event format {format!r}")


@dataclass
class DenseRepresentation:
    tensor: np.ndarray
    t_ref: int
    n_events: int = 0
    # fewer than the requested number of events were available
    short: bool = False
    # no events precede t_ref
    empty: bool = False
    kind: str = "event_histogram"


@dataclass
class SpikeTensor:
    tensor: np.ndarray
    window: tuple = field(default=(0, 0))

    @property
    def total(self):
        return float(self.tensor.sum())


def build_dense_histogram(stream, t_end, count=7500, bins=10):
    """Stack ``bins`` two-channel polarity histograms of the last ``count`` events before ``t_end``.

    Bins split ``[t_first, t_end)`` into equal durations, oldest first;
    channel ``2*b + p`` holds polarity ``p`` of bin ``b``.
    """
    shape = (2 * bins, stream.height, stream.width)
    _, hi = stream.window(0, t_end)
    lo = max(0, hi - count)
    if hi == lo:
        return DenseRepresentation(np.zeros(shape), t_end, 0, short=True, empty=True)
    t = stream.t[lo:hi]
    t0 = int(t[0])
    span = int(t_end) - t0
    # integer arithmetic: no float drift at bin edges
    b = ((t - t0) * bins) // span
    chan = 2 * b + stream.p[lo:hi]
    flat = (chan * stream.height + stream.y[lo:hi]) * stream.width + stream.x[lo:hi]
    hist = kernels.accumulate(flat, int(np.prod(shape))).reshape(shape)
    n = hi - lo
    return DenseRepresentation(hist, t_end, n, short=n < count)


def slice_spike_tensor(stream, t_start, t_end):
    """Per-pixel OFF/ON event counts in ``[t_start, t_end)`` as a 2xHxW tensor."""
    if not t_start < t_end:
        raise ContractError(f"empty window [{t_start}, {t_end})")
    lo, hi = stream.window(t_start, t_end)
    size = 2 * stream.height * stream.width
    flat = (stream.p[lo:hi] * stream.height + stream.y[lo:hi]) * stream.width + stream.x[lo:hi]
    counts = kernels.accumulate(flat, size).reshape(2, stream.height, stream.width)
    return SpikeTensor(counts, (t_start, t_end))
