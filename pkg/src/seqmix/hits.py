"""Threshold hit detection on acoustic-emission amplitude streams.

A hit opens on the first sample whose magnitude exceeds the threshold. It
closes once the signal has stayed at or below the threshold for HDT samples
in a row, ending at the last sample above threshold. A lockout of HLT
samples follows, during which crossings are ignored. The detector keeps its
state between chunks, so feeding a stream piecewise gives the same hits as
feeding it whole.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "HitDetectorConfig",
    "Hit",
    "HitDetector",
    "detect_hits",
    "read_samples",
    "iter_samples",
    "write_hits",
]

IDLE, ACTIVE, BLIND = "idle", "active", "blind"


def _to_samples(us: float, rate: float) -> int:
    # half-up rounding
    return int(math.floor(us * 1e-6 * rate + 0.5))


@dataclass(frozen=True)
class HitDetectorConfig:
    """Detector settings; times in microseconds, threshold in volts."""

    sample_rate: float
    threshold: float = 1.2e-3
    hdt_us: float = 1100.0
    hlt_us: float = 80.0

    def __post_init__(self):
        for name in ("sample_rate", "threshold", "hdt_us", "hlt_us"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.hdt_samples < 1:
            raise ValueError("HDT is shorter than one sample at this sample rate")

    @property
    def hdt_samples(self) -> int:
        return _to_samples(self.hdt_us, self.sample_rate)

    @property
    def hlt_samples(self) -> int:
        return _to_samples(self.hlt_us, self.sample_rate)


@dataclass(frozen=True)
class Hit:
    start_index: int
    end_index: int
    start_time: float
    truncated: bool = False


class HitDetector:
    """Incremental detector; call :meth:`process` per chunk, then :meth:`finish`."""

    def __init__(self, config: HitDetectorConfig, t0: float = 0.0):
        self.config = config
        self.t0 = float(t0)
        self._hdt = config.hdt_samples
        self._hlt = config.hlt_samples
        self._state = IDLE
        self._pos = 0  # global index of the next unseen sample
        self._start = -1
        self._last_above = -1
        self._below = 0
        self._blind_left = 0
        self._done = False

    @property
    def state(self) -> str:
        return self._state

    def _hit(self, start, end, truncated=False):
        return Hit(int(start), int(end), self.t0 + start / self.config.sample_rate, truncated)

    def process(self, chunk) -> list:
        """Consume samples; return the hits that closed inside this chunk."""
        if self._done:
            raise RuntimeError("detector already finished")
        x = np.asarray(chunk, dtype=float).reshape(-1)
        n = x.size
        base = self._pos
        above = np.flatnonzero(np.abs(x) > self.config.threshold)
        out = []
        p = 0
        while p < n:
            if self._state == BLIND:
                skip = min(self._blind_left, n - p)
                p += skip
                self._blind_left -= skip
                if self._blind_left == 0:
                    self._state = IDLE
                continue
            k = int(np.searchsorted(above, p))
            nxt = int(above[k]) if k < above.size else n
            if self._state == IDLE:
                if nxt == n:
                    break
                self._state = ACTIVE
                self._start = self._last_above = base + nxt
                self._below = 0
                p = nxt + 1
                continue
            # ACTIVE: samples p..nxt-1 are below threshold
            gap = nxt - p
            if self._below + gap >= self._hdt:
                close = p + (self._hdt - self._below) - 1
                out.append(self._hit(self._start, self._last_above))
                self._state = BLIND if self._hlt > 0 else IDLE
                self._blind_left = self._hlt
                p = close + 1
            elif nxt < n:
                self._below = 0
                self._last_above = base + nxt
                p = nxt + 1
            else:
                self._below += gap
                p = n
        self._pos = base + n
        return out

    def finish(self) -> list:
        """Close a hit left open at end of stream (at the final sample, flagged truncated)."""
        if self._done:
            return []
        self._done = True
        if self._state == ACTIVE:
            self._state = IDLE
            return [self._hit(self._start, self._pos - 1, truncated=True)]
        return []


def detect_hits(samples, config: HitDetectorConfig, chunk_size: int | None = None, t0: float = 0.0) -> list:
    """Hits in ``samples``, an array or an iterable of chunks."""
    det = HitDetector(config, t0)
    hits = []
    if isinstance(samples, np.ndarray) or chunk_size is not None:
        x = np.asarray(samples, dtype=float).reshape(-1)
        step = x.size if chunk_size is None else int(chunk_size)
        if step < 1:
            raise ValueError("chunk_size must be >= 1")
        for s in range(0, max(x.size, 1), step):
            hits.extend(det.process(x[s:s + step]))
    else:
        for chunk in samples:
            hits.extend(det.process(chunk))
    hits.extend(det.finish())
    return hits


def _fmt(path, fmt):
    if fmt is None:
        fmt = "csv" if Path(path).suffix.lower() in (".csv", ".txt") else "f32"
    if fmt not in ("csv", "f32"):
        raise ValueError(f"unknown sample format {fmt!r}")
    return fmt


def read_samples(path, fmt: str | None = None) -> np.ndarray:
    """Single-column CSV (optional header) or raw little-endian float32."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if _fmt(path, fmt) == "f32":
        return np.fromfile(path, dtype="<f4").astype(float)
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            try:
                values.append(float(row[0]))
            except ValueError:
                if lineno == 1 and not values:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: not a number: {row[0]!r}") from None
    return np.asarray(values, dtype=float)


def iter_samples(path, fmt: str | None = None, chunk_size: int = 1 << 20):
    """Yield float arrays of at most ``chunk_size`` samples."""
    if _fmt(path, fmt) == "csv":
        x = read_samples(path, "csv")
        for s in range(0, x.size, chunk_size):
            yield x[s:s + chunk_size]
        return
    with open(path, "rb") as fh:
        while True:
            buf = fh.read(4 * chunk_size)
            if not buf:
                break
            if len(buf) % 4:
                raise ValueError(f"{path}: size is not a multiple of 4 bytes")
            yield np.frombuffer(buf, dtype="<f4").astype(float)


def write_hits(hits, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_time", "start_index", "end_index", "truncated"])
        for h in hits:
            w.writerow([repr(float(h.start_time)), h.start_index, h.end_index, int(h.truncated)])
