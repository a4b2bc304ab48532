"""Correlation power analysis on the first-round S-box output.

For each key byte the attacker predicts ``HW(sbox(pt ^ guess))`` for all 256
guesses and correlates the prediction with every sample. The guess whose
prediction correlates best (largest ``|r|`` over samples) is taken as the
key byte.

The hypothesis for a trace depends only on its plaintext byte, so the
accumulator stores, per byte position, the trace count and the per-sample
sum of measurements for each of the 256 plaintext values. ``sum_x``,
``sum_xx`` and ``sum_xy`` for every guess follow from those by a 256x256
table product. All stored sums are plain additions, so partitions of a
campaign can be accumulated independently and merged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .aes import SBOX, attack_point_value
from .leakage import HW_TABLE
from .tracestore import TraceReader, TraceRecord

log = logging.getLogger(__name__)

N_GUESSES = 256


def hypothetical_intermediate(pt_byte: int, guess: int) -> int:
    return attack_point_value(pt_byte, guess)


def hypothetical_power(intermediate: int, model: str = "hamming_weight", reference: int = 0) -> float:
    """Predicted power of an intermediate. Distance mode measures it against ``reference``."""
    if model == "hamming_weight":
        return float(HW_TABLE[intermediate & 0xFF])
    if model == "hamming_distance":
        return float(HW_TABLE[(intermediate ^ reference) & 0xFF])
    raise ValueError(f"unknown power model {model!r}")


def hypothesis_table(model: str = "hamming_weight", reference: int = 0) -> np.ndarray:
    """``table[g, v]`` = hypothetical power for guess ``g`` and plaintext byte ``v``."""
    g = np.arange(N_GUESSES)[:, None]
    v = np.arange(256)[None, :]
    inter = SBOX[g ^ v]
    if model == "hamming_distance":
        inter = inter ^ np.uint8(reference)
    elif model != "hamming_weight":
        raise ValueError(f"unknown power model {model!r}")
    return HW_TABLE[inter].astype(np.int64)


class PearsonResult(NamedTuple):
    r: float
    degenerate: bool


def pearson(x, y) -> PearsonResult:
    """Sample Pearson coefficient. Zero variance in either input gives ``r = 0``, flagged."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D vectors of equal length")
    if len(x) < 2:
        raise ValueError("pearson needs at least 2 points")
    # test constancy directly: the mean of a constant vector may not round back to it
    if np.all(x == x[0]) or np.all(y == y[0]):
        return PearsonResult(0.0, True)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return PearsonResult(float(np.clip(r, -1.0, 1.0)), False)


class GeometryError(ValueError):
    pass


def _grouped_sum(keys: np.ndarray, values: np.ndarray):
    order = np.argsort(keys, kind="stable")
    k = keys[order]
    starts = np.flatnonzero(np.concatenate(([True], k[1:] != k[:-1])))
    return k[starts], np.add.reduceat(values[order], starts, axis=0)


class CpaAccumulator:
    """Mergeable CPA sufficient statistics for one or more key-byte positions."""

    def __init__(self, n_samples: int, byte_positions: Sequence[int] = range(16),
                 model: str = "hamming_weight", reference: int = 0):
        self.n_samples = int(n_samples)
        self.byte_positions = tuple(byte_positions)
        self.model = model
        self.reference = reference
        p = len(self.byte_positions)
        self.n = 0
        self.counts = np.zeros((p, 256), dtype=np.int64)
        self.grouped = np.zeros((p, 256, self.n_samples), dtype=np.float64)
        self.sum_y = np.zeros(self.n_samples, dtype=np.float64)
        self.sum_yy = np.zeros(self.n_samples, dtype=np.float64)
        self._table = None

    @property
    def table(self) -> np.ndarray:
        if self._table is None:
            self._table = hypothesis_table(self.model, self.reference)
        return self._table

    def _check_compatible(self, other: "CpaAccumulator"):
        if (other.n_samples, other.byte_positions, other.model, other.reference) != (
                self.n_samples, self.byte_positions, self.model, self.reference):
            raise GeometryError("accumulators have different geometry or model")

    def update(self, plaintexts: np.ndarray, samples: np.ndarray) -> None:
        """Add a batch of traces: ``plaintexts`` (n, 16) uint8, ``samples`` (n, n_samples)."""
        pts = np.asarray(plaintexts, dtype=np.uint8).reshape(-1, 16)
        y = np.asarray(samples, dtype=np.float64)
        if y.ndim != 2 or y.shape[1] != self.n_samples or len(y) != len(pts):
            raise GeometryError(
                f"expected samples of shape ({len(pts)}, {self.n_samples}), got {y.shape}"
            )
        if len(pts) == 0:
            return
        self.n += len(pts)
        self.sum_y += y.sum(axis=0)
        self.sum_yy += (y * y).sum(axis=0)
        for i, b in enumerate(self.byte_positions):
            values, sums = _grouped_sum(pts[:, b], y)
            self.counts[i] += np.bincount(pts[:, b], minlength=256)
            self.grouped[i, values] += sums

    def accumulate(self, trace: TraceRecord) -> None:
        self.update(np.frombuffer(trace.plaintext, np.uint8)[None, :],
                    np.asarray(trace.samples)[None, :])

    def merge(self, other: "CpaAccumulator") -> "CpaAccumulator":
        """New accumulator covering the traces of both operands."""
        self._check_compatible(other)
        out = CpaAccumulator(self.n_samples, self.byte_positions, self.model, self.reference)
        out.n = self.n + other.n
        out.counts = self.counts + other.counts
        out.grouped = self.grouped + other.grouped
        out.sum_y = self.sum_y + other.sum_y
        out.sum_yy = self.sum_yy + other.sum_yy
        return out

    def _index(self, byte_pos: int) -> int:
        try:
            return self.byte_positions.index(byte_pos)
        except ValueError:
            raise GeometryError(f"byte position {byte_pos} not accumulated") from None

    def sums(self, byte_pos: int) -> dict[str, np.ndarray | int]:
        """Per (guess, sample) running sums: n, sum_x, sum_y, sum_xx, sum_yy, sum_xy."""
        i = self._index(byte_pos)
        t = self.table
        c = self.counts[i]
        return {
            "n": self.n,
            "sum_x": t @ c,
            "sum_xx": (t * t) @ c,
            "sum_y": self.sum_y,
            "sum_yy": self.sum_yy,
            "sum_xy": t.astype(np.float64) @ self.grouped[i],
        }


def accumulate(acc: CpaAccumulator, trace: TraceRecord) -> None:
    acc.accumulate(trace)


@dataclass
class Correlation:
    r: np.ndarray                  # (256, n_samples)
    degenerate_samples: np.ndarray  # (n_samples,) bool
    degenerate_guesses: np.ndarray  # (256,) bool


def correlate_all(acc: CpaAccumulator, byte_pos: int) -> Correlation:
    """Pearson r between each guess's hypothesis and each sample.

    Zero-variance samples or hypotheses get ``r = 0`` and are flagged. An
    empty accumulator gives an all-degenerate result; a single trace is an error.
    """
    if acc.n == 0:
        return Correlation(np.zeros((256, acc.n_samples)), np.ones(acc.n_samples, bool),
                           np.ones(256, bool))
    if acc.n < 2:
        raise ValueError(f"correlation needs at least 2 traces, have {acc.n}")
    s = acc.sums(byte_pos)
    n = acc.n
    var_x = n * s["sum_xx"] - s["sum_x"] ** 2  # exact in int64
    var_y = n * s["sum_yy"] - s["sum_y"] ** 2
    deg_y = var_y <= 1e-12 * n * np.abs(s["sum_yy"])
    deg_x = var_x <= 0
    cov = n * s["sum_xy"] - np.outer(s["sum_x"].astype(np.float64), s["sum_y"])
    denom = np.sqrt(np.outer(np.where(deg_x, 1, var_x).astype(np.float64),
                             np.where(deg_y, 1.0, var_y)))
    r = np.clip(cov / denom, -1.0, 1.0)
    r[deg_x, :] = 0.0
    r[:, deg_y] = 0.0
    return Correlation(r, deg_y, deg_x)


class GuessScore(NamedTuple):
    guess: int
    peak_r: float
    peak_sample: int


def rank_guesses(corr: np.ndarray, sample_offset: int = 0) -> list[GuessScore]:
    """Guesses sorted by peak ``|r|`` over samples, descending; ties go to the lower guess."""
    corr = np.asarray(corr)
    if corr.ndim != 2 or corr.shape[0] != N_GUESSES:
        raise ValueError(f"expected a (256, n_samples) matrix, got {corr.shape}")
    mag = np.abs(corr)
    peak_idx = mag.argmax(axis=1)
    peaks = mag[np.arange(N_GUESSES), peak_idx]
    order = np.lexsort((np.arange(N_GUESSES), -peaks))
    return [
        GuessScore(int(g), float(corr[g, peak_idx[g]]), int(peak_idx[g]) + sample_offset)
        for g in order
    ]


@dataclass
class ByteResult:
    position: int
    ranking: list[GuessScore]
    true_rank: int | None = None

    @property
    def best(self) -> GuessScore:
        return self.ranking[0]

    def rank_of(self, guess: int) -> int:
        for rank, score in enumerate(self.ranking):
            if score.guess == guess:
                return rank
        raise KeyError(guess)


@dataclass
class KeyRecoveryReport:
    n_traces: int
    window: tuple[int, int]
    model: str
    bytes: list[ByteResult]
    degenerate_samples: list[int] = field(default_factory=list)
    true_key: bytes | None = None
    spec: dict | None = None

    @property
    def recovered_key(self) -> bytes:
        return bytes(b.best.guess for b in self.bytes)

    @property
    def ranks(self) -> list[int] | None:
        if self.true_key is None:
            return None
        return [b.true_rank for b in self.bytes]

    def to_dict(self) -> dict:
        out = {
            "recovered_key": self.recovered_key.hex(),
            "true_key": None if self.true_key is None else self.true_key.hex(),
            "ranks": self.ranks,
            "n_traces": self.n_traces,
            "window": list(self.window),
            "model": self.model,
            "degenerate_samples": self.degenerate_samples,
            "bytes": [
                {
                    "position": b.position,
                    "true_rank": b.true_rank,
                    "guesses": [
                        {"guess": s.guess, "peak_r": s.peak_r, "peak_sample": s.peak_sample, "rank": k}
                        for k, s in enumerate(b.ranking)
                    ],
                }
                for b in self.bytes
            ],
        }
        if self.spec is not None:
            out["spec"] = self.spec
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def report_from_accumulator(acc: CpaAccumulator, truth: bytes | None = None,
                            sample_offset: int = 0) -> KeyRecoveryReport:
    if acc.byte_positions != tuple(range(16)):
        raise GeometryError("full-key report needs all 16 byte positions")
    results = []
    degenerate = np.zeros(acc.n_samples, dtype=bool)
    for b in range(16):
        corr = correlate_all(acc, b)
        degenerate |= corr.degenerate_samples
        res = ByteResult(b, rank_guesses(corr.r, sample_offset))
        if truth is not None:
            res.true_rank = res.rank_of(truth[b])
        results.append(res)
    deg = [int(i) + sample_offset for i in np.flatnonzero(degenerate)]
    if deg:
        log.warning("%d zero-variance samples scored as r=0", len(deg))
    return KeyRecoveryReport(
        n_traces=acc.n,
        window=(sample_offset, sample_offset + acc.n_samples),
        model=acc.model,
        bytes=results,
        degenerate_samples=deg,
        true_key=None if truth is None else bytes(truth),
    )


def _resolve_window(window, n_samples: int) -> tuple[int, int]:
    if window is None:
        return 0, n_samples
    a, b = window
    if not 0 <= a < b <= n_samples:
        raise ValueError(f"window {a}:{b} outside 0:{n_samples}")
    return a, b


def attack_arrays(plaintexts, samples, truth: bytes | None = None, window=None,
                  model: str = "hamming_weight", reference: int = 0) -> KeyRecoveryReport:
    """Run the attack on in-memory traces."""
    samples = np.asarray(samples)
    a, b = _resolve_window(window, samples.shape[1])
    acc = CpaAccumulator(b - a, model=model, reference=reference)
    acc.update(plaintexts, samples[:, a:b])
    return report_from_accumulator(acc, truth, a)


def accumulate_file(path, start: int, stop: int, window: tuple[int, int],
                    model: str = "hamming_weight", reference: int = 0,
                    batch_size: int = 4096) -> CpaAccumulator:
    """Accumulate records ``start..stop`` of a trace file (one partition)."""
    a, b = window
    acc = CpaAccumulator(b - a, model=model, reference=reference)
    with TraceReader(path) as reader:
        for batch in reader.iter_batches(batch_size, start, stop):
            acc.update(batch.plaintexts, batch.samples[:, a:b])
    return acc


def partitions(n: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous, near-equal split of ``range(n)``."""
    parts = max(1, min(parts, n)) if n else 1
    edges = [n * i // parts for i in range(parts + 1)]
    return [(edges[i], edges[i + 1]) for i in range(parts)]


def recover_key(path, truth: bytes | None = None, window=None, model: str = "hamming_weight",
                reference: int = 0, jobs: int = 1, batch_size: int = 4096) -> KeyRecoveryReport:
    """Full 16-byte CPA over a trace file, streamed.

    With ``jobs > 1`` the file is split into contiguous partitions that are
    accumulated in worker processes and merged in partition order.
    """
    with TraceReader(path) as reader:
        n = len(reader)
        n_samples = reader.header.n_samples
    if n < 2:
        raise ValueError(f"{path}: need at least 2 traces, file has {n}")
    win = _resolve_window(window, n_samples)
    parts = partitions(n, jobs)
    if jobs <= 1 or len(parts) == 1:
        accs = [accumulate_file(path, s, e, win, model, reference, batch_size) for s, e in parts]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(accumulate_file, path, s, e, win, model, reference, batch_size)
                       for s, e in parts]
            accs = [f.result() for f in futures]
    acc = accs[0]
    for other in accs[1:]:
        acc = acc.merge(other)
    return report_from_accumulator(acc, truth, win[0])
