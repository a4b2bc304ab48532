"""Attack-success and defense-efficacy metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .leakage import OP_LABELS, Layout, VariantBank

RED = "\x1b[31m"
RESET = "\x1b[0m"


@dataclass(frozen=True)
class TrialOutcome:
    seed: int
    ranks: tuple[int, ...]
    recovered_key: bytes
    n_traces: int
    true_key: bytes | None = None

    def __post_init__(self):
        if len(self.ranks) != 16 or any(not 0 <= r <= 255 for r in self.ranks):
            raise ValueError(f"need 16 ranks in [0, 255], got {self.ranks}")

    @property
    def wrong_bytes(self) -> int:
        return sum(r > 0 for r in self.ranks)

    @property
    def success(self) -> bool:
        return self.wrong_bytes == 0


def _require(outcomes) -> list[TrialOutcome]:
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no trial outcomes")
    return outcomes


def guessing_entropy(outcomes: Sequence[TrialOutcome]) -> np.ndarray:
    """Mean rank of the true key byte, per byte position."""
    outcomes = _require(outcomes)
    return np.mean([o.ranks for o in outcomes], axis=0)


def success_rate(outcomes: Sequence[TrialOutcome], threshold_rank: int = 0) -> float:
    """Fraction of trials in which every byte's true rank is at most ``threshold_rank``."""
    outcomes = _require(outcomes)
    return sum(max(o.ranks) <= threshold_rank for o in outcomes) / len(outcomes)


@dataclass(frozen=True)
class KeyErrorMap:
    byte_diffs: tuple[int, ...]
    # hex-digit positions: 2*i is the high nibble of byte i, 2*i + 1 the low one
    nibble_diffs: tuple[int, ...]
    rendered: str

    @property
    def empty(self) -> bool:
        return not self.byte_diffs


def key_error_map(recovered: bytes, truth: bytes, style: str = "brackets") -> KeyErrorMap:
    """Byte and nibble positions where two keys differ.

    ``rendered`` is ``recovered`` as hex with each differing digit marked,
    either ``[x]`` or, with ``style="ansi"``, in red.
    """
    if len(recovered) != len(truth):
        raise ValueError("keys differ in length")
    rec_hex, true_hex = bytes(recovered).hex(), bytes(truth).hex()
    nibbles = tuple(i for i, (a, b) in enumerate(zip(rec_hex, true_hex)) if a != b)
    byte_diffs = tuple(sorted({i // 2 for i in nibbles}))
    parts = []
    for i, ch in enumerate(rec_hex):
        if i in nibbles:
            parts.append(f"{RED}{ch}{RESET}" if style == "ansi" else f"[{ch}]")
        else:
            parts.append(ch)
    return KeyErrorMap(byte_diffs, nibbles, "".join(parts))


# -- operation-sequence confusion ----------------------------------------

def baseline_levels(baseline: VariantBank, mean_hw: float = 4.0) -> dict[str, float]:
    """Per-byte power an observer expects from each operation on the unprotected device."""
    return {label: baseline.for_op(label)[0].gain * mean_hw + baseline.for_op(label)[0].offset
            for label in OP_LABELS}


def peak_magnitudes(samples: np.ndarray, layout: Layout, slot_indices: Sequence[int]) -> np.ndarray:
    """Per-byte magnitude of the chosen operation slots, shape ``(n_traces, len(slot_indices))``."""
    samples = np.atleast_2d(samples)
    cols = []
    for j in slot_indices:
        s = layout.slots[j]
        cols.append(samples[:, s.offset:s.offset + s.width].mean(axis=1) / 16.0)
    return np.stack(cols, axis=1)


def infer_ops(magnitudes, levels: Mapping[str, float]) -> np.ndarray:
    """Nearest-level classification of peak magnitudes; ties go to the earlier label."""
    labels = list(levels)
    ref = np.array([levels[k] for k in labels])
    mags = np.asarray(magnitudes, dtype=np.float64)
    idx = np.abs(mags[..., None] - ref).argmin(axis=-1)
    return np.array(labels, dtype=object)[idx]


@dataclass(frozen=True)
class ConfusionRow:
    trace: int
    peak: int
    executed: str
    variant: int
    inferred: str
    magnitude: float | None

    @property
    def mismatch(self) -> bool:
        return self.executed != self.inferred


@dataclass
class ConfusionReport:
    rows: list[ConfusionRow]
    n_traces: int
    n_peaks: int

    @property
    def mismatches(self) -> int:
        return sum(r.mismatch for r in self.rows)

    def sequences(self, style: str = "brackets") -> list[tuple[str, str]]:
        """(executed, observed) op sequence per trace; misread peaks marked."""
        out = []
        for t in range(self.n_traces):
            rows = self.rows[t * self.n_peaks:(t + 1) * self.n_peaks]
            executed = "/".join(r.executed for r in rows)
            marks = []
            for r in rows:
                if not r.mismatch:
                    marks.append(r.inferred)
                elif style == "ansi":
                    marks.append(f"{RED}{r.inferred}{RESET}")
                else:
                    marks.append(f"[{r.inferred}]")
            out.append((executed, "/".join(marks)))
        return out

    def to_table(self, style: str = "brackets") -> str:
        lines = ["trace  victim sequence        observed with swapper"]
        for t, (ex, obs) in enumerate(self.sequences(style)):
            lines.append(f"{t:<6} {ex:<22} {obs}")
        return "\n".join(lines)


def op_confusion_report(executed_ops: Sequence[str], true_variant_log, inferred_ops,
                        magnitudes=None) -> ConfusionReport:
    """Per-peak table of executed vs. inferred operation.

    ``true_variant_log`` and ``inferred_ops`` are ``(n_traces, n_peaks)``;
    ``executed_ops`` lists the operation behind each peak.
    """
    if true_variant_log is None:
        raise ValueError(
            "variant log missing: simulate with variant logging enabled (--log-variants)"
        )
    vlog = np.atleast_2d(np.asarray(true_variant_log))
    inferred = np.atleast_2d(np.asarray(inferred_ops, dtype=object))
    n_traces, n_peaks = inferred.shape
    if vlog.shape != inferred.shape or len(executed_ops) != n_peaks:
        raise ValueError("variant log, inferred ops and executed ops disagree in shape")
    mags = None if magnitudes is None else np.atleast_2d(magnitudes)
    rows = [
        ConfusionRow(t, p, executed_ops[p], int(vlog[t, p]), str(inferred[t, p]),
                     None if mags is None else float(mags[t, p]))
        for t in range(n_traces) for p in range(n_peaks)
    ]
    return ConfusionReport(rows, n_traces, n_peaks)
