"""Repeated, seeded attack trials comparing the unprotected and swapped device.

Trial ``i`` of a sweep uses ``trial_seed(master_seed, i)``; from it come the
key, plaintexts, noise and selector streams. The seed depends only on the
trial index, so the two defense arms (and every trace count) of trial ``i``
see the same key, plaintexts and noise: the arms are paired and differ only
in the defense flag.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .cpa import attack_arrays
from .leakage import (
    Campaign, LeakageConfig, PlaintextSource, derive_seed, simulate,
)
from .metrics import (
    TrialOutcome, baseline_levels, guessing_entropy, infer_ops, op_confusion_report,
    peak_magnitudes, success_rate,
)


def trial_seed(master_seed: int, index: int) -> int:
    return derive_seed(master_seed, index)


def trial_key(seed: int) -> bytes:
    return np.random.default_rng([seed, 0]).bytes(16)


def run_trial(config: LeakageConfig, n_traces: int, seed: int) -> TrialOutcome:
    key = trial_key(seed)
    cfg = replace(config, seed=derive_seed(seed, 1))
    camp = simulate(n_traces, key, cfg, PlaintextSource("random", seed=derive_seed(seed, 2)))
    report = attack_arrays(camp.plaintexts, camp.samples, truth=key)
    return TrialOutcome(seed, tuple(report.ranks), report.recovered_key, n_traces, key)


def paired_configs(config: LeakageConfig) -> dict[str, LeakageConfig]:
    """Baseline and swapper arms of ``config``; they differ only in ``defense``."""
    if config.bank is None:
        raise ValueError("paired comparison needs a variant bank for the swapper arm")
    arms = {d: replace(config, defense=d, log_variants=False) for d in ("none", "swapper")}
    assert replace(arms["none"], defense="swapper") == arms["swapper"]
    return arms


@dataclass(frozen=True)
class OutcomeRow:
    defense: str
    n_traces: int
    trial: int
    outcome: TrialOutcome


def _run_cell(args):
    config, n, trial, seed = args
    return run_trial(config, n, seed)


def run_sweep(config: LeakageConfig, defenses: Sequence[str], trace_counts: Sequence[int],
              trials: int, master_seed: int, jobs: int = 1) -> list[OutcomeRow]:
    """All (defense, n_traces, trial) cells, returned in grid order whatever ``jobs`` is."""
    if not defenses or not trace_counts or trials < 1:
        raise ValueError("empty sweep grid")
    arms = paired_configs(config)
    tasks, keys = [], []
    for d in defenses:
        for n in trace_counts:
            for t in range(trials):
                tasks.append((arms[d], n, t, trial_seed(master_seed, t)))
                keys.append((d, n, t))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(task) for task in tasks]
    return [OutcomeRow(d, n, t, o) for (d, n, t), o in zip(keys, results)]


@dataclass(frozen=True)
class ArmSummary:
    defense: str
    n_traces: int
    trials: int
    mean_ge: float
    success_rate: float
    wrong_bytes: dict[int, int]


def summarize(rows: Iterable[OutcomeRow]) -> list[ArmSummary]:
    cells: dict[tuple[str, int], list[TrialOutcome]] = {}
    for r in rows:
        cells.setdefault((r.defense, r.n_traces), []).append(r.outcome)
    out = []
    for (d, n), outs in cells.items():
        out.append(ArmSummary(
            d, n, len(outs), float(guessing_entropy(outs).mean()), success_rate(outs),
            dict(sorted(Counter(o.wrong_bytes for o in outs).items())),
        ))
    return out


@dataclass(frozen=True)
class DefenseComparison:
    n_traces: int
    baseline: ArmSummary
    swapper: ArmSummary
    ge_greater: int        # paired trials where the swapper arm's mean rank is higher
    success_lower: int     # paired trials where baseline succeeds and swapper does not
    trials: int


def compare_defenses(rows: Sequence[OutcomeRow]) -> list[DefenseComparison]:
    summaries = {(s.defense, s.n_traces): s for s in summarize(rows)}
    by_cell = {(r.defense, r.n_traces, r.trial): r.outcome for r in rows}
    out = []
    for n in sorted({r.n_traces for r in rows}):
        trials = sorted({t for d, m, t in by_cell if m == n and d == "none"}
                        & {t for d, m, t in by_cell if m == n and d == "swapper"})
        if not trials:
            continue
        ge_greater = success_lower = 0
        for t in trials:
            base, swap = by_cell[("none", n, t)], by_cell[("swapper", n, t)]
            ge_greater += np.mean(swap.ranks) > np.mean(base.ranks)
            success_lower += base.success and not swap.success
        out.append(DefenseComparison(n, summaries[("none", n)], summaries[("swapper", n)],
                                     int(ge_greater), int(success_lower), len(trials)))
    return out


def write_outcomes_csv(path, rows: Sequence[OutcomeRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["defense", "n_traces", "trial", "seed", "true_key", "recovered_key",
                    "success", "wrong_bytes", "mean_rank"] + [f"rank_{i:02d}" for i in range(16)])
        for r in rows:
            o = r.outcome
            w.writerow([r.defense, r.n_traces, r.trial, o.seed, o.true_key.hex(),
                        o.recovered_key.hex(), int(o.success), o.wrong_bytes,
                        repr(float(np.mean(o.ranks)))] + list(o.ranks))


def write_summary_csv(path, rows: Sequence[OutcomeRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["defense", "n_traces", "trials", "mean_guessing_entropy", "success_rate",
                    "wrong_byte_distribution"])
        for s in summarize(rows):
            dist = ";".join(f"{k}:{v}" for k, v in s.wrong_bytes.items())
            w.writerow([s.defense, s.n_traces, s.trials, repr(s.mean_ge), repr(s.success_rate), dist])


def write_spec_json(path, spec: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec, fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- operation confusion ----------------------------------------------------

def confusion_from_campaign(campaign: Campaign, config: LeakageConfig,
                            slot_indices: Sequence[int] = (0, 1, 2, 3)):
    """Read each chosen slot's magnitude as the observer would and compare with
    what actually ran. The default slots are round-0 AddRoundKey followed by
    round-1 SubBytes, ShiftRows, MixColumns (OP-1/OP-2/OP-3/OP-4)."""
    layout = config.layout
    slot_indices = list(slot_indices)
    if config.defense == "swapper":
        if campaign.variant_log is None:
            raise ValueError(
                "variant log missing: simulate with variant logging enabled (--log-variants)"
            )
        vlog = campaign.variant_log[:, slot_indices]
    else:
        vlog = np.zeros((len(campaign), len(slot_indices)), dtype=np.uint8)
    mags = peak_magnitudes(campaign.samples, layout, slot_indices)
    inferred = infer_ops(mags, baseline_levels(config.baseline_bank))
    executed = [layout.slots[j].label for j in slot_indices]
    return op_confusion_report(executed, vlog, inferred, mags)
