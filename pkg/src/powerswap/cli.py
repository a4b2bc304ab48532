"""Command-line entry point: ``powerswap simulate | attack | evaluate | info``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

from . import __version__
from .cpa import recover_key
from .evaluate import (
    compare_defenses, run_sweep, write_outcomes_csv, write_spec_json, write_summary_csv,
)
from .leakage import (
    ConfigError, LeakageConfig, PlaintextSource, derive_seed, generate_campaign, ladder_bank,
)
from .metrics import key_error_map
from .tracestore import TraceFileError, TraceReader

MODEL_ALIASES = {"hw": "hamming_weight", "hd": "hamming_distance"}


def hex_key(text: str) -> bytes:
    try:
        key = bytes.fromhex(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a hex string: {text!r}") from None
    if len(key) != 16:
        raise argparse.ArgumentTypeError(f"key must be 32 hex digits, got {len(text)}")
    return key


def window(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must look like START:STOP, got {text!r}") from None
    if not 0 <= a < b:
        raise argparse.ArgumentTypeError(f"empty or negative window {text!r}")
    return a, b


def int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_leakage_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--noise", type=float, default=2.0, help="Gaussian noise std per sample (HW units)")
    p.add_argument("--defense", choices=["none", "swapper"], default="none")
    p.add_argument("--variants", type=int, default=3, help="swapper variants per operation")
    p.add_argument("--ladder", type=float_list, default=None,
                   help="power ladder p1,...; default 1,2,...,variants+2")
    p.add_argument("--reselect", choices=["per-trace", "per-op"], default="per-trace")
    p.add_argument("--model", choices=sorted(MODEL_ALIASES), default="hw")
    p.add_argument("--samples", type=int, default=200, help="samples per trace")
    p.add_argument("--samples-per-op", type=int, default=4)
    p.add_argument("--lead", type=int, default=8, help="idle samples before the first operation")
    p.add_argument("--adc-step", type=float, default=2.0 ** -8)
    p.add_argument("--seed", type=int, default=0)


def _leakage_config(args, defense: str | None = None, log_variants: bool = False) -> LeakageConfig:
    ladder = args.ladder or [float(i) for i in range(1, args.variants + 3)]
    return LeakageConfig(
        model=MODEL_ALIASES[args.model],
        noise_sigma=args.noise,
        samples_per_op=args.samples_per_op,
        lead=args.lead,
        trace_length=args.samples,
        defense=defense or args.defense,
        reselect_granularity=args.reselect.replace("-", "_"),
        seed=args.seed,
        bank=ladder_bank(ladder, args.variants),
        log_variants=log_variants,
        adc_step=args.adc_step,
    )


def _resolved(args) -> dict:
    spec = {}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        if isinstance(v, bytes):
            v = v.hex()
        elif isinstance(v, tuple):
            v = list(v)
        spec[k] = v
    spec["version"] = __version__
    return spec


def cmd_simulate(args) -> int:
    if args.pt_file and args.enumerate_pt_byte:
        args.parser.error("--pt-file and --enumerate-pt-byte are mutually exclusive")
    if args.log_variants and args.defense != "swapper":
        args.parser.error("--log-variants requires --defense swapper")
    if args.traces < 1:
        args.parser.error("--traces must be at least 1")
    pt_seed = derive_seed(args.seed, 3)
    if args.pt_file:
        source = PlaintextSource.from_file(args.pt_file)
    elif args.enumerate_pt_byte:
        if "all" in args.enumerate_pt_byte:
            positions = tuple(range(16))
        else:
            try:
                positions = tuple(sorted({int(p) for p in args.enumerate_pt_byte}))
            except ValueError:
                args.parser.error("--enumerate-pt-byte takes a byte index 0..15 or 'all'")
        source = PlaintextSource("enumerate", seed=pt_seed, positions=positions)
    else:
        source = PlaintextSource("random", seed=pt_seed)
    config = _leakage_config(args, log_variants=args.log_variants)
    spec = _resolved(args)
    spec.pop("parser", None)
    # the attacker gets the file, so only a fingerprint of the key goes in
    spec["key"] = "sha256:" + hashlib.sha256(args.key).hexdigest()
    header = generate_campaign(args.out, args.traces, args.key, config, source, jobs=args.jobs,
                               extra_metadata={"cli.spec": json.dumps(spec, sort_keys=True)})
    print(f"wrote {header.n_traces} traces x {header.n_samples} samples to {args.out} "
          f"(defense={config.defense}, reselect={config.reselect_granularity}, "
          f"noise={config.noise_sigma}, seed={config.seed}, "
          f"variant_log={'yes' if header.has_variant_log else 'no'})")
    return 0


def cmd_attack(args) -> int:
    report = recover_key(args.tracefile, truth=args.truth, window=args.window,
                         model=MODEL_ALIASES[args.model], reference=args.reference, jobs=args.jobs)
    spec = _resolved(args)
    spec.pop("parser", None)
    report.spec = spec
    text = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        line = f"recovered key {report.recovered_key.hex()} from {report.n_traces} traces"
        if args.truth is not None:
            diff = key_error_map(report.recovered_key, args.truth)
            line += f"; wrong bytes {len(diff.byte_diffs)}: {diff.rendered}"
        print(line)
    else:
        print(text)
    return 0


def cmd_evaluate(args) -> int:
    if not args.traces or not args.defenses or args.trials < 1:
        args.parser.error("sweep grid is empty (check --traces, --defenses, --trials)")
    bad = set(args.defenses) - {"none", "swapper"}
    if bad:
        args.parser.error(f"unknown defenses: {sorted(bad)}")
    config = _leakage_config(args, defense="none")
    rows = run_sweep(config, args.defenses, args.traces, args.trials, args.seed, jobs=args.jobs)
    os.makedirs(args.out_dir, exist_ok=True)
    write_outcomes_csv(os.path.join(args.out_dir, "outcomes.csv"), rows)
    write_summary_csv(os.path.join(args.out_dir, "summary.csv"), rows)
    spec = _resolved(args)
    spec.pop("parser", None)
    write_spec_json(os.path.join(args.out_dir, "spec.json"), spec)

    for c in compare_defenses(rows):
        print(f"n={c.n_traces}: GE none={c.baseline.mean_ge:.2f} swapper={c.swapper.mean_ge:.2f}; "
              f"SR none={c.baseline.success_rate:.2f} swapper={c.swapper.success_rate:.2f}; "
              f"swapper GE higher in {c.ge_greater}/{c.trials}, "
              f"success lost in {c.success_lower}/{c.trials}")
    for r in rows:
        if r.defense == "swapper" and not r.outcome.success:
            diff = key_error_map(r.outcome.recovered_key, r.outcome.true_key)
            print(f"example (n={r.n_traces}, trial {r.trial}): correct {r.outcome.true_key.hex()}"
                  f"  recovered {diff.rendered}")
            break
    print(f"wrote {len(rows)} outcome rows to {args.out_dir}")
    return 0


def cmd_info(args) -> int:
    with TraceReader(args.tracefile) as reader:
        h = reader.header
        print(f"file:         {args.tracefile}")
        print(f"n_traces:     {h.n_traces}")
        print(f"n_samples:    {h.n_samples}")
        print(f"sample_dtype: {h.sample_dtype} (float32 LE)")
        print(f"flags:        {h.flags:#04x} (variant log {'present' if h.has_variant_log else 'absent'})")
        print(f"record_size:  {h.record_size}")
        print("metadata:")
        for k in sorted(h.metadata):
            print(f"  {k} = {h.metadata[k]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="powerswap", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a trace campaign")
    p.add_argument("--traces", type=int, required=True)
    p.add_argument("--key", type=hex_key, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--enumerate-pt-byte", action="append", default=[],
                   help="byte position (or 'all') whose plaintext values cycle through 0..255")
    p.add_argument("--pt-file", help="plaintexts, one 32-digit hex block per line")
    p.add_argument("--log-variants", action="store_true",
                   help="store the selected variant per operation (evaluation only)")
    p.add_argument("--jobs", type=int, default=1)
    _add_leakage_args(p)
    p.set_defaults(func=cmd_simulate, parser=p)

    p = sub.add_parser("attack", help="run CPA on a trace file")
    p.add_argument("tracefile")
    p.add_argument("--truth", type=hex_key, help="true key, adds per-byte ranks")
    p.add_argument("--window", type=window, help="restrict to samples START:STOP")
    p.add_argument("--model", choices=sorted(MODEL_ALIASES), default="hw")
    p.add_argument("--reference", type=int, default=0, help="reference byte for --model hd")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_attack, parser=p)

    p = sub.add_parser("evaluate", help="paired defense sweep over seeded trials")
    p.add_argument("--traces", type=int_list, default=[5000], help="comma-separated trace counts")
    p.add_argument("--defenses", type=lambda s: [x for x in s.split(",") if x], default=["none", "swapper"])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--out-dir", default="evaluation")
    p.add_argument("--jobs", type=int, default=1)
    _add_leakage_args(p)
    p.set_defaults(func=cmd_evaluate, parser=p)

    p = sub.add_parser("info", help="dump a trace file header")
    p.add_argument("tracefile")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_info, parser=p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TraceFileError, OSError, ConfigError, ValueError) as exc:
        print(f"powerswap: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
