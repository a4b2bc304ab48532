"""Power-trace synthesis for AES-128, with and without the Power Swapper.

A trace is built from a fixed *layout*: one slot per AES operation (labelled
OP-1 AddRoundKey, OP-2 SubBytes, OP-3 ShiftRows, OP-4 MixColumns) in
execution order, plus a block of 16 samples right after the round-1 SubBytes
slot that carries each state byte's leakage separately. That block is the
attack window the CPA engine targets.

Every state byte leaks through an affine map ``gain * leak + offset`` where
``leak`` is its Hamming weight (or the Hamming distance to the operation's
input byte). An operation slot holds the sum over its 16 bytes. Without the
defense the map is taken from the baseline bank (unit gain, zero offset by
default). With the defense, each slot draws one variant from the swapper
bank using a counter-based selector that stands in for the PUF.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import aes

OP_LABELS = ("OP-1", "OP-2", "OP-3", "OP-4")
OP_NAMES = {
    "OP-1": "add_round_key",
    "OP-2": "sub_bytes",
    "OP-3": "shift_rows",
    "OP-4": "mix_columns",
}

MODELS = ("hamming_weight", "hamming_distance")
DEFENSES = ("none", "swapper")
GRANULARITIES = ("per_trace", "per_op")

# Traces are produced in blocks of this many; each block owns its own noise
# and plaintext streams, so any split of whole blocks across workers gives
# the same bytes as a serial run.
BLOCK_SIZE = 1024

HW_TABLE = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)

_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    """Invalid leakage or campaign configuration."""


def hamming_weight(b: int) -> int:
    return int(HW_TABLE[b & 0xFF])


def hamming_distance(a: int, b: int) -> int:
    return int(HW_TABLE[(a ^ b) & 0xFF])


# -- selector ---------------------------------------------------------------

def splitmix64(seed: int, counters) -> np.ndarray:
    """SplitMix64 output for ``counters`` under ``seed`` (vectorised, wraps mod 2**64)."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK64) + (c + np.uint64(1)) * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, stream: int) -> int:
    """Independent 64-bit seed for a numbered sub-stream."""
    return int(splitmix64(seed, stream))


def _bounded(u: np.ndarray, n: int) -> np.ndarray:
    # multiply-shift on the top 32 bits; bias is below 2**-32 for small n
    return (((u >> np.uint64(32)) * np.uint64(n)) >> np.uint64(32)).astype(np.intp)


@dataclass
class PufSelector:
    """Seeded, counter-addressed stand-in for the PUF that drives variant choice.

    Draw ``i`` depends only on ``(seed, i)``, so a worker that starts at a
    given counter reproduces exactly what a serial run would draw there.
    """

    seed: int
    counter: int = 0

    def draw(self, n_choices: int) -> int:
        u = splitmix64(self.seed, self.counter)
        self.counter += 1
        return int(_bounded(u, n_choices))


# -- variants ---------------------------------------------------------------

@dataclass(frozen=True)
class Variant:
    gain: float
    offset: float
    range_lo: float
    range_hi: float

    def __post_init__(self):
        if not self.gain > 0:
            raise ConfigError(f"variant gain must be positive, got {self.gain}")
        lo, hi = self.offset, self.offset + 8 * self.gain
        if lo < self.range_lo - 1e-12 or hi > self.range_hi + 1e-12:
            raise ConfigError(
                f"variant maps HW 0..8 to [{lo}, {hi}], outside [{self.range_lo}, {self.range_hi}]"
            )

    @classmethod
    def spanning(cls, lo: float, hi: float) -> "Variant":
        """Variant whose HW range 0..8 covers exactly ``[lo, hi]``."""
        return cls(gain=(hi - lo) / 8.0, offset=float(lo), range_lo=float(lo), range_hi=float(hi))


IDENTITY = Variant(gain=1.0, offset=0.0, range_lo=0.0, range_hi=8.0)


def variant_power(variant: Variant, hw: float) -> float:
    if not 0 <= hw <= 8:
        raise ValueError(f"hamming weight must be in [0, 8], got {hw}")
    return variant.gain * hw + variant.offset


@dataclass(frozen=True)
class VariantBank:
    """Functionally identical implementations of each operation with distinct power."""

    variants: Mapping[str, tuple[Variant, ...]]

    def __post_init__(self):
        for label, vs in self.variants.items():
            if len(vs) < 1:
                raise ConfigError(f"no variants for {label}")
            if len(vs) > 255:
                raise ConfigError("at most 255 variants per operation")

    def for_op(self, label: str) -> tuple[Variant, ...]:
        try:
            return self.variants[label]
        except KeyError:
            raise ConfigError(f"unknown operation label {label!r}") from None

    def n_variants(self, label: str) -> int:
        return len(self.for_op(label))

    def overlaps_consecutive(self) -> bool:
        """True if, for every operation, variant j+1 starts below the end of variant j."""
        return all(
            vs[j + 1].range_lo < vs[j].range_hi
            for vs in self.variants.values()
            for j in range(len(vs) - 1)
        )

    def cross_op_collisions(self) -> list[tuple[str, int, str, int]]:
        """Pairs of variants of *different* operations whose power ranges intersect."""
        out = []
        labels = sorted(self.variants)
        for ia, a in enumerate(labels):
            for b in labels[ia + 1:]:
                for i, va in enumerate(self.variants[a]):
                    for j, vb in enumerate(self.variants[b]):
                        if max(va.range_lo, vb.range_lo) <= min(va.range_hi, vb.range_hi):
                            out.append((a, i, b, j))
        return out

    def gain_offset_tables(self, label: str) -> tuple[np.ndarray, np.ndarray]:
        vs = self.for_op(label)
        return (np.array([v.gain for v in vs]), np.array([v.offset for v in vs]))

    def to_json(self) -> str:
        return json.dumps(
            {k: [asdict(v) for v in vs] for k, vs in sorted(self.variants.items())},
            sort_keys=True, separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "VariantBank":
        raw = json.loads(text)
        return cls({k: tuple(Variant(**v) for v in vs) for k, vs in raw.items()})


def identity_bank(labels: Sequence[str] = OP_LABELS) -> VariantBank:
    return VariantBank({label: (IDENTITY,) for label in labels})


def ladder_bank(ladder: Sequence[float] = (1.0, 2.0, 3.0, 4.0, 5.0), n_variants: int = 3,
                labels: Sequence[str] = OP_LABELS) -> VariantBank:
    """Swapper bank: variant j of every operation spans ``[ladder[j], ladder[j + 2]]``.

    With the default ladder p1..p5 this gives the three overlapping ranges
    [p1, p3], [p2, p4], [p3, p5].
    """
    _check_ladder(ladder)
    if n_variants < 1:
        raise ConfigError("need at least one variant")
    if len(ladder) < n_variants + 2:
        raise ConfigError(f"{n_variants} overlapping variants need a ladder of {n_variants + 2} rungs")
    vs = tuple(Variant.spanning(ladder[j], ladder[j + 2]) for j in range(n_variants))
    return VariantBank({label: vs for label in labels})


def rated_bank(ladder: Sequence[float] = (1.0, 2.0, 3.0, 4.0, 5.0),
               labels: Sequence[str] = OP_LABELS) -> VariantBank:
    """Single-variant bank where operation k occupies ``[ladder[k], ladder[k + 1]]``.

    Models a conventional device whose modules have distinct power ratings,
    so an observer can tell operations apart by peak magnitude.
    """
    _check_ladder(ladder)
    if len(ladder) < len(labels) + 1:
        raise ConfigError(f"{len(labels)} operations need a ladder of {len(labels) + 1} rungs")
    return VariantBank({
        label: (Variant.spanning(ladder[k], ladder[k + 1]),) for k, label in enumerate(labels)
    })


def select_variant(selector: PufSelector, bank: VariantBank, op_label: str) -> int:
    """Draw the implementation of ``op_label`` to run next."""
    return selector.draw(bank.n_variants(op_label))


def _check_ladder(ladder):
    if any(not a < b for a, b in zip(ladder, ladder[1:])):
        raise ConfigError(f"ladder must be strictly increasing: {list(ladder)}")


# -- layout -----------------------------------------------------------------

@dataclass(frozen=True)
class Slot:
    label: str
    round: int
    offset: int
    width: int

    @property
    def op(self) -> str:
        return OP_NAMES[self.label]


def aes_op_sequence() -> list[tuple[str, int]]:
    """(label, round) for every AES-128 operation in execution order."""
    seq = [("OP-1", 0)]
    for r in range(1, aes.N_ROUNDS + 1):
        seq += [("OP-2", r), ("OP-3", r)]
        if r != aes.N_ROUNDS:
            seq.append(("OP-4", r))
        seq.append(("OP-1", r))
    return seq


@dataclass(frozen=True)
class Layout:
    slots: tuple[Slot, ...]
    attack_base: int
    trace_length: int

    @property
    def attack_slot_index(self) -> int:
        for j, s in enumerate(self.slots):
            if s.label == "OP-2" and s.round == 1:
                return j
        raise ConfigError("layout has no round-1 SubBytes slot")

    def validate(self) -> None:
        spans = [(s.offset, s.offset + s.width, f"{s.label}/r{s.round}") for s in self.slots]
        spans.append((self.attack_base, self.attack_base + 16, "attack"))
        spans.sort()
        for lo, hi, name in spans:
            if lo < 0 or hi > self.trace_length:
                raise ConfigError(f"slot {name} [{lo}, {hi}) exceeds trace length {self.trace_length}")
        for (_, hi, a), (lo, _, b) in zip(spans, spans[1:]):
            if lo < hi:
                raise ConfigError(f"slots {a} and {b} overlap")
        self.attack_slot_index  # noqa: B018  (raises if missing)

    def to_json(self) -> str:
        return json.dumps(
            {"slots": [[s.label, s.round, s.offset, s.width] for s in self.slots],
             "attack_base": self.attack_base, "trace_length": self.trace_length},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "Layout":
        raw = json.loads(text)
        return cls(tuple(Slot(*s) for s in raw["slots"]), raw["attack_base"], raw["trace_length"])


def build_layout(samples_per_op: int = 4, lead: int = 8, trace_length: int = 200) -> Layout:
    """Sequential layout: ``lead`` idle samples, then each operation slot in
    execution order, with the 16-sample attack block inserted after the
    round-1 SubBytes slot. Remaining samples at the end stay idle."""
    if samples_per_op < 1:
        raise ConfigError("samples_per_op must be positive")
    pos = lead
    slots = []
    attack_base = -1
    for label, r in aes_op_sequence():
        slots.append(Slot(label, r, pos, samples_per_op))
        pos += samples_per_op
        if label == "OP-2" and r == 1:
            attack_base = pos
            pos += 16
    layout = Layout(tuple(slots), attack_base, trace_length)
    layout.validate()
    return layout


# -- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class LeakageConfig:
    model: str = "hamming_weight"
    noise_sigma: float = 2.0
    samples_per_op: int = 4
    lead: int = 8
    trace_length: int = 200
    defense: str = "none"
    reselect_granularity: str = "per_trace"
    seed: int = 0
    bank: VariantBank | None = None
    baseline: VariantBank | None = None
    log_variants: bool = False
    # ADC quantisation step; 0 disables. A dyadic step keeps every sample
    # exactly representable, which makes downstream float sums exact.
    adc_step: float = 2.0 ** -8

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.defense not in DEFENSES:
            raise ConfigError(f"defense must be one of {DEFENSES}, got {self.defense!r}")
        if self.reselect_granularity not in GRANULARITIES:
            raise ConfigError(f"reselect_granularity must be one of {GRANULARITIES}")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ConfigError(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if not 0 <= self.seed <= _MASK64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.defense == "swapper" and self.bank is None:
            raise ConfigError("defense 'swapper' requires a variant bank")
        if self.defense == "none" and self.log_variants:
            raise ConfigError("variant logging requires defense 'swapper'")
        if self.baseline is not None:
            for label in OP_LABELS:
                if self.baseline.n_variants(label) != 1:
                    raise ConfigError("baseline bank must have exactly one variant per operation")
        if self.bank is not None:
            for label in OP_LABELS:
                self.bank.for_op(label)
        if self.adc_step < 0:
            raise ConfigError("adc_step must be >= 0")
        self.layout  # noqa: B018  (validates)

    @cached_property
    def layout(self) -> Layout:
        return build_layout(self.samples_per_op, self.lead, self.trace_length)

    @property
    def baseline_bank(self) -> VariantBank:
        return self.baseline if self.baseline is not None else identity_bank()

    @property
    def selector_seed(self) -> int:
        return derive_seed(self.seed, 1)

    @property
    def noise_seed(self) -> int:
        return derive_seed(self.seed, 2)

    def n_draws_per_trace(self) -> int:
        if self.reselect_granularity == "per_trace":
            return len(OP_LABELS)
        return len(self.layout.slots)

    def metadata(self) -> dict[str, str]:
        meta = {
            "leakage.model": self.model,
            "leakage.noise_sigma": repr(float(self.noise_sigma)),
            "leakage.samples_per_op": str(self.samples_per_op),
            "leakage.lead": str(self.lead),
            "leakage.trace_length": str(self.trace_length),
            "leakage.defense": self.defense,
            "leakage.reselect_granularity": self.reselect_granularity,
            "leakage.seed": str(self.seed),
            "leakage.selector_seed": str(self.selector_seed),
            "leakage.noise_seed": str(self.noise_seed),
            "leakage.adc_step": repr(float(self.adc_step)),
            "leakage.log_variants": str(self.log_variants).lower(),
            "leakage.baseline": self.baseline_bank.to_json(),
            "layout": self.layout.to_json(),
            "attack_base": str(self.layout.attack_base),
        }
        if self.bank is not None:
            meta["leakage.bank"] = self.bank.to_json()
        return meta


# -- plaintext sources ------------------------------------------------------

@dataclass(frozen=True)
class PlaintextSource:
    """Where campaign plaintexts come from.

    ``random``: uniform bytes. ``enumerate``: each listed position runs
    through a seeded permutation of 0..255 every 256 traces (other positions
    random), so every byte value appears and positions stay uncorrelated.
    ``file``: explicit blocks, one per trace.
    """

    kind: str = "random"
    seed: int = 0
    positions: tuple[int, ...] = ()
    blocks: np.ndarray | None = field(default=None, compare=False, repr=False)
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("random", "enumerate", "file"):
            raise ConfigError(f"unknown plaintext source {self.kind!r}")
        if any(not 0 <= p < 16 for p in self.positions):
            raise ConfigError("enumerated positions must be in 0..15")
        if self.kind == "file" and self.blocks is None:
            raise ConfigError("file plaintext source needs blocks")

    @classmethod
    def from_file(cls, path) -> "PlaintextSource":
        """One 32-hex-digit plaintext per line; blank lines and ``#`` comments skipped."""
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    b = bytes.fromhex(line)
                    if len(b) != 16:
                        raise ConfigError(f"{path}: plaintext {line!r} is not 16 bytes")
                    rows.append(np.frombuffer(b, np.uint8))
        blocks = np.array(rows, dtype=np.uint8).reshape(-1, 16)
        return cls(kind="file", blocks=blocks, path=str(path))

    def take(self, start: int, count: int) -> np.ndarray:
        if self.kind == "file":
            if start + count > len(self.blocks):
                raise ConfigError(
                    f"plaintext file has {len(self.blocks)} blocks, campaign needs {start + count}"
                )
            return self.blocks[start:start + count].copy()
        out = np.empty((count, 16), np.uint8)
        t = start
        while t < start + count:
            block, within = divmod(t, BLOCK_SIZE)
            m = min(BLOCK_SIZE - within, start + count - t)
            rng = np.random.default_rng([self.seed, 0, block])
            rows = rng.integers(0, 256, size=(BLOCK_SIZE, 16), dtype=np.uint8)
            out[t - start:t - start + m] = rows[within:within + m]
            t += m
        if self.kind == "enumerate":
            idx = np.arange(start, start + count)
            for pos in self.positions:
                for cycle in np.unique(idx // 256):
                    sel = idx // 256 == cycle
                    perm = np.random.default_rng([self.seed, 1, pos, int(cycle)]).permutation(256)
                    out[sel, pos] = perm[idx[sel] % 256]
        return out

    def metadata(self) -> dict[str, str]:
        meta = {"plaintext.kind": self.kind, "plaintext.seed": str(self.seed)}
        if self.positions:
            meta["plaintext.positions"] = ",".join(map(str, self.positions))
        if self.path:
            meta["plaintext.path"] = self.path
        return meta


# -- synthesis --------------------------------------------------------------

@dataclass
class Trace:
    samples: np.ndarray
    plaintext: bytes
    ciphertext: bytes
    variant_log: np.ndarray | None = None


@dataclass
class Campaign:
    """A batch of synthesized traces held in memory."""

    plaintexts: np.ndarray
    ciphertexts: np.ndarray
    samples: np.ndarray
    variant_log: np.ndarray | None = None

    def __len__(self):
        return len(self.plaintexts)


def _selections(config: LeakageConfig, first_counter: np.ndarray, seed: int) -> np.ndarray:
    """Variant index per (trace, slot); ``first_counter`` is each trace's first draw."""
    slots = config.layout.slots
    idx = np.empty((len(first_counter), len(slots)), dtype=np.uint8)
    per_trace = config.reselect_granularity == "per_trace"
    for j, slot in enumerate(slots):
        k = OP_LABELS.index(slot.label) if per_trace else j
        u = splitmix64(seed, first_counter + np.uint64(k))
        idx[:, j] = _bounded(u, config.bank.n_variants(slot.label))
    return idx


def synthesize_batch(plaintexts: np.ndarray, key, config: LeakageConfig,
                     first_counter, noise: np.ndarray | None,
                     selector_seed: int | None = None) -> Campaign:
    """Synthesize traces for a batch of plaintexts.

    ``first_counter`` gives each trace's first selector counter (array or
    scalar for a single trace). ``noise`` is a standard-normal array of shape
    ``(n, trace_length)`` or None for noiseless output.
    """
    pts = np.asarray(plaintexts, dtype=np.uint8).reshape(-1, 16)
    n = len(pts)
    layout = config.layout
    ct, inter = aes.encrypt_batch(pts, aes.key_expansion(key), record=True)
    samples = np.zeros((n, layout.trace_length), dtype=np.float64)

    vlog = None
    if config.defense == "swapper":
        counters = np.broadcast_to(np.asarray(first_counter, dtype=np.uint64), (n,))
        seed = config.selector_seed if selector_seed is None else selector_seed
        vlog = _selections(config, counters, seed)

    for j, slot in enumerate(layout.slots):
        out = inter.state(slot.op, slot.round)
        if config.model == "hamming_weight":
            leak = HW_TABLE[out]
        else:
            leak = HW_TABLE[out ^ inter.input_state(slot.op, slot.round, pts)]
        if vlog is None:
            v = config.baseline_bank.for_op(slot.label)[0]
            power = v.gain * leak + v.offset
        else:
            gains, offsets = config.bank.gain_offset_tables(slot.label)
            sel = vlog[:, j]
            power = gains[sel][:, None] * leak + offsets[sel][:, None]
        samples[:, slot.offset:slot.offset + slot.width] = power.sum(axis=1)[:, None]
        if slot.label == "OP-2" and slot.round == 1:
            samples[:, layout.attack_base:layout.attack_base + 16] = power

    if noise is not None and config.noise_sigma > 0:
        samples += config.noise_sigma * noise
    if config.adc_step > 0:
        samples = np.round(samples / config.adc_step) * config.adc_step
    return Campaign(pts, ct, samples.astype(np.float32), vlog if config.log_variants else None)


def synthesize_trace(pt, key, config: LeakageConfig, selector: PufSelector | None = None,
                     noise_rng: np.random.Generator | None = None) -> Trace:
    """Synthesize one trace. Advances ``selector`` by the draws it uses."""
    block = np.frombuffer(bytes(pt), np.uint8)
    if block.size != 16:
        raise ValueError("plaintext must be 16 bytes")
    counter, seed = 0, None
    if config.defense == "swapper":
        if selector is None:
            raise ConfigError("swapper synthesis needs a selector")
        counter, seed = selector.counter, selector.seed
        selector.counter += config.n_draws_per_trace()
    noise = None
    if noise_rng is not None:
        noise = noise_rng.standard_normal((1, config.trace_length))
    camp = synthesize_batch(block, key, config, counter, noise, selector_seed=seed)
    return Trace(
        samples=camp.samples[0],
        plaintext=camp.plaintexts[0].tobytes(),
        ciphertext=camp.ciphertexts[0].tobytes(),
        variant_log=None if camp.variant_log is None else camp.variant_log[0],
    )


def _block_noise(config: LeakageConfig, block: int) -> np.random.Generator:
    return np.random.default_rng([config.noise_seed, block])


def simulate_range(start: int, stop: int, key, config: LeakageConfig,
                   pt_source: PlaintextSource) -> Campaign:
    """Traces ``start..stop`` of a campaign, identical to the same rows of a full run."""
    if stop <= start:
        raise ConfigError("empty trace range")
    pts = pt_source.take(start, stop - start)
    noise = None
    if config.noise_sigma > 0:
        noise = np.empty((stop - start, config.trace_length))
        t = start
        while t < stop:
            block, within = divmod(t, BLOCK_SIZE)
            m = min(BLOCK_SIZE - within, stop - t)
            rows = _block_noise(config, block).standard_normal((BLOCK_SIZE, config.trace_length))
            noise[t - start:t - start + m] = rows[within:within + m]
            t += m
    counters = np.arange(start, stop, dtype=np.uint64) * np.uint64(config.n_draws_per_trace())
    return synthesize_batch(pts, key, config, counters, noise)


def simulate(n: int, key, config: LeakageConfig, pt_source: PlaintextSource) -> Campaign:
    if n < 1:
        raise ConfigError("campaign needs at least one trace")
    return simulate_range(0, n, key, config, pt_source)


def iter_campaign_blocks(n: int, key, config: LeakageConfig, pt_source: PlaintextSource,
                         jobs: int = 1) -> Iterator[Campaign]:
    """Yield the campaign in block order, optionally computing blocks in worker processes."""
    if n < 1:
        raise ConfigError("campaign needs at least one trace")
    ranges = [(s, min(s + BLOCK_SIZE, n)) for s in range(0, n, BLOCK_SIZE)]
    if jobs <= 1 or len(ranges) == 1:
        for s, e in ranges:
            yield simulate_range(s, e, key, config, pt_source)
        return
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(simulate_range, s, e, bytes(key), config, pt_source) for s, e in ranges]
        for fut in futures:
            yield fut.result()


def campaign_metadata(config: LeakageConfig, pt_source: PlaintextSource,
                      extra: Mapping[str, str] | None = None) -> dict[str, str]:
    meta = config.metadata()
    meta.update(pt_source.metadata())
    if config.log_variants:
        meta["variant_log_len"] = str(len(config.layout.slots))
    if extra:
        meta.update(extra)
    return meta


def generate_campaign(path, n: int, key, config: LeakageConfig,
                      pt_source: PlaintextSource, jobs: int = 1,
                      extra_metadata: Mapping[str, str] | None = None):
    """Simulate ``n`` traces and stream them to a trace file. Returns the header."""
    from .tracestore import TraceSetHeader, TraceWriter

    header = TraceSetHeader(
        n_traces=n,
        n_samples=config.trace_length,
        flags=1 if config.log_variants else 0,
        metadata=campaign_metadata(config, pt_source, extra_metadata),
    )
    with TraceWriter(path, header) as writer:
        for camp in iter_campaign_blocks(n, key, config, pt_source, jobs):
            writer.write_batch(camp.plaintexts, camp.ciphertexts, camp.samples, camp.variant_log)
    return writer.header
