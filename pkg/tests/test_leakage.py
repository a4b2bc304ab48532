import numpy as np
import pytest

from powerswap import aes
from powerswap.leakage import (
    BLOCK_SIZE, ConfigError, LeakageConfig, OP_LABELS, PlaintextSource, PufSelector, Variant,
    VariantBank, build_layout, generate_campaign, hamming_distance, hamming_weight, identity_bank,
    iter_campaign_blocks, ladder_bank, rated_bank, select_variant, simulate, simulate_range,
    synthesize_trace, variant_power,
)
from powerswap.tracestore import TraceReader

KEY = bytes.fromhex("51720187c36e0c8523acb8535a870703")


def swapper(**kw):
    base = dict(defense="swapper", bank=ladder_bank(), noise_sigma=0.0, seed=11)
    base.update(kw)
    return LeakageConfig(**base)


def idle_samples(layout):
    busy = np.zeros(layout.trace_length, bool)
    for s in layout.slots:
        busy[s.offset:s.offset + s.width] = True
    busy[layout.attack_base:layout.attack_base + 16] = True
    return np.flatnonzero(~busy)


@pytest.mark.parametrize("b, hw", [(0x00, 0), (0xFF, 8), (0xA5, 4)])
def test_hamming_weight(b, hw):
    assert hamming_weight(b) == hw


def test_hamming_distance_examples():
    assert all(hamming_distance(x, x) == 0 for x in range(256))
    assert hamming_distance(0x00, 0xFF) == 8
    assert hamming_distance(0x0F, 0x05) == 2


def test_variant_power_examples():
    assert variant_power(Variant(1.0, 0.0, 0.0, 8.0), 0) == 0.0
    assert variant_power(Variant(0.5, 2.0, 2.0, 6.0), 8) == 6.0
    v = Variant.spanning(2.0, 4.0)
    powers = [variant_power(v, hw) for hw in range(9)]
    assert all(a < b for a, b in zip(powers, powers[1:]))
    assert v.range_lo <= min(powers) and max(powers) <= v.range_hi
    with pytest.raises(ValueError):
        variant_power(v, 9)


def test_variant_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        Variant(0.0, 1.0, 0.0, 8.0)
    with pytest.raises(ConfigError):
        Variant(1.0, 1.0, 0.0, 8.0)  # HW 8 lands at 9


def test_select_variant_singleton():
    bank = identity_bank()
    sel = PufSelector(seed=3)
    assert {select_variant(sel, bank, "OP-2") for _ in range(100)} == {0}
    assert sel.counter == 100


def test_select_variant_uniform():
    bank = ladder_bank()
    sel = PufSelector(seed=2024)
    n = 30000
    draws = np.array([select_variant(sel, bank, "OP-3") for _ in range(n)])
    counts = np.bincount(draws, minlength=3)
    sigma = np.sqrt(n * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - n / 3) < 3 * sigma), counts
    assert sel.counter == n


def test_select_variant_deterministic():
    bank = ladder_bank()
    a, b = PufSelector(seed=99), PufSelector(seed=99)
    assert [select_variant(a, bank, "OP-1") for _ in range(500)] == \
        [select_variant(b, bank, "OP-1") for _ in range(500)]
    c = PufSelector(seed=99, counter=250)
    tail = [select_variant(c, bank, "OP-1") for _ in range(250)]
    d = PufSelector(seed=99)
    full = [select_variant(d, bank, "OP-1") for _ in range(500)]
    assert tail == full[250:]


def test_select_variant_unknown_label():
    with pytest.raises(ConfigError):
        select_variant(PufSelector(0), ladder_bank(), "OP-9")


def test_ladder_bank_ranges_and_overlap():
    bank = ladder_bank()
    spans = [(v.range_lo, v.range_hi) for v in bank.for_op("OP-1")]
    assert spans == [(1.0, 3.0), (2.0, 4.0), (3.0, 5.0)]
    assert bank.overlaps_consecutive()
    with pytest.raises(ConfigError):
        ladder_bank([1.0, 3.0, 2.0, 4.0, 5.0])


def test_bank_admits_cross_operation_collisions():
    collisions = ladder_bank().cross_op_collisions()
    assert any(a != b for a, _, b, _ in collisions)


def test_bank_json_round_trip():
    bank = ladder_bank([0.5, 1.0, 2.0, 4.0, 8.0, 9.0], 4)
    assert VariantBank.from_json(bank.to_json()) == bank


def test_layout_default_geometry():
    lay = build_layout()
    assert len(lay.slots) == 40
    assert lay.slots[lay.attack_slot_index].label == "OP-2"
    assert lay.attack_base == 16
    assert [s.label for s in lay.slots[:5]] == ["OP-1", "OP-2", "OP-3", "OP-4", "OP-1"]


def test_layout_exceeding_trace_length_is_rejected():
    with pytest.raises(ConfigError):
        build_layout(samples_per_op=4, lead=8, trace_length=150)
    with pytest.raises(ConfigError):
        LeakageConfig(trace_length=100)


@pytest.mark.parametrize("kw", [
    dict(model="power"), dict(defense="masking"), dict(noise_sigma=float("nan")),
    dict(noise_sigma=-1.0), dict(defense="swapper"), dict(log_variants=True),
    dict(reselect_granularity="per_round"), dict(samples_per_op=0),
])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        LeakageConfig(**kw)


def test_synthesize_trace_noiseless_determinism():
    cfg = LeakageConfig(noise_sigma=0.0)
    pt = bytes(range(16))
    a = synthesize_trace(pt, KEY, cfg)
    b = synthesize_trace(pt, KEY, cfg)
    assert np.array_equal(a.samples, b.samples)
    assert len(a.samples) == cfg.trace_length
    assert a.variant_log is None


def test_attack_sample_is_hw_of_attack_point():
    cfg = LeakageConfig(noise_sigma=0.0)
    rng = np.random.default_rng(1)
    for _ in range(20):
        pt = rng.bytes(16)
        tr = synthesize_trace(pt, KEY, cfg)
        for b in range(16):
            expected = hamming_weight(aes.attack_point_value(pt[b], KEY[b]))
            assert tr.samples[cfg.layout.attack_base + b] == expected
        # the SubBytes slot holds the sum over all 16 bytes
        s = cfg.layout.slots[cfg.layout.attack_slot_index]
        assert tr.samples[s.offset] == tr.samples[cfg.layout.attack_base:cfg.layout.attack_base + 16].sum()


def test_synthesize_trace_hd_model_uses_transition():
    cfg = LeakageConfig(noise_sigma=0.0, model="hamming_distance")
    pt = bytes(range(16))
    tr = synthesize_trace(pt, KEY, cfg)
    _, inter = aes.encrypt_block(pt, KEY, record=True)
    before = inter.state("add_round_key", 0)
    after = inter.state("sub_bytes", 1)
    for b in range(16):
        assert tr.samples[cfg.layout.attack_base + b] == hamming_distance(before[b], after[b])


def test_swapper_changes_magnitude_but_not_function():
    cfg = swapper()
    pt = bytes(16)
    sel = PufSelector(cfg.selector_seed)
    traces = [synthesize_trace(pt, KEY, cfg, sel) for _ in range(20)]
    ct = aes.encrypt_block(pt, KEY)[0]
    assert all(t.ciphertext == ct for t in traces)
    assert len({t.samples.tobytes() for t in traces}) > 1
    assert sel.counter == 20 * cfg.n_draws_per_trace()
    with pytest.raises(ConfigError):
        synthesize_trace(pt, KEY, cfg)


def test_synthesize_trace_matches_campaign_rows():
    cfg = swapper(log_variants=True, noise_sigma=0.0, reselect_granularity="per_op")
    src = PlaintextSource("random", seed=5)
    camp = simulate(10, KEY, cfg, src)
    sel = PufSelector(cfg.selector_seed)
    for t in range(10):
        tr = synthesize_trace(camp.plaintexts[t].tobytes(), KEY, cfg, sel)
        assert np.array_equal(tr.samples, camp.samples[t])
        assert np.array_equal(tr.variant_log, camp.variant_log[t])


def test_variant_log_only_when_requested():
    src = PlaintextSource("random", seed=1)
    assert simulate(4, KEY, swapper(), src).variant_log is None
    log = simulate(4, KEY, swapper(log_variants=True), src).variant_log
    assert log.shape == (4, 40)


@pytest.mark.parametrize("granularity", ["per_trace", "per_op"])
def test_range_containment(granularity):
    cfg = swapper(log_variants=True, reselect_granularity=granularity, adc_step=0.0)
    camp = simulate(300, KEY, cfg, PlaintextSource("random", seed=8))
    lay = cfg.layout
    for j, s in enumerate(lay.slots):
        variants = cfg.bank.for_op(s.label)
        lo = np.array([variants[v].range_lo for v in camp.variant_log[:, j]])
        hi = np.array([variants[v].range_hi for v in camp.variant_log[:, j]])
        vals = camp.samples[:, s.offset].astype(np.float64)
        # a slot sums 16 per-byte powers, each inside its variant's range
        assert np.all(vals >= 16 * lo - 1e-4) and np.all(vals <= 16 * hi + 1e-4)
    att = camp.samples[:, lay.attack_base:lay.attack_base + 16]
    v = camp.variant_log[:, lay.attack_slot_index]
    lo = np.array([cfg.bank.for_op("OP-2")[i].range_lo for i in v])[:, None]
    hi = np.array([cfg.bank.for_op("OP-2")[i].range_hi for i in v])[:, None]
    assert np.all(att >= lo) and np.all(att <= hi)


def test_per_trace_reselection_uses_one_variant_per_label():
    cfg = swapper(log_variants=True)
    camp = simulate(200, KEY, cfg, PlaintextSource("random", seed=2))
    labels = np.array([s.label for s in cfg.layout.slots])
    for label in OP_LABELS:
        cols = camp.variant_log[:, labels == label]
        assert np.all(cols == cols[:, :1])
    per_op = simulate(200, KEY, swapper(log_variants=True, reselect_granularity="per_op"),
                      PlaintextSource("random", seed=2)).variant_log
    cols = per_op[:, labels == "OP-1"]
    assert np.any(cols != cols[:, :1])


def test_functional_preservation_all_defenses():
    src = PlaintextSource("random", seed=4)
    for cfg in (LeakageConfig(), swapper(noise_sigma=2.0),
                swapper(reselect_granularity="per_op")):
        camp = simulate(300, KEY, cfg, src)
        ct, _ = aes.encrypt_batch(camp.plaintexts, aes.key_expansion(KEY))
        assert np.array_equal(camp.ciphertexts, ct)


def test_noise_statistics_on_idle_samples():
    cfg = LeakageConfig(noise_sigma=2.0, adc_step=0.0, seed=21)
    camp = simulate(5000, KEY, cfg, PlaintextSource("random", seed=3))
    idle = camp.samples[:, idle_samples(cfg.layout)].astype(np.float64).ravel()
    assert idle.size >= 100_000
    n = idle.size
    assert abs(idle.mean()) < 3 * 2.0 / np.sqrt(n)
    # std error of the sample std for Gaussian data is sigma / sqrt(2n)
    assert abs(idle.std(ddof=1) - 2.0) < 3 * 2.0 / np.sqrt(2 * n)


def test_adc_quantization():
    cfg = LeakageConfig(noise_sigma=2.0)
    camp = simulate(50, KEY, cfg, PlaintextSource("random", seed=3))
    scaled = camp.samples.astype(np.float64) * 256
    assert np.array_equal(scaled, np.round(scaled))


def test_enumerated_plaintexts_cover_every_value():
    src = PlaintextSource("enumerate", seed=7, positions=tuple(range(16)))
    pts = src.take(0, 512)
    for pos in range(16):
        assert sorted(pts[:256, pos]) == list(range(256))
        assert sorted(pts[256:, pos]) == list(range(256))
    assert not np.array_equal(pts[:, 0], pts[:, 1])
    assert np.array_equal(src.take(100, 300), pts[100:400])


def test_every_hw_class_at_attack_sample(tmp_path):
    cfg = LeakageConfig(noise_sigma=0.0)
    src = PlaintextSource("enumerate", seed=1, positions=(0,))
    path = tmp_path / "t.scf"
    header = generate_campaign(path, 256, KEY, cfg, src)
    assert header.n_traces == 256
    with TraceReader(path) as r:
        batch = next(r.iter_batches())
    assert set(batch.samples[:, cfg.layout.attack_base].astype(int)) == set(range(9))


def test_campaign_single_trace(tmp_path):
    path = tmp_path / "one.scf"
    generate_campaign(path, 1, KEY, LeakageConfig(), PlaintextSource())
    with TraceReader(path) as r:
        assert len(r) == 1 and len(list(r)) == 1


def test_campaign_files_are_byte_identical(tmp_path):
    cfg = swapper(noise_sigma=2.0, log_variants=True, seed=77)
    src = PlaintextSource("random", seed=9)
    generate_campaign(tmp_path / "a.scf", 1500, KEY, cfg, src)
    generate_campaign(tmp_path / "b.scf", 1500, KEY, cfg, src)
    assert (tmp_path / "a.scf").read_bytes() == (tmp_path / "b.scf").read_bytes()
    generate_campaign(tmp_path / "c.scf", 1500, KEY, swapper(noise_sigma=2.0, log_variants=True, seed=78), src)
    assert (tmp_path / "a.scf").read_bytes() != (tmp_path / "c.scf").read_bytes()


def test_metadata_records_config_and_seeds(tmp_path):
    cfg = swapper(noise_sigma=1.5, seed=123, log_variants=True)
    src = PlaintextSource("random", seed=9)
    header = generate_campaign(tmp_path / "m.scf", 3, KEY, cfg, src)
    meta = header.metadata
    assert meta["leakage.seed"] == "123"
    assert meta["leakage.selector_seed"] == str(cfg.selector_seed)
    assert meta["leakage.noise_sigma"] == "1.5"
    assert meta["plaintext.seed"] == "9"
    assert meta["variant_log_len"] == "40"
    assert VariantBank.from_json(meta["leakage.bank"]) == cfg.bank
    assert KEY.hex() not in "".join(meta.values())


def test_ranges_equal_full_run():
    cfg = swapper(noise_sigma=2.0, reselect_granularity="per_op", log_variants=True)
    src = PlaintextSource("random", seed=6)
    n = 3 * BLOCK_SIZE + 300
    full = simulate(n, KEY, cfg, src)
    part = simulate_range(1000, 2500, KEY, cfg, src)
    assert np.array_equal(part.samples, full.samples[1000:2500])
    assert np.array_equal(part.variant_log, full.variant_log[1000:2500])
    assert np.array_equal(part.plaintexts, full.plaintexts[1000:2500])


def test_parallel_generation_equals_serial(tmp_path):
    cfg = swapper(noise_sigma=2.0, log_variants=True)
    src = PlaintextSource("random", seed=6)
    n = 3 * BLOCK_SIZE + 17
    generate_campaign(tmp_path / "s.scf", n, KEY, cfg, src, jobs=1)
    generate_campaign(tmp_path / "p.scf", n, KEY, cfg, src, jobs=3)
    assert (tmp_path / "s.scf").read_bytes() == (tmp_path / "p.scf").read_bytes()
    assert sum(len(c) for c in iter_campaign_blocks(n, KEY, cfg, src)) == n
