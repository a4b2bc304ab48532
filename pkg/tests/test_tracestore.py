import struct
import tracemalloc

import numpy as np
import pytest

from powerswap.tracestore import (
    HEADER_STRUCT, BadMagicError, TraceFileError, TraceFormatError, TraceReader, TraceRecord,
    TraceSetHeader, TraceWriter, TruncatedFileError, UnsupportedDtypeError, read_traceset,
    write_traceset,
)


def make_records(n, n_samples=50, log_len=0, seed=0):
    rng = np.random.default_rng(seed)
    return [
        TraceRecord(rng.bytes(16), rng.bytes(16),
                    rng.standard_normal(n_samples).astype(np.float32),
                    rng.integers(0, 3, log_len, dtype=np.uint8) if log_len else None)
        for _ in range(n)
    ]


def test_round_trip_100_records(tmp_path):
    recs = make_records(100)
    header = TraceSetHeader(0, 50, metadata={"purpose": "test", "a": "1=2"})
    written = write_traceset(tmp_path / "r.scf", header, recs)
    assert written.n_traces == 100
    h, it = read_traceset(tmp_path / "r.scf")
    assert h == written
    assert list(it) == recs


def test_round_trip_with_variant_log(tmp_path):
    recs = make_records(30, n_samples=8, log_len=5)
    header = TraceSetHeader(0, 8, flags=1, metadata={"variant_log_len": "5"})
    write_traceset(tmp_path / "v.scf", header, recs)
    h, it = read_traceset(tmp_path / "v.scf")
    assert h.has_variant_log and h.variant_log_len == 5
    assert list(it) == recs


def test_empty_campaign(tmp_path):
    path = tmp_path / "e.scf"
    write_traceset(path, TraceSetHeader(0, 200), [])
    assert path.stat().st_size == HEADER_STRUCT.size
    h, it = read_traceset(path)
    assert h.n_traces == 0 and list(it) == []


def test_header_layout_is_little_endian(tmp_path):
    path = tmp_path / "h.scf"
    write_traceset(path, TraceSetHeader(0, 3, metadata={"k": "v"}), make_records(2, 3))
    raw = path.read_bytes()
    assert raw[:8] == b"SCFTRC01"
    assert raw[8:16] == (2).to_bytes(8, "little")
    assert raw[16:20] == (3).to_bytes(4, "little")
    assert raw[20] == 0 and raw[21] == 0
    assert raw[22:26] == (4).to_bytes(4, "little")
    assert raw[26:30] == b"k=v\n"
    rec = raw[30:30 + 32 + 12]
    first = make_records(2, 3)[0]
    assert rec[:16] == first.plaintext and rec[16:32] == first.ciphertext
    assert struct.unpack("<3f", rec[32:]) == tuple(first.samples.tolist())


def test_rewrite_is_byte_identical(tmp_path):
    recs = make_records(20)
    for name in ("a", "b"):
        write_traceset(tmp_path / name, TraceSetHeader(0, 50, metadata={"x": "y", "b": "c"}), recs)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_flipped_magic_is_rejected(tmp_path):
    path = tmp_path / "m.scf"
    write_traceset(path, TraceSetHeader(0, 50), make_records(3))
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_traceset(path)


def test_truncated_mid_record_names_index(tmp_path):
    path = tmp_path / "t.scf"
    write_traceset(path, TraceSetHeader(0, 50), make_records(10))
    rs = 32 + 4 * 50
    raw = path.read_bytes()
    path.write_bytes(raw[:len(raw) - 3 * rs - rs // 2])
    with pytest.raises(TruncatedFileError) as exc:
        TraceReader(path)
    assert exc.value.record_index == 6
    assert "record 6" in str(exc.value)


def test_oversized_count_is_truncation_not_short_read(tmp_path):
    path = tmp_path / "o.scf"
    write_traceset(path, TraceSetHeader(0, 50), make_records(4))
    raw = bytearray(path.read_bytes())
    raw[8:16] = (5).to_bytes(8, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(TruncatedFileError) as exc:
        read_traceset(path)
    assert exc.value.record_index == 4


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "x.scf"
    write_traceset(path, TraceSetHeader(0, 50), make_records(2))
    with open(path, "ab") as fh:
        fh.write(b"\0")
    with pytest.raises(TraceFormatError):
        TraceReader(path)


def test_unsupported_dtype(tmp_path):
    path = tmp_path / "d.scf"
    write_traceset(path, TraceSetHeader(0, 50), make_records(2))
    raw = bytearray(path.read_bytes())
    raw[20] = 1
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedDtypeError):
        TraceReader(path)
    with pytest.raises(UnsupportedDtypeError):
        TraceWriter(tmp_path / "w.scf", TraceSetHeader(0, 50, sample_dtype=2))


def test_error_kinds_are_distinct():
    kinds = {BadMagicError, TruncatedFileError, UnsupportedDtypeError}
    assert len(kinds) == 3 and all(issubclass(k, TraceFileError) for k in kinds)


def test_unwritable_path_has_context(tmp_path):
    target = tmp_path / "missing" / "f.scf"
    with pytest.raises(OSError) as exc:
        write_traceset(target, TraceSetHeader(0, 5), [])
    assert "missing" in str(exc.value)


def test_variant_log_flag_needs_length(tmp_path):
    with pytest.raises(TraceFormatError):
        TraceSetHeader(0, 5, flags=1).record_size


def test_batches_stream_in_order(tmp_path):
    recs = make_records(1000, 10)
    write_traceset(tmp_path / "s.scf", TraceSetHeader(0, 10), recs)
    with TraceReader(tmp_path / "s.scf") as r:
        batches = list(r.iter_batches(batch_size=300))
        assert [b.start for b in batches] == [0, 300, 600, 900]
        pts = np.concatenate([b.plaintexts for b in batches])
        part = list(r.iter_batches(batch_size=64, start=250, stop=260))
    assert pts.tobytes() == b"".join(rec.plaintext for rec in recs)
    assert len(part) == 1 and part[0].plaintexts.tobytes() == b"".join(
        rec.plaintext for rec in recs[250:260])


def _peak_read_memory(path):
    tracemalloc.start()
    total = 0.0
    with TraceReader(path) as r:
        for batch in r.iter_batches(batch_size=256):
            total += float(batch.samples.sum())
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return peak


def test_streaming_memory_independent_of_file_size(tmp_path):
    n_samples = 200
    rng = np.random.default_rng(0)
    for name, n in (("small", 2_000), ("large", 40_000)):
        with TraceWriter(tmp_path / name, TraceSetHeader(0, n_samples)) as w:
            for _ in range(n // 2000):
                w.write_batch(rng.integers(0, 256, (2000, 16)), rng.integers(0, 256, (2000, 16)),
                              rng.standard_normal((2000, n_samples)))
    large_size = (tmp_path / "large").stat().st_size
    cap = 2 * 1024 * 1024
    assert large_size > 10 * cap
    small_peak = _peak_read_memory(tmp_path / "small")
    large_peak = _peak_read_memory(tmp_path / "large")
    assert large_peak < cap
    assert large_peak < 1.5 * small_peak + 64 * 1024
