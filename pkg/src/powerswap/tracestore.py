"""Binary container for trace campaigns.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic "SCFTRC01"
    8       8     n_traces        u64
    16      4     n_samples       u32
    20      1     sample_dtype    u8   (0 = IEEE-754 binary32 LE)
    21      1     flags           u8   (bit0 = variant log present)
    22      4     metadata_len    u32
    26      m     metadata        UTF-8, one ``key=value`` per line, keys sorted
    26+m    ...   n_traces fixed-size records:
                    plaintext  16 bytes
                    ciphertext 16 bytes
                    samples    n_samples x f32
                    variant log  variant_log_len x u8   (only if flags bit0;
                                 length taken from the ``variant_log_len``
                                 metadata key)

Readers stream records in fixed-size batches, so memory does not grow with
the number of traces.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

import numpy as np

MAGIC = b"SCFTRC01"
HEADER_STRUCT = struct.Struct("<8sQIBBI")
DTYPE_FLOAT32 = 0
FLAG_VARIANT_LOG = 0x01


class TraceFileError(Exception):
    """Base class for trace file problems."""


class BadMagicError(TraceFileError):
    pass


class UnsupportedDtypeError(TraceFileError):
    pass


class TruncatedFileError(TraceFileError):
    def __init__(self, path, record_index: int, message: str):
        super().__init__(f"{path}: truncated at record {record_index}: {message}")
        self.record_index = record_index


class TraceFormatError(TraceFileError):
    pass


def encode_metadata(meta: dict[str, str]) -> bytes:
    lines = []
    for key in sorted(meta):
        value = str(meta[key])
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"metadata entry {key!r} cannot contain '=' in key or newlines")
        lines.append(f"{key}={value}\n")
    return "".join(lines).encode("utf-8")


def decode_metadata(raw: bytes) -> dict[str, str]:
    meta = {}
    for line in raw.decode("utf-8").splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise TraceFormatError(f"malformed metadata line {line!r}")
        meta[key] = value
    return meta


@dataclass
class TraceSetHeader:
    n_traces: int
    n_samples: int
    sample_dtype: int = DTYPE_FLOAT32
    flags: int = 0
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def has_variant_log(self) -> bool:
        return bool(self.flags & FLAG_VARIANT_LOG)

    @property
    def variant_log_len(self) -> int:
        if not self.has_variant_log:
            return 0
        try:
            return int(self.metadata["variant_log_len"])
        except (KeyError, ValueError):
            raise TraceFormatError("variant log flagged but 'variant_log_len' metadata missing") from None

    @property
    def record_dtype(self) -> np.dtype:
        fields = [("plaintext", np.uint8, (16,)), ("ciphertext", np.uint8, (16,)),
                  ("samples", "<f4", (self.n_samples,))]
        if self.has_variant_log:
            fields.append(("variant_log", np.uint8, (self.variant_log_len,)))
        return np.dtype(fields)

    @property
    def record_size(self) -> int:
        return self.record_dtype.itemsize

    def to_bytes(self) -> bytes:
        meta = encode_metadata(self.metadata)
        return HEADER_STRUCT.pack(MAGIC, self.n_traces, self.n_samples, self.sample_dtype,
                                  self.flags, len(meta)) + meta

    @property
    def size(self) -> int:
        return HEADER_STRUCT.size + len(encode_metadata(self.metadata))


@dataclass
class TraceRecord:
    plaintext: bytes
    ciphertext: bytes
    samples: np.ndarray
    variant_log: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, TraceRecord):
            return NotImplemented
        same_log = (self.variant_log is None and other.variant_log is None) or (
            self.variant_log is not None and other.variant_log is not None
            and np.array_equal(self.variant_log, other.variant_log))
        return (self.plaintext == other.plaintext and self.ciphertext == other.ciphertext
                and np.array_equal(np.asarray(self.samples, np.float32),
                                   np.asarray(other.samples, np.float32))
                and same_log)


@dataclass
class RecordBatch:
    """Consecutive records as column arrays."""

    start: int
    plaintexts: np.ndarray
    ciphertexts: np.ndarray
    samples: np.ndarray
    variant_log: np.ndarray | None

    def __len__(self):
        return len(self.plaintexts)


class TraceWriter:
    """Streams records to ``path``; ``n_traces`` in the header is patched on close."""

    def __init__(self, path, header: TraceSetHeader):
        if header.sample_dtype != DTYPE_FLOAT32:
            raise UnsupportedDtypeError(f"sample dtype {header.sample_dtype} not supported")
        self.path = os.fspath(path)
        self.header = replace(header, n_traces=0, metadata=dict(header.metadata))
        self._dtype = self.header.record_dtype
        try:
            self._fh = open(self.path, "wb")
        except OSError as exc:
            raise OSError(exc.errno, f"cannot open trace file for writing: {exc.strerror}", self.path) from exc
        self._fh.write(self.header.to_bytes())

    def write_batch(self, plaintexts, ciphertexts, samples, variant_log=None) -> None:
        pts = np.asarray(plaintexts, np.uint8).reshape(-1, 16)
        rec = np.zeros(len(pts), dtype=self._dtype)
        rec["plaintext"] = pts
        rec["ciphertext"] = np.asarray(ciphertexts, np.uint8).reshape(-1, 16)
        rec["samples"] = np.asarray(samples, np.float32).reshape(len(pts), self.header.n_samples)
        if self.header.has_variant_log:
            if variant_log is None:
                raise ValueError("header declares a variant log but none was given")
            rec["variant_log"] = np.asarray(variant_log, np.uint8).reshape(len(pts), -1)
        self._fh.write(rec.tobytes())
        self.header.n_traces += len(pts)

    def write(self, record: TraceRecord) -> None:
        self.write_batch(
            np.frombuffer(record.plaintext, np.uint8), np.frombuffer(record.ciphertext, np.uint8),
            record.samples, record.variant_log,
        )

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(self.header.to_bytes())
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_traceset(path, header: TraceSetHeader, records: Iterable[TraceRecord]) -> TraceSetHeader:
    """Write ``records`` under ``header``; returns the header as written."""
    with TraceWriter(path, header) as writer:
        for rec in records:
            writer.write(rec)
    return writer.header


class TraceReader:
    """Random-access, batch-streaming reader. Safe to open one per worker."""

    def __init__(self, path):
        self.path = os.fspath(path)
        self._fh = open(self.path, "rb")
        try:
            self.header, self.data_offset = self._read_header()
            self._check_length()
        except Exception:
            self._fh.close()
            raise

    def _read_header(self):
        raw = self._fh.read(HEADER_STRUCT.size)
        if len(raw) < 8 or raw[:8] != MAGIC:
            raise BadMagicError(f"{self.path}: not a trace file (bad magic {raw[:8]!r})")
        if len(raw) < HEADER_STRUCT.size:
            raise TraceFormatError(f"{self.path}: header truncated")
        _, n, s, dtype, flags, mlen = HEADER_STRUCT.unpack(raw)
        if dtype != DTYPE_FLOAT32:
            raise UnsupportedDtypeError(f"{self.path}: unsupported sample dtype {dtype}")
        meta_raw = self._fh.read(mlen)
        if len(meta_raw) < mlen:
            raise TraceFormatError(f"{self.path}: metadata truncated")
        header = TraceSetHeader(n, s, dtype, flags, decode_metadata(meta_raw))
        return header, HEADER_STRUCT.size + mlen

    def _check_length(self):
        size = os.fstat(self._fh.fileno()).st_size
        payload = size - self.data_offset
        rs = self.header.record_size
        expected = self.header.n_traces * rs
        if payload < expected:
            idx = payload // rs
            raise TruncatedFileError(
                self.path, idx,
                f"header declares {self.header.n_traces} records, file holds {payload / rs:.2f}",
            )
        if payload > expected:
            raise TraceFormatError(
                f"{self.path}: {payload - expected} trailing bytes after {self.header.n_traces} records"
            )

    def __len__(self):
        return self.header.n_traces

    def iter_batches(self, batch_size: int = 4096, start: int = 0,
                     stop: int | None = None) -> Iterator[RecordBatch]:
        n = self.header.n_traces
        stop = n if stop is None else min(stop, n)
        dtype = self.header.record_dtype
        rs = dtype.itemsize
        pos = start
        while pos < stop:
            m = min(batch_size, stop - pos)
            self._fh.seek(self.data_offset + pos * rs)
            raw = self._fh.read(m * rs)
            if len(raw) < m * rs:
                raise TruncatedFileError(self.path, pos + len(raw) // rs, "short read")
            rec = np.frombuffer(raw, dtype=dtype)
            yield RecordBatch(
                pos, rec["plaintext"], rec["ciphertext"], rec["samples"],
                rec["variant_log"] if self.header.has_variant_log else None,
            )
            pos += m

    def __iter__(self) -> Iterator[TraceRecord]:
        for batch in self.iter_batches(batch_size=256):
            for i in range(len(batch)):
                yield TraceRecord(
                    batch.plaintexts[i].tobytes(), batch.ciphertexts[i].tobytes(),
                    batch.samples[i].copy(),
                    None if batch.variant_log is None else batch.variant_log[i].copy(),
                )

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_traceset(path) -> tuple[TraceSetHeader, Iterator[TraceRecord]]:
    """Open ``path`` and return its header plus a lazy record iterator.

    Format problems in the header surface immediately; the file is closed
    when the iterator is exhausted.
    """
    reader = TraceReader(path)

    def records():
        with reader:
            yield from reader

    return reader.header, records()
