"""AES-128 encryption with intermediate-value recording.

The state is kept as a flat array of 16 bytes in FIPS-197 column-major
order, so plaintext byte ``i`` is state byte ``i``. Every round operation
works on arrays of shape ``(..., 16)`` which lets the trace simulator
encrypt whole batches at once.

The attack point used by the CPA engine is the first-round SubBytes output,
``sbox(pt[i] ^ key[i])``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SBOX = np.array([
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
], dtype=np.uint8)

RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)

N_ROUNDS = 10

# new[r + 4c] = old[r + 4((c + r) % 4)]
SHIFT_ROWS_INDEX = np.array(
    [(i % 4) + 4 * (((i // 4) + (i % 4)) % 4) for i in range(16)], dtype=np.intp
)


def _as_block(data, name: str = "block") -> np.ndarray:
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    if arr.shape != (16,):
        raise ValueError(f"{name} must be exactly 16 bytes, got {arr.size}")
    return arr


def sbox_lookup(b: int) -> int:
    """Forward AES S-box."""
    return int(SBOX[b & 0xFF])


def attack_point_value(pt_byte: int, key_byte: int) -> int:
    """First-round SubBytes output for one byte position."""
    return int(SBOX[(pt_byte ^ key_byte) & 0xFF])


def key_expansion(key) -> np.ndarray:
    """Expand a 16-byte key into the 11 AES-128 round keys, shape ``(11, 16)``."""
    k = _as_block(key, "key")
    words = [k[4 * i:4 * i + 4].copy() for i in range(4)]
    for i in range(4, 4 * (N_ROUNDS + 1)):
        temp = words[i - 1].copy()
        if i % 4 == 0:
            temp = SBOX[np.roll(temp, -1)]
            temp[0] ^= RCON[i // 4 - 1]
        words.append(words[i - 4] ^ temp)
    return np.concatenate(words).reshape(N_ROUNDS + 1, 16)


def sub_bytes(state: np.ndarray) -> np.ndarray:
    return SBOX[state]


def shift_rows(state: np.ndarray) -> np.ndarray:
    return state[..., SHIFT_ROWS_INDEX]


def _xtime(a: np.ndarray) -> np.ndarray:
    return ((a << 1) ^ np.where(a & 0x80, 0x1B, 0x00)).astype(np.uint8)


def mix_columns(state: np.ndarray) -> np.ndarray:
    s = state.reshape(state.shape[:-1] + (4, 4))
    a0, a1, a2, a3 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    total = a0 ^ a1 ^ a2 ^ a3
    out = np.empty_like(s)
    out[..., 0] = a0 ^ total ^ _xtime(a0 ^ a1)
    out[..., 1] = a1 ^ total ^ _xtime(a1 ^ a2)
    out[..., 2] = a2 ^ total ^ _xtime(a2 ^ a3)
    out[..., 3] = a3 ^ total ^ _xtime(a3 ^ a0)
    return out.reshape(state.shape)


def add_round_key(state: np.ndarray, round_key: np.ndarray) -> np.ndarray:
    return state ^ round_key


@dataclass
class IntermediateTrace:
    """States recorded during one (or a batch of) encryptions.

    Arrays carry an optional leading batch axis. ``add_round_key[r]`` is the
    state after the AddRoundKey of round ``r`` (0..10); ``sub_bytes[r - 1]``,
    ``shift_rows[r - 1]`` hold rounds 1..10 and ``mix_columns[r - 1]`` rounds
    1..9.
    """

    add_round_key: np.ndarray
    sub_bytes: np.ndarray
    shift_rows: np.ndarray
    mix_columns: np.ndarray

    def state(self, op: str, round_: int) -> np.ndarray:
        """State after operation ``op`` of round ``round_``."""
        if op == "add_round_key":
            return self.add_round_key[..., round_, :]
        if round_ < 1 or (op == "mix_columns" and round_ == N_ROUNDS):
            raise KeyError(f"{op} does not run in round {round_}")
        return getattr(self, op)[..., round_ - 1, :]

    def input_state(self, op: str, round_: int, plaintext: np.ndarray) -> np.ndarray:
        """State entering operation ``op`` of round ``round_``."""
        if op == "add_round_key":
            if round_ == 0:
                return plaintext
            prev = "shift_rows" if round_ == N_ROUNDS else "mix_columns"
            return self.state(prev, round_)
        if op == "sub_bytes":
            return self.state("add_round_key", round_ - 1)
        if op == "shift_rows":
            return self.state("sub_bytes", round_)
        return self.state("shift_rows", round_)


def encrypt_batch(plaintexts: np.ndarray, round_keys: np.ndarray, record: bool = False):
    """Encrypt an ``(n, 16)`` uint8 array of blocks under pre-expanded round keys.

    Returns ``(ciphertexts, IntermediateTrace | None)``; recorded arrays have
    shape ``(n, rounds, 16)``.
    """
    state = np.asarray(plaintexts, dtype=np.uint8)
    if state.shape[-1] != 16:
        raise ValueError("plaintexts must have a trailing axis of 16 bytes")
    lead = state.shape[:-1]
    if record:
        ark = np.empty(lead + (N_ROUNDS + 1, 16), np.uint8)
        sb = np.empty(lead + (N_ROUNDS, 16), np.uint8)
        sr = np.empty(lead + (N_ROUNDS, 16), np.uint8)
        mc = np.empty(lead + (N_ROUNDS - 1, 16), np.uint8)

    state = add_round_key(state, round_keys[0])
    if record:
        ark[..., 0, :] = state
    for r in range(1, N_ROUNDS + 1):
        state = sub_bytes(state)
        if record:
            sb[..., r - 1, :] = state
        state = shift_rows(state)
        if record:
            sr[..., r - 1, :] = state
        if r != N_ROUNDS:
            state = mix_columns(state)
            if record:
                mc[..., r - 1, :] = state
        state = add_round_key(state, round_keys[r])
        if record:
            ark[..., r, :] = state

    if not record:
        return state, None
    return state, IntermediateTrace(ark, sb, sr, mc)


def encrypt_block(pt, key, record: bool = False):
    """Encrypt one 16-byte block. Returns ``(ciphertext_bytes, IntermediateTrace | None)``."""
    block = _as_block(pt, "plaintext")
    ct, trace = encrypt_batch(block, key_expansion(key), record=record)
    return ct.tobytes(), trace
