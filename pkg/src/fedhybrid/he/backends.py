"""Aggregation ciphers used by the protocol.

Both backends expose the same surface: ``encrypt`` a flat gradient into a list
of chunk ciphertexts, ``add`` two such lists, ``decrypt`` back to a vector, and
``dumps``/``loads`` for transport. ``ExactMock`` performs no cryptography and
adds exactly; it serves as the zero-error reference for ``CkksLite``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from ..errors import ContractError
from . import ckks
from .serialize import deserialize_ciphertext, serialize_ciphertext


class AggregationCipherBackend(Protocol):
    name: str

    def encrypt(self, g: np.ndarray, rng_seed) -> list: ...

    def add(self, a: Sequence, b: Sequence) -> list: ...

    def decrypt(self, chunks: Sequence, dim: int) -> np.ndarray: ...

    def dumps(self, chunks: Sequence) -> bytes: ...

    def loads(self, data: bytes) -> list: ...


def _frame(blobs: Sequence[bytes]) -> bytes:
    parts = [struct.pack("<I", len(blobs))]
    for blob in blobs:
        parts.append(struct.pack("<Q", len(blob)))
        parts.append(blob)
    return b"".join(parts)


def _unframe(data: bytes) -> list[bytes]:
    buf = memoryview(data)
    (count,) = struct.unpack_from("<I", buf, 0)
    offset = 4
    blobs = []
    for _ in range(count):
        (length,) = struct.unpack_from("<Q", buf, offset)
        offset += 8
        blobs.append(bytes(buf[offset : offset + length]))
        offset += length
    if offset != len(buf):
        raise ContractError("malformed update frame")
    return blobs


def _check_aligned(a: Sequence, b: Sequence) -> None:
    if len(a) != len(b):
        raise ContractError(f"chunk counts differ: {len(a)} vs {len(b)}")


class CkksLite:
    """Single-key CKKS; the holder of this object can decrypt."""

    name = "ckks"

    def __init__(self, params: ckks.HeParams, key_seed):
        self.params = params
        self.keys = ckks.keygen(params, key_seed)

    @property
    def public_key(self) -> ckks.PublicKey:
        return self.keys.public

    def encrypt(self, g, rng_seed) -> list[ckks.HeCiphertext]:
        plaintexts = ckks.pack_gradient(g, self.params)
        rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
        return [
            ckks.encrypt(p, self.keys.public, self.params, rng) for p in plaintexts
        ]

    def add(self, a, b) -> list[ckks.HeCiphertext]:
        _check_aligned(a, b)
        return [ckks.add_cipher(x, y) for x, y in zip(a, b)]

    def decrypt(self, chunks, dim: int) -> np.ndarray:
        plain = [ckks.decrypt(c, self.keys.secret, self.params) for c in chunks]
        out = ckks.unpack_gradient(plain, self.params)
        if out.shape[0] != dim:
            raise ContractError(f"decrypted {out.shape[0]} values, expected {dim}")
        return out

    def dumps(self, chunks) -> bytes:
        return _frame([serialize_ciphertext(c) for c in chunks])

    def loads(self, data: bytes) -> list[ckks.HeCiphertext]:
        return [deserialize_ciphertext(b, self.params) for b in _unframe(data)]


@dataclass(frozen=True, eq=False)
class MockCiphertext:
    tag: int
    values: np.ndarray


class ExactMock:
    name = "mock"

    def __init__(self, tag: int = 0):
        self.tag = int(tag)

    def encrypt(self, g, rng_seed=None) -> list[MockCiphertext]:
        return [MockCiphertext(self.tag, np.array(g, dtype=np.float64))]

    def add(self, a, b) -> list[MockCiphertext]:
        _check_aligned(a, b)
        out = []
        for x, y in zip(a, b):
            if x.tag != self.tag or y.tag != self.tag:
                raise ContractError("mock ciphertext belongs to a different backend")
            out.append(MockCiphertext(self.tag, x.values + y.values))
        return out

    def decrypt(self, chunks, dim: int) -> np.ndarray:
        out = np.concatenate([c.values for c in chunks])
        if out.shape[0] != dim:
            raise ContractError(f"decrypted {out.shape[0]} values, expected {dim}")
        return out

    def dumps(self, chunks) -> bytes:
        return _frame(
            [struct.pack("<Q", c.tag) + c.values.astype("<f8").tobytes() for c in chunks]
        )

    def loads(self, data: bytes) -> list[MockCiphertext]:
        out = []
        for blob in _unframe(data):
            (tag,) = struct.unpack_from("<Q", blob, 0)
            out.append(MockCiphertext(tag, np.frombuffer(blob[8:], dtype="<f8").copy()))
        return out
