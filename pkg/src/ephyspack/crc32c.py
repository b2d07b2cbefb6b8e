"""CRC-32C (Castagnoli) checksums.

The container format checksums every chunk payload and every footer section
with CRC-32C: polynomial 0x1EDC6F41, reflected in and out, initial register
0xFFFFFFFF, final XOR 0xFFFFFFFF. The calling convention matches
``zlib.crc32``: ``crc32c(b, crc32c(a)) == crc32c(a + b)``.

Two evaluation paths produce identical results:

* a table-driven bytewise loop, used for short inputs;
* a block-parallel path for long inputs that computes per-block registers
  vectorized across blocks with numpy and folds them with GF(2) shift
  matrices (the register update is linear over GF(2), so the register
  after ``A || B`` is ``shift(len(B))`` applied to the register after
  ``A``, XOR the zero-start register of ``B``).
"""

from __future__ import annotations

import numpy as np

_POLY_REFLECTED = 0x82F63B78  # 0x1EDC6F41 bit-reversed
_MASK = 0xFFFFFFFF

# Threshold below which the plain bytewise loop wins over numpy setup cost.
_FAST_PATH_MIN = 4096


def _build_table() -> list[int]:
    table = []
    for i in range(256):
        reg = i
        for _ in range(8):
            reg = (reg >> 1) ^ _POLY_REFLECTED if reg & 1 else reg >> 1
        table.append(reg)
    return table


_TABLE = _build_table()
_TABLE_NP = np.array(_TABLE, dtype=np.uint32)


def _update_bytewise(reg: int, data) -> int:
    table = _TABLE
    for byte in data:
        reg = table[(reg ^ byte) & 0xFF] ^ (reg >> 8)
    return reg


# A GF(2) linear map on the 32-bit register is stored as 32 ints: entry j is
# the image of the register with only bit j set.

def _gf2_apply(mat: list[int], vec: int) -> int:
    out = 0
    j = 0
    while vec:
        if vec & 1:
            out ^= mat[j]
        vec >>= 1
        j += 1
    return out


def _gf2_square(mat: list[int]) -> list[int]:
    return [_gf2_apply(mat, col) for col in mat]


def _shift_one_byte_matrix() -> list[int]:
    # Image of basis vector e_j under "feed one zero byte".
    return [_TABLE[(1 << j) & 0xFF] ^ ((1 << j) >> 8) for j in range(32)]


_SHIFT1 = _shift_one_byte_matrix()


def _shift_matrix(n_bytes: int) -> list[int]:
    """Matrix for feeding ``n_bytes`` zero bytes through the register."""
    result: list[int] | None = None
    power = _SHIFT1
    n = n_bytes
    while n:
        if n & 1:
            result = power[:] if result is None else [_gf2_apply(power, c) for c in result]
        n >>= 1
        if n:
            power = _gf2_square(power)
    if result is None:
        return [1 << j for j in range(32)]
    return result


def _gf2_apply_vec(mat: list[int], regs: np.ndarray) -> np.ndarray:
    """Apply a GF(2) matrix to a vector of registers, elementwise."""
    out = np.zeros_like(regs)
    for j in range(32):
        bit = (regs >> np.uint32(j)) & np.uint32(1)
        out ^= np.where(bit.astype(bool), np.uint32(mat[j]), np.uint32(0))
    return out


def _fast_raw(data: memoryview, reg: int) -> int:
    """Advance the raw register over ``data`` using the block-parallel path."""
    n = len(data)
    block = 1 << max(6, n.bit_length() // 2)
    nblocks = n // block
    body = nblocks * block

    arr = np.frombuffer(data[:body], dtype=np.uint8).reshape(nblocks, block)
    regs = np.zeros(nblocks, dtype=np.uint32)
    table = _TABLE_NP
    for j in range(block):
        regs = table[(regs ^ arr[:, j]) & np.uint32(0xFF)] ^ (regs >> np.uint32(8))

    # Tree-fold per-block registers. Padding with zero registers at the
    # front is a no-op (leading zero bytes from a zero register do not
    # change the register), so round up to a power of two.
    width = 1 << max(0, (nblocks - 1).bit_length())
    if width != nblocks:
        regs = np.concatenate([np.zeros(width - nblocks, dtype=np.uint32), regs])
    span = _shift_matrix(block)
    total_span = body
    while len(regs) > 1:
        regs = _gf2_apply_vec(span, regs[0::2]) ^ regs[1::2]
        if len(regs) > 1:
            span = _gf2_square(span)

    reg = _gf2_apply(_shift_matrix(total_span), reg) ^ int(regs[0])
    if body < n:
        reg = _update_bytewise(reg, data[body:])
    return reg


def crc32c(data, value: int = 0) -> int:
    """Return the CRC-32C of ``data``, continuing from ``value``."""
    buf = memoryview(data).cast("B") if not isinstance(data, (bytes, bytearray)) else data
    reg = (value ^ _MASK) & _MASK
    if len(buf) >= _FAST_PATH_MIN:
        reg = _fast_raw(memoryview(buf), reg)
    else:
        reg = _update_bytewise(reg, buf)
    return (reg ^ _MASK) & _MASK
