"""Word-packed XNOR/popcount kernels for {-1,+1} dot products.

Layout: bit ``i`` of a vector lives in word ``i // 64`` at bit position
``i % 64`` (LSB first).  Bits past the logical length are kept zero by
:func:`pack`, but every kernel re-masks the tail word anyway, so garbage in
the padding never reaches a result.

A {0,1} bit ``x`` stands for the sign value ``2x - 1``.  For two length-n
vectors the ±1 dot product is ``2 * popcount(XNOR) - n``.  Scaling factors
are applied after the integer result is complete.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BadGeometry, Empty, LengthMismatch, ShapeMismatch

WORD_BITS = 64
_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


def n_words(n: int) -> int:
    return (n + WORD_BITS - 1) // WORD_BITS


def tail_mask(n: int) -> np.uint64:
    """Mask of valid bits in the last word of an ``n``-bit vector."""
    r = n % WORD_BITS
    return _ALL_ONES if r == 0 else np.uint64((1 << r) - 1)


def _word_masks(n: int) -> np.ndarray:
    masks = np.full(n_words(n), _ALL_ONES, dtype=np.uint64)
    masks[-1] = tail_mask(n)
    return masks


@dataclass(frozen=True)
class BitVector:
    n: int
    words: np.ndarray  # uint64, n_words(n) entries


@dataclass(frozen=True)
class PackedMatrix:
    rows: int
    cols: int
    row_words: np.ndarray  # uint64, shape (rows, n_words(cols))

    def row(self, i: int) -> BitVector:
        return BitVector(self.cols, self.row_words[i])


@dataclass(frozen=True)
class ScaledOutput:
    values: np.ndarray  # beta * raw
    beta: np.ndarray  # one per output channel
    raw: np.ndarray  # exact int64 ±1 dot products before scaling


def _pack_last_axis(bits: np.ndarray) -> np.ndarray:
    n = bits.shape[-1]
    nbytes = n_words(n) * 8
    packed = np.packbits(bits.astype(bool), axis=-1, bitorder="little")
    if packed.shape[-1] < nbytes:
        pad = [(0, 0)] * (packed.ndim - 1) + [(0, nbytes - packed.shape[-1])]
        packed = np.pad(packed, pad)
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64)


def pack(bits) -> BitVector:
    arr = np.asarray(bits).reshape(-1)
    if arr.size < 1:
        raise Empty("cannot pack an empty bit sequence")
    return BitVector(int(arr.size), _pack_last_axis(arr))


def unpack(v: BitVector) -> np.ndarray:
    raw = v.words.astype("<u8").view(np.uint8)
    return np.unpackbits(raw, bitorder="little")[: v.n]


def pack_rows(bits) -> PackedMatrix:
    arr = np.asarray(bits)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise Empty("need a non-empty 2-D bit array")
    return PackedMatrix(arr.shape[0], arr.shape[1], _pack_last_axis(arr))


def unpack_rows(m: PackedMatrix) -> np.ndarray:
    raw = np.ascontiguousarray(m.row_words.astype("<u8")).view(np.uint8)
    return np.unpackbits(raw, axis=-1, bitorder="little")[:, : m.cols]


def pack_signs(x) -> np.ndarray:
    """±1 values to {0,1} bits (``x >= 0`` -> 1)."""
    return (np.asarray(x) >= 0).astype(np.uint8)


def corrupt_padding(v, seed: int = 0):
    """Copy of ``v`` with random garbage written into its pad bits.

    Test hook: kernels must give identical results on the corrupted copy.
    """
    rng = np.random.default_rng(seed)
    if isinstance(v, BitVector):
        words, n = v.words.copy(), v.n
    else:
        words, n = v.row_words.copy(), v.cols
    garbage = rng.integers(0, 2**63, size=words[..., -1].shape, dtype=np.uint64) * np.uint64(2) + np.uint64(1)
    words[..., -1] |= garbage & ~tail_mask(n)
    if isinstance(v, BitVector):
        return BitVector(n, words)
    return PackedMatrix(v.rows, v.cols, words)


def xnor_popcount(a: BitVector, b: BitVector) -> int:
    """Number of positions where ``a`` and ``b`` agree."""
    if a.n != b.n:
        raise LengthMismatch(f"lengths differ: {a.n} vs {b.n}")
    agree = ~(a.words ^ b.words) & _word_masks(a.n)
    return int(np.bitwise_count(agree).sum())


def binary_dot(a: BitVector, b: BitVector) -> int:
    """±1 dot product of the vectors encoded by ``a`` and ``b``."""
    return 2 * xnor_popcount(a, b) - a.n


def _xnor_counts(w: np.ndarray, x: np.ndarray, masks: np.ndarray,
                 chunk_words: int = 1 << 22) -> np.ndarray:
    """Agreement counts between every row of ``w`` and every row of ``x``."""
    rows, nw = w.shape
    out = np.empty((rows, x.shape[0]), dtype=np.int64)
    step = max(1, chunk_words // max(1, rows * nw))
    for s in range(0, x.shape[0], step):
        blk = x[None, s:s + step, :]
        agree = ~(w[:, None, :] ^ blk) & masks
        out[:, s:s + step] = np.bitwise_count(agree).sum(axis=-1, dtype=np.int64)
    return out


def packed_gemm(w: PackedMatrix, x: PackedMatrix, workers: int = 1) -> np.ndarray:
    """Integer ±1 products ``(w.rows, x.rows)``, exact.

    Rows of ``w`` are split across ``workers`` threads; integer partial
    results are concatenated, so the output never depends on the split.
    """
    if w.cols != x.cols:
        raise ShapeMismatch(f"inner sizes differ: {w.cols} vs {x.cols}")
    masks = _word_masks(w.cols)
    if workers <= 1 or w.rows == 1:
        counts = _xnor_counts(w.row_words, x.row_words, masks)
    else:
        parts = np.array_split(np.arange(w.rows), min(workers, w.rows))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(
                lambda idx: _xnor_counts(w.row_words[idx], x.row_words, masks), parts))
        counts = np.concatenate(blocks, axis=0)
    return 2 * counts - w.cols


def binary_matvec(w: PackedMatrix, x: BitVector, betas, workers: int = 1) -> ScaledOutput:
    """``out_j = beta_j * (2 * popcount(XNOR(row_j, x)) - n)``."""
    betas = np.asarray(betas, dtype=np.float64).reshape(-1)
    if w.cols != x.n:
        raise ShapeMismatch(f"matrix has {w.cols} columns, vector has {x.n} bits")
    if betas.size != w.rows:
        raise ShapeMismatch(f"{betas.size} betas for {w.rows} rows")
    xm = PackedMatrix(1, x.n, x.words[None, :])
    raw = packed_gemm(w, xm, workers)[:, 0]
    return ScaledOutput(betas * raw, betas, raw)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int,
           pad_value: float = 0.0) -> tuple[np.ndarray, int, int]:
    """Patches of ``x`` (N, C, H, W) as rows ``(N*OH*OW, C*kh*kw)``.

    Columns follow (channel, kernel row, kernel col) order, matching a
    row-major flatten of a (C_out, C, kh, kw) weight tensor.
    """
    n, c, h, wdt = x.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(wdt, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise BadGeometry(f"kernel {kh}x{kw} does not fit a {h}x{wdt} input with padding {padding}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=pad_value)
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(n, oh, ow, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw), writeable=False)
    return view.reshape(n * oh * ow, c * kh * kw), oh, ow


def binary_conv2d(weights: PackedMatrix, activations, betas, kernel: tuple[int, int],
                  stride: int = 1, padding: int = 0, workers: int = 1) -> ScaledOutput:
    """Sign convolution lowered to patch extraction + packed GEMM.

    ``activations`` holds ±1 values, shape (C, H, W) or (N, C, H, W).
    Padded positions count as -1 (bit 0).  Output is (N, C_out, OH, OW),
    or (C_out, OH, OW) for unbatched input.
    """
    a = np.asarray(activations)
    squeeze = a.ndim == 3
    if squeeze:
        a = a[None]
    if a.ndim != 4:
        raise ShapeMismatch("activations must be (C,H,W) or (N,C,H,W)")
    kh, kw = kernel
    if kh < 1 or kw < 1 or stride < 1 or padding < 0:
        raise BadGeometry(f"bad geometry kernel={kernel} stride={stride} padding={padding}")
    if weights.cols != a.shape[1] * kh * kw:
        raise ShapeMismatch(
            f"filters have {weights.cols} bits, expected {a.shape[1]}*{kh}*{kw}")
    betas = np.asarray(betas, dtype=np.float64).reshape(-1)
    if betas.size != weights.rows:
        raise ShapeMismatch(f"{betas.size} betas for {weights.rows} filters")
    if not np.all(np.abs(a) == 1):
        raise ShapeMismatch("activations must be ±1")
    bits = (a > 0).astype(np.uint8)
    cols, oh, ow = im2col(bits, kh, kw, stride, padding, pad_value=0)
    raw = packed_gemm(weights, pack_rows(cols), workers)  # (C_out, N*OH*OW)
    n = a.shape[0]
    raw = raw.reshape(weights.rows, n, oh, ow).transpose(1, 0, 2, 3)
    values = raw * betas[None, :, None, None]
    if squeeze:
        raw, values = raw[0], values[0]
    return ScaledOutput(values, betas, raw)


def pack_filters(weights_pm1) -> PackedMatrix:
    """(C_out, C, kh, kw) ±1 weights to one packed row per filter."""
    w = np.asarray(weights_pm1)
    return pack_rows(pack_signs(w.reshape(w.shape[0], -1)))
