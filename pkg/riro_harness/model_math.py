"""Desk-scale versions of the model-side equations: scaled dot-product attention, blockwise absmax quantization,
low-rank adaptation on top of quantized weights, and the parameter/storage accounting that goes with it.

Matrices are 2-D float numpy arrays throughout."""


import math
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from riro_harness import run_settings


Matrix = np.ndarray


def as_matrix(values, name: str = 'matrix') -> Matrix:
    """Validates and converts to a 2-D float array with finite entries."""

    matrix = np.asarray(values, dtype=float)
    if matrix.ndim != 2 or 0 in matrix.shape:
        raise ValueError(f'{name} must be a non-empty 2-D matrix, got shape {matrix.shape}')
    if not np.all(np.isfinite(matrix)):
        raise ValueError(f'{name} contains non-finite values')

    return matrix


def attention_weights(Q, K) -> Matrix:
    """Row-wise softmax of QK^T / sqrt(d_k)."""

    Q, K = as_matrix(Q, 'Q'), as_matrix(K, 'K')
    if Q.shape[1] != K.shape[1]:
        raise ValueError(f'Q and K disagree on d_k: {Q.shape[1]} != {K.shape[1]}')
    scores = Q @ K.T / math.sqrt(Q.shape[1])

    # scipy's softmax subtracts the row max before exponentiating
    return softmax(scores, axis=1)


def attention(Q, K, V) -> Matrix:
    """softmax(QK^T / sqrt(d_k)) V, shape (Q rows x V cols)."""

    V = as_matrix(V, 'V')
    weights = attention_weights(Q, K)
    if weights.shape[1] != V.shape[0]:
        raise ValueError(f'K and V disagree on row count: {weights.shape[1]} != {V.shape[0]}')

    return weights @ V


@dataclass(frozen=True)
class QuantizedTensor:
    """Signed integer codes for every element (row-major) plus one scale per block of `block_size` elements."""
    rows: int
    cols: int
    levels: np.ndarray
    block_size: int
    scales: np.ndarray
    bits: int = run_settings.quant_bits

    @property
    def n_blocks(self) -> int:
        return math.ceil(self.rows * self.cols / self.block_size)


def _check_bits(bits: int) -> None:
    if not 2 <= bits <= 8:
        raise ValueError(f'bits must lie in [2, 8], got {bits}')
    return None


def code_range(bits: int) -> tuple:
    return -2 ** (bits - 1), 2 ** (bits - 1) - 1


def quantize(W, bits: int = run_settings.quant_bits, block_size: int = run_settings.quant_block_size) -> QuantizedTensor:
    """Symmetric absmax quantization per block: scale = absmax / (2^(bits-1) - 1), code = round(value / scale).
    All-zero blocks get scale 1."""

    _check_bits(bits)
    if block_size < 1:
        raise ValueError(f'block_size must be >= 1, got {block_size}')
    W = as_matrix(W, 'W')
    rows, cols = W.shape

    flat = W.reshape(-1)
    n_blocks = math.ceil(flat.size / block_size)
    padded = np.zeros(n_blocks * block_size)
    padded[:flat.size] = flat
    blocks = padded.reshape(n_blocks, block_size)

    low, high = code_range(bits)
    absmax = np.max(np.abs(blocks), axis=1)
    scales = np.where(absmax > 0, absmax / high, 1.0)
    codes = np.clip(np.rint(blocks / scales[:, None]), low, high).astype(np.int8)

    return QuantizedTensor(rows=rows, cols=cols, levels=codes.reshape(-1)[:flat.size], block_size=block_size,
                           scales=scales, bits=bits)


def dequantize(T: QuantizedTensor) -> Matrix:
    """code x block scale for every element, shape restored."""

    element_scales = np.repeat(T.scales, T.block_size)[:T.levels.size]

    return (T.levels.astype(float) * element_scales).reshape(T.rows, T.cols)


def block_scales_per_element(T: QuantizedTensor) -> Matrix:
    """The scale that applies to each element, in the tensor's shape."""

    return np.repeat(T.scales, T.block_size)[:T.levels.size].reshape(T.rows, T.cols)


@dataclass(frozen=True)
class LowRankDelta:
    """U (m x r) and V (n x r), so that the weight update is U V^T."""
    U: Matrix
    V: Matrix

    def __post_init__(self):
        U, V = as_matrix(self.U, 'U'), as_matrix(self.V, 'V')
        if U.shape[1] != V.shape[1]:
            raise ValueError(f'U and V disagree on rank: {U.shape[1]} != {V.shape[1]}')
        rank = U.shape[1]
        if rank > min(U.shape[0], V.shape[0]):
            raise ValueError(f'rank {rank} exceeds min(m, n) = {min(U.shape[0], V.shape[0])}')
        object.__setattr__(self, 'U', U)
        object.__setattr__(self, 'V', V)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def product(self) -> Matrix:
        return self.U @ self.V.T


def apply_low_rank(W_q: QuantizedTensor, delta: LowRankDelta) -> Matrix:
    """dequantize(W_q) + U V^T."""

    if (W_q.rows, W_q.cols) != (delta.U.shape[0], delta.V.shape[0]):
        raise ValueError(f'weight is {W_q.rows}x{W_q.cols} but delta is '
                         f'{delta.U.shape[0]}x{delta.V.shape[0]}')

    return dequantize(W_q) + delta.product()


@dataclass(frozen=True)
class ParamCount:
    trainable: int
    full: int

    @property
    def ratio(self) -> float:
        return self.trainable / self.full


def trainable_param_count(m: int, n: int, r: int) -> ParamCount:
    """Parameters in the U and V factors of one adapted m x n weight: r * (m + n)."""

    if r < 1:
        raise ValueError(f'rank must be >= 1, got {r}')
    if m < 1 or n < 1:
        raise ValueError(f'matrix dimensions must be >= 1, got {m}x{n}')

    return ParamCount(trainable=r * (m + n), full=m * n)


@dataclass(frozen=True)
class StorageEstimate:
    quantized_bytes: float  # codes plus scales
    baseline_bytes: float

    @property
    def saving(self) -> float:
        return 1 - self.quantized_bytes / self.baseline_bytes


def storage_estimate(m: int, n: int, bits: int = run_settings.quant_bits,
                     block_size: int = run_settings.quant_block_size) -> StorageEstimate:
    """bits * m * n / 8 bytes of codes plus one fp32 scale per block, against a 16-bit dense weight."""

    _check_bits(bits)
    if block_size < 1:
        raise ValueError(f'block_size must be >= 1, got {block_size}')
    if m < 1 or n < 1:
        raise ValueError(f'matrix dimensions must be >= 1, got {m}x{n}')
    n_scales = math.ceil(m * n / block_size)

    return StorageEstimate(quantized_bytes=bits * m * n / 8 + n_scales * run_settings.scale_bytes,
                           baseline_bytes=run_settings.baseline_weight_bits * m * n / 8)
