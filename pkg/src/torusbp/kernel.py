"""Bit-sliced stepping of up to 64 independent configurations per machine word.

A *lane array* has shape ``(W, L, ..., L)`` and dtype uint64: bit b of
``lanes[w, c0, ..., c_{d-1}]`` is the color of node c in configuration
``64 * w + b``.  Neighbor planes come from rolling the array along each
lattice axis; neighbor-count thresholds are evaluated with a bit-parallel
"at least k of n" network, so every boolean operation advances 64 runs.
"""
from __future__ import annotations

import numpy as np

from .lattice import TorusShape

LANE_BITS = 64
ONES = np.uint64(0xFFFFFFFFFFFFFFFF)
_BIT = np.left_shift(np.uint64(1), np.arange(LANE_BITS, dtype=np.uint64))


def n_words(n_lanes: int) -> int:
    return max(1, -(-n_lanes // LANE_BITS))


def lane_mask(n_lanes: int) -> np.ndarray:
    """Per-word mask of the lanes in use."""
    w = n_words(n_lanes)
    mask = np.zeros(w, np.uint64)
    full, rest = divmod(n_lanes, LANE_BITS)
    mask[:full] = ONES
    if rest:
        mask[full] = (np.uint64(1) << np.uint64(rest)) - np.uint64(1)
    return mask


def pack(flat_configs: np.ndarray, shape: TorusShape) -> np.ndarray:
    """Pack boolean configurations of shape (B, L**d) into a lane array."""
    flat_configs = np.asarray(flat_configs, dtype=bool)
    B = flat_configs.shape[0]
    W = n_words(B)
    padded = np.zeros((W * LANE_BITS, shape.n_nodes), bool)
    padded[:B] = flat_configs
    # little-endian byte packing along the lane axis, then view 8 bytes as a word
    by = np.packbits(padded.reshape(W, LANE_BITS, -1), axis=1, bitorder="little")
    words = np.ascontiguousarray(by.transpose(0, 2, 1)).view("<u8")[..., 0].astype(np.uint64)
    return words.reshape((W,) + shape.dims, order="F")


def unpack(lanes: np.ndarray, n_lanes: int) -> np.ndarray:
    """Inverse of :func:`pack`: boolean array of shape (n_lanes, L**d)."""
    W = lanes.shape[0]
    flat = lanes.reshape(W, -1, order="F").astype("<u8")
    by = flat[..., None].view(np.uint8)  # (W, N, 8)
    bits = np.unpackbits(by, axis=2, bitorder="little")  # (W, N, 64)
    return bits.transpose(0, 2, 1).reshape(W * LANE_BITS, -1)[:n_lanes].astype(bool)


def pack_subsets(node_indices: np.ndarray, shape: TorusShape) -> np.ndarray:
    """Lane array where lane b is black exactly on ``node_indices[b]``.

    ``node_indices`` has shape (B, k) of bit indices.
    """
    node_indices = np.asarray(node_indices, dtype=np.int64)
    B, k = node_indices.shape
    W = n_words(B)
    flat = np.zeros((W, shape.n_nodes), np.uint64)
    lane = np.arange(B)
    words = np.repeat(lane // LANE_BITS, k)
    bits = np.repeat(_BIT[lane % LANE_BITS], k)
    np.bitwise_or.at(flat, (words, node_indices.ravel()), bits)
    return flat.reshape((W,) + shape.dims, order="F")


def neighbor_planes(x: np.ndarray) -> list[np.ndarray]:
    """Neighbor planes ordered by dimension, then -1 before +1."""
    out = []
    for ax in range(1, x.ndim):
        out.append(np.roll(x, 1, axis=ax))  # value of the neighbor at c - 1
        out.append(np.roll(x, -1, axis=ax))
    return out


def at_least(planes: list[np.ndarray], kmax: int) -> list[np.ndarray]:
    """``ge[k]`` has a bit set where at least k of ``planes`` do, for k <= kmax."""
    ge = [np.full_like(planes[0], ONES)]
    ge += [np.zeros_like(planes[0]) for _ in range(kmax)]
    for p in planes:
        for k in range(kmax, 0, -1):
            ge[k] |= ge[k - 1] & p
    return ge


def step_lanes(x: np.ndarray, rule) -> np.ndarray:
    """One synchronous round of ``rule`` on every lane."""
    return rule.step_lanes(x)


def any_per_lane(x: np.ndarray) -> np.ndarray:
    """Per-word OR over all nodes."""
    return np.bitwise_or.reduce(x.reshape(x.shape[0], -1), axis=1)


def all_per_lane(x: np.ndarray) -> np.ndarray:
    """Per-word AND over all nodes."""
    return np.bitwise_and.reduce(x.reshape(x.shape[0], -1), axis=1)


def word_bits(words: np.ndarray, n_lanes: int) -> np.ndarray:
    """Expand a per-word bit mask into a boolean vector of length n_lanes."""
    by = np.asarray(words, dtype="<u8").view(np.uint8)
    return np.unpackbits(by, bitorder="little")[:n_lanes].astype(bool)
