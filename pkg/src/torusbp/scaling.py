"""Hyper-squares as super-nodes: inner/outer adjacency, occupation, the scaled
modified r-BP comparison and the rounds-to-occupation experiment."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernel
from .dynamics import TwoWayBP
from .lattice import Configuration, HyperSquare, TorusShape, hyper_square_parts, tile

log = logging.getLogger(__name__)

INNER, OUTER = "inner", "outer"


@dataclass(frozen=True)
class Neighbor:
    dim: int
    sign: int
    kind: str
    index: int | None  # None when the neighbor falls off a non-periodic lattice


@dataclass(eq=False)
class ScaledShape:
    """Tiling of a torus by r-dimensional hyper-squares, with square adjacency.

    For even L the tiling is periodic.  For odd L the squares live on the
    (L-1)^d lattice that skips coordinate value L-1 (offset 0) or 0
    (offset 1); neighbors across that gap do not exist.
    """

    base: TorusShape
    r: int
    offset: int = 0
    squares: list[HyperSquare] = field(init=False)
    table: np.ndarray = field(init=False, repr=False)  # (n, d, 2): index or -1
    parity: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d, L, r = self.base.d, self.base.L, self.r
        if not 1 <= r <= d:
            raise ValueError(f"need 1 <= r <= d, got r={r}, d={d}")
        if self.offset not in (0, 1):
            raise ValueError("offset must be 0 or 1")
        self.periodic = L % 2 == 0
        if self.periodic:
            self.squares = tile(self.base, r, self.offset)
            lo, hi = 0, L
        else:
            lo, hi = self.offset, self.offset + L - 1
            first = [lo + 2 * i for i in range((L - 1) // 2)]
            ranges = [first] * r + [range(lo, hi)] * (d - r)
            dims = frozenset(range(r))
            self.squares = [HyperSquare(tuple(s), dims) for s in itertools.product(*ranges)]
        self._pos = pos = {sq.start: i for i, sq in enumerate(self.squares)}
        table = np.full((len(self.squares), d, 2), -1, np.int64)
        for i, sq in enumerate(self.squares):
            for j in range(d):
                step = 2 if j < r else 1
                for k, s in enumerate((-1, 1)):
                    v = list(sq.start)
                    v[j] += s * step
                    if self.periodic:
                        v[j] %= L
                    elif not lo <= v[j] < hi:
                        continue
                    table[i, j, k] = pos[tuple(v)]
        self.table = table
        self.parity = np.array([sq.parity for sq in self.squares], np.int8)
        even, odd = [], []
        for sq in self.squares:
            e, o = hyper_square_parts(sq, self.base)
            even.append(sorted(self.base.index(v) for v in e))
            odd.append(sorted(self.base.index(v) for v in o))
        self._parts = np.stack([np.array(even), np.array(odd)])  # (2, n, 2**(r-1))

    def __len__(self):
        return len(self.squares)

    def index(self, start) -> int:
        try:
            return self._pos[tuple(start)]
        except KeyError:
            raise KeyError(f"no tiled square starts at {tuple(start)}") from None

    def part_indices(self, idx: int, which: int) -> np.ndarray:
        """Bit indices of the even (0) or odd (1) part of square ``idx``."""
        return self._parts[which, idx]


def hyper_square_neighbors(scaled: ScaledShape, idx: int) -> list[Neighbor]:
    """The 2d neighbors of a tiled square, by dimension then -1 before +1.

    Inner neighbors (dimension < r) start 2 apart; outer ones start 1 apart.
    """
    if not 0 <= idx < len(scaled):
        raise IndexError(idx)
    out = []
    for j in range(scaled.base.d):
        for k, s in enumerate((-1, 1)):
            n = int(scaled.table[idx, j, k])
            out.append(Neighbor(j, s, INNER if j < scaled.r else OUTER, n if n >= 0 else None))
    return out


def _which_part(parity, t: int, mirrored: bool):
    return (parity + t + int(mirrored)) % 2


def is_occupied(c: Configuration, square: HyperSquare, t: int, allow_odd: bool = False,
                mirrored: bool = False) -> bool:
    """Whether ``square`` is occupied in ``c`` viewed as the round-t configuration.

    At even t an even-parity square needs its even part black and an
    odd-parity square its odd part.  Odd t swaps the parts (only with
    ``allow_odd``); ``mirrored`` swaps them as well.
    """
    if t % 2 and not allow_odd:
        raise ValueError("occupation is defined on even rounds; pass allow_odd=True for odd t")
    even, odd = hyper_square_parts(square, c.shape)
    part = odd if _which_part(square.parity, t, mirrored) else even
    return all(c[v] for v in part)


@dataclass(frozen=True, eq=False)
class OccupationMap:
    t: int
    bits: np.ndarray

    def __le__(self, other: "OccupationMap") -> bool:
        return bool(np.all(~self.bits | other.bits))


def occupancy(flat: np.ndarray, scaled: ScaledShape, t: int, mirrored: bool = False) -> np.ndarray:
    """Vectorized occupation bits for one flat boolean configuration."""
    which = _which_part(scaled.parity, t, mirrored)
    parts = scaled._parts[which, np.arange(len(scaled))]
    return flat[parts].all(axis=1)


def scaled_config(c: Configuration, scaled: ScaledShape, t: int, allow_odd: bool = False,
                  mirrored: bool = False) -> OccupationMap:
    if t % 2 and not allow_odd:
        raise ValueError("occupation is defined on even rounds; pass allow_odd=True for odd t")
    if c.shape != scaled.base:
        raise ValueError("configuration and tiling live on different tori")
    return OccupationMap(t, occupancy(c.flat, scaled, t, mirrored))


def modified_step_scaled(occ: np.ndarray, scaled: ScaledShape) -> np.ndarray:
    """One round of modified r-BP on the square graph: an unoccupied square
    becomes occupied when occupied neighbors lie in >= r distinct dimensions."""
    padded = np.append(occ, False)  # index -1 reads False
    hit = padded[scaled.table].any(axis=2).sum(axis=1)
    return occ | (hit >= scaled.r)


def occupation_trajectory(c0: Configuration, r: int, rounds: int, scaled: ScaledShape | None = None,
                          mirrored: bool = False) -> list[np.ndarray]:
    """Occupation bits at t = 0, 2, 4, ... <= rounds under two-way r-BP."""
    scaled = scaled or ScaledShape(c0.shape, r)
    rule = TwoWayBP(r)
    x = kernel.pack(c0.flat[None, :], c0.shape)
    out = [occupancy(c0.flat, scaled, 0, mirrored)]
    for t in range(1, rounds + 1):
        x = rule.step_lanes(x)
        if t % 2 == 0:
            out.append(occupancy(kernel.unpack(x, 1)[0], scaled, t, mirrored))
    return out


def check_scaled_domination(c0: Configuration, r: int, t_prime: int, n_steps: int,
                            scaled: ScaledShape | None = None) -> int | None:
    """Compare k modified r-BP steps of the initial occupation with the true
    occupation at round k * t_prime, for k = 0..n_steps.

    Returns the first k where the scaled process is not dominated, or None.
    """
    if t_prime % 2:
        raise ValueError("t_prime must be even")
    scaled = scaled or ScaledShape(c0.shape, r)
    traj = occupation_trajectory(c0, r, n_steps * t_prime, scaled)
    m = traj[0]
    for k in range(n_steps + 1):
        if np.any(m & ~traj[k * t_prime // 2]):
            return k
        m = modified_step_scaled(m, scaled)
    return None


@dataclass
class Lemma5Result:
    d: int
    r: int
    L: int
    arrangement: tuple[tuple[int, int], ...]
    rounds: int | None  # first even round with the center occupied; None if over budget
    budget: int
    first_round: int | None = None  # first round of either parity (odd t swaps the parts)


def _center_start(d: int, r: int, L: int) -> tuple[int, ...]:
    return tuple([2 * (L // 4)] * r + [L // 2] * (d - r))


def enumerate_arrangements(d: int, r: int, n_dims: int | None = None):
    """All choices of ``n_dims`` distinct dimensions (default r), each with a sign."""
    n_dims = r if n_dims is None else n_dims
    for dims in itertools.combinations(range(d), n_dims):
        for signs in itertools.product((-1, 1), repeat=n_dims):
            yield tuple(zip(dims, signs))


def lemma5_experiment(d: int, r: int, L: int, arrangement, budget: int | None = None,
                      strict: bool = True) -> Lemma5Result:
    """Rounds for a square to become occupied when the chosen neighbors are.

    ``arrangement`` lists (dimension, sign) pairs with distinct dimensions;
    exactly the matching neighbor squares start occupied (their
    parity-appropriate part black) and two-way r-BP is run until the center
    square is occupied at an even round, or the budget (default 4**r) runs out.
    """
    arrangement = tuple((int(j), int(s)) for j, s in arrangement)
    dims = [j for j, _ in arrangement]
    if len(set(dims)) != len(dims) or any(not 0 <= j < d for j in dims):
        raise ValueError(f"arrangement dimensions must be distinct and in [0, {d})")
    if any(s not in (-1, 1) for _, s in arrangement):
        raise ValueError("signs must be -1 or +1")
    if strict and len(dims) != r:
        raise ValueError(f"need exactly r={r} occupied dimensions, got {len(dims)}")
    if L % 2 or L < 8:
        raise ValueError("L must be even and >= 8")
    budget = 4**r if budget is None else budget
    shape = TorusShape(d, L)
    scaled = ScaledShape(shape, r)
    center = scaled.index(_center_start(d, r, L))
    flat = np.zeros(shape.n_nodes, bool)
    for j, s in arrangement:
        nb = int(scaled.table[center, j, (s + 1) // 2])
        flat[scaled.part_indices(nb, int(scaled.parity[nb]))] = True
    parts = [scaled.part_indices(center, (int(scaled.parity[center]) + k) % 2) for k in (0, 1)]
    rule = TwoWayBP(r)
    x = kernel.pack(flat[None, :], shape)
    first = None
    for t in range(1, budget + 1):
        x = rule.step_lanes(x)
        now = kernel.unpack(x, 1)[0]
        if first is None and now[parts[t % 2]].all():
            first = t
            if t % 2:
                log.info("center occupied first at odd round %d for %s", t, arrangement)
        if t % 2 == 0 and now[parts[0]].all():
            return Lemma5Result(d, r, L, arrangement, t, budget, first)
    return Lemma5Result(d, r, L, arrangement, None, budget, first)
