"""Torus geometry: coordinates, configurations, boxes, hyper-squares and tilings.

Coordinates are 0-based residues mod L.  The bit index of a node is
``sum(c[j] * L**j)``, so coordinate 0 varies fastest.  Boolean arrays that
represent node sets are indexed ``arr[c0, c1, ..., c_{d-1}]`` and flattened in
Fortran order to obtain bit indices.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

Coord = tuple[int, ...]


class AmbiguousWrapError(ValueError):
    """A node set is too spread out to have a unique wrap-aware bounding box."""


@dataclass(frozen=True)
class TorusShape:
    d: int
    L: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.L < 2:
            raise ValueError(f"side length must be >= 2, got {self.L}")

    @property
    def n_nodes(self) -> int:
        return self.L**self.d

    @property
    def n_edges(self) -> int:
        return self.d * self.L**self.d

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    def check(self, v: Sequence[int]) -> Coord:
        if len(v) != self.d:
            raise ValueError(f"coordinate {tuple(v)} has {len(v)} components, torus has d={self.d}")
        v = tuple(int(x) for x in v)
        if any(x < 0 or x >= self.L for x in v):
            raise ValueError(f"coordinate {v} out of range [0, {self.L})")
        return v

    def index(self, v: Sequence[int]) -> int:
        v = self.check(v)
        return sum(x * self.L**j for j, x in enumerate(v))

    def coord(self, idx: int) -> Coord:
        if not 0 <= idx < self.n_nodes:
            raise ValueError(f"index {idx} out of range for {self.n_nodes} nodes")
        out = []
        for _ in range(self.d):
            idx, rem = divmod(idx, self.L)
            out.append(rem)
        return tuple(out)

    def nodes(self) -> Iterable[Coord]:
        """All nodes in bit-index order."""
        for rev in itertools.product(range(self.L), repeat=self.d):
            yield rev[::-1]

    def wrap(self, v: Sequence[int]) -> Coord:
        return tuple(int(x) % self.L for x in v)


def neighbors(shape: TorusShape, v: Sequence[int]) -> list[Coord]:
    """The 2d neighbors of ``v``, ordered by dimension and then -1 before +1.

    For L = 2 the two neighbors in a dimension coincide; they are still
    listed twice so every node has 2d neighbors counted with multiplicity.
    """
    v = shape.check(v)
    out = []
    for j in range(shape.d):
        for s in (-1, 1):
            u = list(v)
            u[j] = (u[j] + s) % shape.L
            out.append(tuple(u))
    return out


def neighbor_table(shape: TorusShape) -> np.ndarray:
    """Integer array of shape (L**d, 2d): bit indices of each node's neighbors."""
    idx = np.arange(shape.n_nodes).reshape(shape.dims, order="F")
    cols = []
    for j in range(shape.d):
        for s in (-1, 1):
            # np.roll(a, 1)[i] == a[i - 1]
            cols.append(np.roll(idx, -s, axis=j).ravel(order="F"))
    return np.stack(cols, axis=1)


def _cyc(delta: int, L: int) -> int:
    delta %= L
    return min(delta, L - delta)


def graph_distance(shape: TorusShape, u: Sequence[int], v: Sequence[int]) -> int:
    u, v = shape.check(u), shape.check(v)
    return sum(_cyc(a - b, shape.L) for a, b in zip(u, v))


@dataclass(frozen=True)
class HyperRectangle:
    """Box ``{x : start_j <= x_j <= start_j + lengths_j (mod L)}``.

    ``lengths`` count edges, so a side of length l holds l + 1 nodes.
    """

    start: Coord
    lengths: tuple[int, ...]

    @property
    def volume(self) -> int:
        return int(np.prod([l + 1 for l in self.lengths]))

    @property
    def sides(self) -> tuple[int, ...]:
        """Number of nodes along each coordinate."""
        return tuple(l + 1 for l in self.lengths)

    def contains(self, shape: TorusShape, v: Sequence[int]) -> bool:
        v = shape.check(v)
        return all((x - s) % shape.L <= l for x, s, l in zip(v, self.start, self.lengths))

    def nodes(self, shape: TorusShape) -> list[Coord]:
        ranges = [[(s + k) % shape.L for k in range(l + 1)] for s, l in zip(self.start, self.lengths)]
        return [tuple(c) for c in itertools.product(*ranges)]


@dataclass(frozen=True)
class HyperSquare:
    """Unit box spanning the coordinates in ``dims`` (0 elsewhere)."""

    start: Coord
    dims: frozenset[int]

    @property
    def r(self) -> int:
        return len(self.dims)

    def rect(self) -> HyperRectangle:
        return HyperRectangle(self.start, tuple(1 if j in self.dims else 0 for j in range(len(self.start))))

    def nodes(self, shape: TorusShape) -> list[Coord]:
        return self.rect().nodes(shape)

    @property
    def parity(self) -> int:
        """Parity of the start coordinates outside ``dims``."""
        return sum(x for j, x in enumerate(self.start) if j not in self.dims) % 2


def hyper_square_parts(hs: HyperSquare, shape: TorusShape) -> tuple[set[Coord], set[Coord]]:
    """Split ``hs`` into (even part, odd part).

    The even part holds the nodes differing from the start in an even number
    of coordinates; it contains the start node.
    """
    if hs.r < 1:
        raise ValueError("hyper-square needs at least one spanned dimension")
    shape.check(hs.start)
    if any(j < 0 or j >= shape.d for j in hs.dims):
        raise ValueError(f"dims {sorted(hs.dims)} out of range for d={shape.d}")
    if shape.L < 3:
        raise ValueError("hyper-square parts need L >= 3 to be disjoint")
    dims = sorted(hs.dims)
    even, odd = set(), set()
    for bits in itertools.product((0, 1), repeat=len(dims)):
        v = list(hs.start)
        for j, b in zip(dims, bits):
            v[j] = (v[j] + b) % shape.L
        (odd if sum(bits) % 2 else even).add(tuple(v))
    return even, odd


def tile(shape: TorusShape, r: int, offset: int = 0) -> list[HyperSquare]:
    """Tile the torus into r-dimensional hyper-squares spanning coordinates 0..r-1.

    Starts lie on ``offset + 2i`` in the first r coordinates, every value in
    the rest.  For even L and offset 0 the squares partition the torus.
    """
    if not 1 <= r <= shape.d:
        raise ValueError(f"r must satisfy 1 <= r <= d={shape.d}, got {r}")
    half = shape.L // 2
    dims = frozenset(range(r))
    first = [(offset + 2 * i) % shape.L for i in range(half)]
    ranges = [first] * r + [range(shape.L)] * (shape.d - r)
    return [HyperSquare(tuple(s), dims) for s in itertools.product(*ranges)]


def _arc(values: Iterable[int], L: int) -> tuple[int, int]:
    """Shortest cyclic arc (start, length) covering ``values``."""
    vals = sorted(set(values))
    if len(vals) == 1:
        return vals[0], 0
    gaps = [(vals[(i + 1) % len(vals)] - vals[i]) % L for i in range(len(vals))]
    best = max(gaps)
    if gaps.count(best) > 1:
        raise AmbiguousWrapError("node set has no unique minimal wrap-aware extent")
    i = gaps.index(best)
    start = vals[(i + 1) % len(vals)]
    return start, L - best


def bounding_rect(nodes: Iterable[Sequence[int]], shape: TorusShape) -> HyperRectangle:
    """Minimal wrap-aware box containing ``nodes``.

    Every coordinate's covering arc must be shorter than L/2, otherwise the
    wrap direction is ambiguous and AmbiguousWrapError is raised.
    """
    pts = [shape.check(v) for v in nodes]
    if not pts:
        raise ValueError("bounding_rect needs a nonempty node set")
    start, lengths = [], []
    for j in range(shape.d):
        s, l = _arc((p[j] for p in pts), shape.L)
        if 2 * l >= shape.L:
            raise AmbiguousWrapError(
                f"extent {l} in coordinate {j} is not below L/2 = {shape.L / 2}"
            )
        start.append(s)
        lengths.append(l)
    return HyperRectangle(tuple(start), tuple(lengths))


def _interval_distance(a: int, la: int, b: int, lb: int, L: int) -> int:
    fwd = (b - a) % L
    back = (a - b) % L
    if fwd <= la or back <= lb:
        return 0
    return min(fwd - la, back - lb)


def rect_distance(a: HyperRectangle, b: HyperRectangle, shape: TorusShape) -> int:
    """Minimum graph distance between nodes of ``a`` and ``b``.

    Boxes are products of arcs and the torus metric is a sum over
    coordinates, so the minimum splits coordinate by coordinate.
    """
    return sum(
        _interval_distance(sa, la, sb, lb, shape.L)
        for sa, la, sb, lb in zip(a.start, a.lengths, b.start, b.lengths)
    )


@dataclass(frozen=True, eq=False)
class Configuration:
    """Black/white coloring of the torus, stored as a little-endian packed bitmap.

    Bit i (``bits[i // 8] >> (i % 8) & 1``) is node index i; 1 means black.
    """

    shape: TorusShape
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        n = self.shape.n_nodes
        if bits.shape != ((n + 7) // 8,):
            raise ValueError(f"packed bitmap must have {(n + 7) // 8} bytes, got shape {bits.shape}")
        spare = bits.size * 8 - n
        if spare and bits[-1] >> (8 - spare):
            raise ValueError("bits set beyond the last node")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_array(cls, shape: TorusShape, arr) -> "Configuration":
        arr = np.asarray(arr, dtype=bool)
        if arr.shape != shape.dims:
            raise ValueError(f"array shape {arr.shape} does not match torus {shape.dims}")
        return cls(shape, np.packbits(arr.ravel(order="F"), bitorder="little"))

    @classmethod
    def from_flat(cls, shape: TorusShape, flat) -> "Configuration":
        flat = np.asarray(flat, dtype=bool)
        if flat.shape != (shape.n_nodes,):
            raise ValueError(f"flat bitmap length {flat.size} != {shape.n_nodes}")
        return cls(shape, np.packbits(flat, bitorder="little"))

    @classmethod
    def white(cls, shape: TorusShape) -> "Configuration":
        return cls.from_flat(shape, np.zeros(shape.n_nodes, bool))

    @classmethod
    def black(cls, shape: TorusShape) -> "Configuration":
        return cls.from_flat(shape, np.ones(shape.n_nodes, bool))

    @classmethod
    def from_coords(cls, shape: TorusShape, coords: Iterable[Sequence[int]]) -> "Configuration":
        arr = np.zeros(shape.dims, bool)
        for v in coords:
            arr[shape.check(v)] = True
        return cls.from_array(shape, arr)

    @cached_property
    def flat(self) -> np.ndarray:
        out = np.unpackbits(self.bits, count=self.shape.n_nodes, bitorder="little").astype(bool)
        out.setflags(write=False)
        return out

    @cached_property
    def array(self) -> np.ndarray:
        out = self.flat.reshape(self.shape.dims, order="F")
        out.setflags(write=False)
        return out

    def black_coords(self) -> list[Coord]:
        """Black nodes, sorted lexicographically."""
        return sorted(tuple(int(x) for x in c) for c in np.argwhere(self.array))

    def popcount(self) -> int:
        return int(np.unpackbits(self.bits).sum())

    def __getitem__(self, v) -> bool:
        return bool(self.array[self.shape.check(v)])

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.shape, self.bits.tobytes()))
