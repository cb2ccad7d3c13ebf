"""Structural certificates: robust and eternal sets, exhaustive small-set searches,
black-node clustering and disjoint white-robust witness families."""
from __future__ import annotations

import itertools
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernel
from .dynamics import (Majority, Phase, TwoWayBP, UpdateRule,
                       evolve, evolve_lanes)
from .lattice import (Configuration, Coord, HyperRectangle, TorusShape, bounding_rect,
                      neighbors, rect_distance)

log = logging.getLogger(__name__)


class IndeterminateError(RuntimeError):
    """A simulation hit its round cap before reaching a limit cycle."""


class InvariantViolation(AssertionError):
    """A property guaranteed by construction failed; indicates a bug."""


class WitnessConstructionError(RuntimeError):
    """The robust-intersection construction failed on a verified robust input."""


@dataclass(frozen=True, eq=False)
class NodeSet:
    shape: TorusShape
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != self.shape.dims:
            raise ValueError(f"mask shape {mask.shape} does not match torus {self.shape.dims}")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_coords(cls, shape: TorusShape, coords: Iterable[Sequence[int]]) -> "NodeSet":
        mask = np.zeros(shape.dims, bool)
        for v in coords:
            mask[shape.check(v)] = True
        return cls(shape, mask)

    @classmethod
    def black_of(cls, c: Configuration) -> "NodeSet":
        return cls(c.shape, c.array)

    def coords(self) -> list[Coord]:
        return sorted(tuple(int(x) for x in v) for v in np.argwhere(self.mask))

    def configuration(self) -> Configuration:
        return Configuration.from_array(self.shape, self.mask)

    def __len__(self):
        return int(self.mask.sum())

    def __contains__(self, v):
        return bool(self.mask[self.shape.check(v)])

    def __eq__(self, other):
        if not isinstance(other, NodeSet):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.shape, self.mask.tobytes()))


def _inside_counts(mask: np.ndarray) -> np.ndarray:
    m = mask.astype(np.int8)
    return sum(np.roll(m, s, axis=j) for j in range(m.ndim) for s in (1, -1))


def is_robust(s: NodeSet, r: int, color: str = "black") -> bool:
    """Local degree certificate of an (r, color)-robust set.

    black: every member has >= r neighbors in the set.
    white: every member has >= 2d - r + 1 neighbors in the set.
    """
    if not s.mask.any():
        raise ValueError("robustness of the empty set is vacuous and rejected")
    need = {"black": r, "white": 2 * s.shape.d - r + 1}
    if color not in need:
        raise ValueError(f"color must be 'black' or 'white', got {color!r}")
    cnt = _inside_counts(s.mask)
    return bool(np.all(cnt[s.mask] >= need[color]))


def check_eternal(s: NodeSet, rule: UpdateRule, max_rounds: int | None = None) -> bool:
    """Whether black survives forever starting from exactly ``s`` black.

    The rules are monotone, so survival from this minimal start certifies
    survival from every configuration in which ``s`` is black.
    """
    out = evolve(s.configuration(), rule, max_rounds)
    if out.truncated:
        raise IndeterminateError(f"no limit cycle within {out.rounds} rounds")
    return out.classification is not Phase.FULLY_WHITE


def _rule_r(rule: UpdateRule, d: int) -> int:
    if isinstance(rule, Majority):
        return d
    return rule.r


def _window_candidates(shape: TorusShape, radius: int) -> np.ndarray:
    """Bit indices of translation-canonical companions of the origin.

    When the window fits on the torus without wrapping, only offsets
    lexicographically after the origin are kept, so each translation class
    of subsets is enumerated once (the origin is its lex-min member).
    Candidates are sorted by distance from the origin, nearest first.
    """
    L, d = shape.L, shape.d
    wraps = 2 * radius + 1 > L
    seen, cands = set(), []
    for off in itertools.product(range(-radius, radius + 1), repeat=d):
        if not any(off):
            continue
        if not wraps and off < (0,) * d:
            continue
        v = shape.wrap(off)
        if v in seen or not any(v):
            continue
        seen.add(v)
        cands.append((sum(abs(x) for x in off), off, v))
    cands.sort()
    return np.array([shape.index(v) for _, _, v in cands], dtype=np.int64)


def _colex(n: int, k: int):
    """k-subsets of range(n), ordered by their largest element."""
    if k == 0:
        yield ()
        return
    for top in range(k - 1, n):
        for rest in itertools.combinations(range(top), k - 1):
            yield rest + (top,)


def _subset_batches(cands: np.ndarray, size: int, batch: int):
    """Arrays (B, size) of node indices: the origin plus size-1 candidates."""
    it = _colex(len(cands), size - 1)
    while True:
        chunk = list(itertools.islice(it, batch))
        if not chunk:
            return
        idx = np.zeros((len(chunk), size), np.int64)
        if size > 1:
            idx[:, 1:] = cands[np.array(chunk, dtype=np.int64)]
        yield idx


def _batch_lanes(shape: TorusShape) -> int:
    # keep lane arrays near 2**18 words
    return kernel.LANE_BITS * max(1, min(64, (1 << 18) // shape.n_nodes))


@dataclass
class EternalSearch:
    min_size: int | None
    witness: list[Coord] | None
    subsets_checked: int


def min_eternal_size(shape: TorusShape, rule: UpdateRule, size_bound: int,
                     window_radius: int | None = None, max_rounds: int | None = None,
                     max_subsets: int = 50_000_000) -> EternalSearch:
    """Smallest k <= size_bound such that some k-subset of a window around the
    origin is black-eternal under ``rule``; ``min_size`` is None if none is.

    Subsets always contain the origin (translation invariance).  The search
    is exhaustive for each size before moving on; it raises ValueError when
    the subset count exceeds ``max_subsets``.
    """
    rule.validate(shape)
    if size_bound < 1:
        raise ValueError("size_bound must be >= 1")
    if window_radius is None:
        window_radius = 2 ** (_rule_r(rule, shape.d) - 1) + 2
    cands = _window_candidates(shape, window_radius)
    total = sum(math.comb(len(cands), k - 1) for k in range(1, size_bound + 1))
    if total > max_subsets:
        raise ValueError(f"{total} subsets exceed the exhaustive-search guard {max_subsets}")
    if max_rounds is None:
        max_rounds = 4 * shape.d * shape.n_nodes
    batch = _batch_lanes(shape)
    checked = 0
    for k in range(1, size_bound + 1):
        undecided = 0
        for idx in _subset_batches(cands, k, batch):
            x0 = kernel.pack_subsets(idx, shape)
            out = evolve_lanes(x0, len(idx), rule, max_rounds)
            checked += len(idx)
            undecided += int(out.truncated.sum())
            hit = np.flatnonzero(out.any_black)
            if hit.size:
                wit = sorted(shape.coord(int(i)) for i in idx[hit[0]])
                log.info("eternal set of size %d found after %d subsets: %s", k, checked, wit)
                return EternalSearch(k, wit, checked)
        if undecided:
            raise IndeterminateError(f"{undecided} size-{k} subsets hit the round cap {max_rounds}")
    return EternalSearch(None, None, checked)


@dataclass
class ExtinctionResult:
    max_time: int | None  # max rounds to fully white over dying placements
    survivor: bool
    survivor_example: list[Coord] | None
    placements: int
    capped: int  # placements that hit the round cap
    exhaustive: bool
    torus_side: int


def max_extinction_time(d: int, r: int, k: int, window_radius: int | None = None,
                        cap: int = 1000, stop_at_survivor: bool = False,
                        max_placements: int = 20_000_000) -> ExtinctionResult:
    """Worst-case rounds for at most k black nodes in a window to die out under two-way r-BP.

    All placements of 1..k black nodes in the window (origin included,
    translations removed) are run on a torus of side 2*radius + 5, large
    enough that the window cannot interact with its own wrap-around.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if window_radius is None:
        window_radius = 2 ** (r - 1) + 2
    side = 2 * window_radius + 5
    shape = TorusShape(d, side)
    rule = TwoWayBP(r)
    rule.validate(shape)
    cands = _window_candidates(shape, window_radius)
    total = sum(math.comb(len(cands), j - 1) for j in range(1, k + 1))
    if total > max_placements and not stop_at_survivor:
        raise ValueError(f"{total} placements exceed the exhaustive-search guard {max_placements}")
    batch = _batch_lanes(shape)
    worst, placements, capped = None, 0, 0
    survivor_example = None
    for size in range(1, k + 1):
        for idx in _subset_batches(cands, size, batch):
            out = evolve_lanes(kernel.pack_subsets(idx, shape), len(idx), rule, cap)
            placements += len(idx)
            capped += int(out.truncated.sum())
            dies = ~out.any_black & ~out.truncated
            if dies.any():
                t = int(out.consensus_time[dies].max())
                worst = t if worst is None else max(worst, t)
            surv = np.flatnonzero(out.any_black)
            if surv.size:
                example = sorted(shape.coord(int(i)) for i in idx[surv[0]])
                if stop_at_survivor:
                    return ExtinctionResult(worst, True, example, placements, capped, False, side)
                if survivor_example is None:
                    survivor_example = example
    return ExtinctionResult(worst, survivor_example is not None, survivor_example,
                            placements, capped, True, side)


@dataclass
class ClusterReport:
    rects: list[HyperRectangle]
    black_counts: list[int]
    min_pairwise_distance: int | None  # None when fewer than two rects
    phase1_certificate: bool
    merges: int


def _black_components(shape: TorusShape, black: list[Coord]) -> list[list[Coord]]:
    todo = set(black)
    comps = []
    for v in black:
        if v not in todo:
            continue
        todo.discard(v)
        comp, queue = [v], deque([v])
        while queue:
            u = queue.popleft()
            for w in neighbors(shape, u):
                if w in todo:
                    todo.discard(w)
                    comp.append(w)
                    queue.append(w)
        comps.append(comp)
    return comps


def cluster_black_nodes(c: Configuration, r: int, order: str = "lex",
                        rng: np.random.Generator | None = None) -> ClusterReport:
    """Group black nodes into boxes pairwise at distance >= 3.

    Start from the bounding boxes of black connected components and
    repeatedly replace two boxes at distance <= 2 by the bounding box of
    their black nodes.  ``order="lex"`` merges the lexicographically
    smallest violating pair (by box start); ``order="random"`` picks one
    uniformly with ``rng``.
    """
    if order not in ("lex", "random"):
        raise ValueError(f"unknown merge order {order!r}")
    shape = c.shape
    groups = [(bounding_rect(comp, shape), comp) for comp in _black_components(shape, c.black_coords())]
    merges = 0
    while True:
        groups.sort(key=lambda g: (g[0].start, g[0].lengths))
        bad = [(i, j) for i, j in itertools.combinations(range(len(groups)), 2)
               if rect_distance(groups[i][0], groups[j][0], shape) <= 2]
        if not bad:
            break
        if order == "lex":
            i, j = bad[0]
        else:
            i, j = bad[(rng or np.random.default_rng()).integers(len(bad))]
        (ra, na), (rb, nb) = groups[i], groups[j]
        nodes = na + nb
        merged = bounding_rect(nodes, shape)
        for j_, (s, s1, s2) in enumerate(zip(merged.sides, ra.sides, rb.sides)):
            if s > 3 * max(s1, s2):
                raise InvariantViolation(f"merged side {s} > 3 * max({s1}, {s2}) in coordinate {j_}")
        groups = [g for n, g in enumerate(groups) if n not in (i, j)] + [(merged, nodes)]
        merges += 1
    rects = [g[0] for g in groups]
    counts = [len(g[1]) for g in groups]
    dists = [rect_distance(a, b, shape) for a, b in itertools.combinations(rects, 2)]
    mind = min(dists) if dists else None
    cert = all(n < 2 ** (r - 1) for n in counts) and (mind is None or mind >= 3)
    return ClusterReport(rects, counts, mind, cert, merges)


@dataclass
class WitnessFamily:
    witnesses: list[NodeSet]
    branches: list[str]  # construction steps taken, outermost first


def _level_runs(occ: np.ndarray):
    """Levels k that are occupied with k+1 empty (ends) and with k-1 empty (starts)."""
    ends = [k for k in range(len(occ)) if occ[k] and not occ[(k + 1) % len(occ)]]
    starts = [k for k in range(len(occ)) if occ[k] and not occ[(k - 1) % len(occ)]]
    return ends, starts


def _lift(sub: np.ndarray, axis: int, levels: Sequence[int], L: int) -> np.ndarray:
    shape = sub.shape[:axis] + (L,) + sub.shape[axis:]
    out = np.zeros(shape, bool)
    for k in levels:
        idx = [slice(None)] * len(shape)
        idx[axis] = k
        out[tuple(idx)] = sub
    return out


def _witness_masks(S: np.ndarray, r: int, trace: list[str]) -> list[np.ndarray]:
    dd, L = S.ndim, S.shape[0]
    if r <= 1:
        trace.append(f"d={dd} r={r}: whole torus")
        return [np.ones_like(S)]
    for j in range(dd):
        others = tuple(a for a in range(dd) if a != j)
        occ = S.any(axis=others) if others else S.copy()
        if occ.sum() < 2:
            continue
        if r == 2:
            lv = np.flatnonzero(occ)
            a, b = int(lv[0]), int(lv[-1])
            pair = {a, (a - 1) % L} if b != (a - 1) % L else {a, (a + 1) % L}
            shape = [1] * dd
            shape[j] = L
            in1 = np.isin(np.arange(L), sorted(pair)).reshape(shape)
            w1 = np.broadcast_to(in1, S.shape).copy()
            trace.append(f"d={dd} r=2: slabs in coordinate {j} at levels {sorted(pair)}")
            return [w1, ~w1]
        ends, starts = _level_runs(occ)
        for k1 in ends:
            for k2 in starts:
                a = {k1, (k1 + 1) % L}
                b = {(k2 - 1) % L, k2}
                if a & b:
                    continue
                sub: list[str] = []
                try:
                    lo = _witness_masks(np.take(S, k1, axis=j), r - 1, sub)
                    hi = _witness_masks(np.take(S, k2, axis=j), r - 1, sub)
                except WitnessConstructionError:
                    continue
                trace.extend(sub)
                trace.append(f"d={dd} r={r}: paired levels {k1},{(k1 + 1) % L} and {(k2 - 1) % L},{k2} "
                             f"in coordinate {j}")
                return ([_lift(w, j, sorted(a), L) for w in lo]
                        + [_lift(w, j, sorted(b), L) for w in hi])
        for shift in (0, 1):
            pairs = [((2 * i + shift) % L, (2 * i + 1 + shift) % L) for i in range(L // 2)]
            hit = [p for p in pairs if occ[p[0]] or occ[p[1]]]
            if len(hit) >= 2 ** (r - 1):
                trace.append(f"d={dd} r={r}: {len(hit)} level pairs in coordinate {j}")
                ones = np.ones(S.shape[:j] + S.shape[j + 1:], bool)
                return [_lift(ones, j, p, L) for p in hit]
    raise WitnessConstructionError(f"no construction applies in d={dd} for r={r}")


def validate_witnesses(s: NodeSet, r: int, witnesses: Sequence[NodeSet]) -> list[str]:
    """Return the list of failed checks (empty when the family is valid)."""
    problems = []
    if len(witnesses) < 2 ** (r - 1):
        problems.append(f"only {len(witnesses)} witnesses, need {2 ** (r - 1)}")
    cover = np.zeros(s.shape.dims, np.int64)
    for i, w in enumerate(witnesses):
        cover += w.mask
        if not w.mask.any() or not is_robust(w, r, "white"):
            problems.append(f"witness {i} is not ({r},w)-robust")
        if not (w.mask & s.mask).any():
            problems.append(f"witness {i} misses the set")
    if (cover > 1).any():
        problems.append("witnesses overlap")
    return problems


def find_w_robust_witnesses(s: NodeSet, r: int) -> WitnessFamily:
    """At least 2**(r-1) disjoint (r,w)-robust sets, each meeting the (r,b)-robust set ``s``.

    Follows the induction on r: two complementary slabs for r = 2; for
    larger r either pairs of adjacent levels bordering the set (recursing on
    a (d-1)-dimensional slice) or enough level pairs that all meet the set.
    The family is validated before it is returned.
    """
    if not is_robust(s, r, "black"):
        raise ValueError(f"input set is not ({r},b)-robust")
    trace: list[str] = []
    masks = _witness_masks(s.mask, r, trace)
    for line in trace:
        log.debug(line)
    fam = [NodeSet(s.shape, m) for m in masks]
    problems = validate_witnesses(s, r, fam)
    if problems:
        raise WitnessConstructionError("; ".join(problems))
    return WitnessFamily(fam, trace)


def random_robust_set(shape: TorusShape, r: int, rng: np.random.Generator, n_boxes: int = 2) -> NodeSet:
    """Union of random boxes, each spanning at least 2 nodes in at least r coordinates.

    Every node of such a box has a neighbor inside it along each of those
    coordinates, so the union is (r,b)-robust.
    """
    mask = np.zeros(shape.dims, bool)
    for _ in range(n_boxes):
        span = rng.choice(shape.d, size=r, replace=False)
        lengths = [0] * shape.d
        for j in range(shape.d):
            if j in span:
                lengths[j] = int(rng.integers(1, shape.L))
            elif rng.random() < 0.3:
                lengths[j] = int(rng.integers(0, shape.L))
        start = tuple(int(x) for x in rng.integers(0, shape.L, size=shape.d))
        for v in HyperRectangle(start, tuple(lengths)).nodes(shape):
            mask[v] = True
    return NodeSet(shape, mask)
