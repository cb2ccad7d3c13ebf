"""Update rules, synchronous stepping, limit-cycle detection and order relations."""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np

from . import kernel
from .kernel import at_least, neighbor_planes
from .lattice import Configuration, TorusShape, neighbor_table


class Phase(str, enum.Enum):
    FULLY_BLACK = "FullyBlack"
    FULLY_WHITE = "FullyWhite"
    COEXIST = "Coexist"


class RuleError(ValueError):
    """Rule parameters are invalid, or invalid for the torus they are applied to."""


@dataclass(frozen=True)
class GeneralBP:
    """(r, r')-BP: white turns black with >= r black neighbors, black stays with >= r_keep."""

    r: int
    r_keep: int

    def __post_init__(self):
        if not 0 <= self.r_keep <= self.r:
            raise RuleError(f"need 0 <= r' <= r, got r={self.r}, r'={self.r_keep}")

    @property
    def absorbing(self) -> bool:
        return self.r_keep == 0

    @property
    def period_bound(self) -> int:
        return 1 if self.absorbing else 2

    def validate(self, shape: TorusShape):
        # thresholds above 2d are allowed (nothing turns black); the color-swap
        # dual of two-way r-BP is two-way (2d - r + 1)-BP
        if self.r > 2 * shape.d + 1:
            raise RuleError(f"r={self.r} exceeds 2d+1={2 * shape.d + 1}")

    def step_lanes(self, x):
        ge = at_least(neighbor_planes(x), self.r)
        return (~x & ge[self.r]) | (x & ge[self.r_keep])

    def reference(self, cur, black_count, shape):
        return np.where(cur, black_count >= self.r_keep, black_count >= self.r)

    def label(self) -> str:
        return f"general:{self.r},{self.r_keep}"


@dataclass(frozen=True)
class ModifiedBP:
    """White turns black when it has black neighbors in >= r distinct dimensions."""

    r: int
    absorbing = True
    period_bound = 1

    def __post_init__(self):
        if self.r < 1:
            raise RuleError(f"modified r-BP needs r >= 1, got {self.r}")

    def validate(self, shape: TorusShape):
        if self.r > shape.d:
            raise RuleError(f"modified r-BP needs r <= d={shape.d}, got {self.r}")

    def step_lanes(self, x):
        nb = neighbor_planes(x)
        per_dim = [nb[2 * j] | nb[2 * j + 1] for j in range(len(nb) // 2)]
        return x | at_least(per_dim, self.r)[self.r]

    def reference(self, cur, black_nbrs, shape):
        # black_nbrs here is the (..., 2d) boolean neighbor matrix
        d = shape.d
        dims_hit = black_nbrs.reshape(black_nbrs.shape[:-1] + (d, 2)).any(-1).sum(-1)
        return cur | (dims_hit >= self.r)

    def label(self) -> str:
        return "modified"


@dataclass(frozen=True)
class Majority:
    """Strict majority of the 2d neighbors wins; a tie keeps the current color."""

    absorbing = False
    period_bound = 2

    def validate(self, shape: TorusShape):
        pass

    def step_lanes(self, x):
        d = x.ndim - 1
        ge = at_least(neighbor_planes(x), d + 1)
        return ge[d + 1] | (ge[d] & x)

    def reference(self, cur, black_count, shape):
        d = shape.d
        return np.where(black_count > d, True, np.where(black_count < d, False, cur))

    def label(self) -> str:
        return "majority"


UpdateRule = GeneralBP | ModifiedBP | Majority


def BP(r: int) -> GeneralBP:
    return GeneralBP(r, 0)


def TwoWayBP(r: int) -> GeneralBP:
    return GeneralBP(r, r)


def RecoveryBP(r: int) -> GeneralBP:
    return GeneralBP(r, 1)


def BiasedMajority(d: int) -> GeneralBP:
    """Majority with ties resolved to black, i.e. two-way d-BP on the 2d-regular torus."""
    return TwoWayBP(d)


def parse_rule(name: str, r: int | None = None) -> UpdateRule:
    """Build a rule from a CLI-style name: bp, two-way, recovery, general:r,r', modified, majority."""
    name = name.strip().lower()
    if name.startswith("general:"):
        try:
            a, b = (int(t) for t in name.split(":", 1)[1].split(","))
        except ValueError:
            raise RuleError(f"cannot parse general rule {name!r}; expected general:r,r'") from None
        return GeneralBP(a, b)
    if name == "majority":
        return Majority()
    makers = {"bp": BP, "two-way": TwoWayBP, "recovery": RecoveryBP, "modified": ModifiedBP}
    if name not in makers:
        raise RuleError(f"unknown rule {name!r}")
    if r is None:
        raise RuleError(f"rule {name!r} needs r")
    return makers[name](r)


def _lanes_of(c: Configuration) -> np.ndarray:
    return kernel.pack(c.flat[None, :], c.shape)


def _config_of(lanes: np.ndarray, shape: TorusShape) -> Configuration:
    return Configuration.from_flat(shape, kernel.unpack(lanes, 1)[0])


def step(c: Configuration, rule: UpdateRule) -> Configuration:
    """One synchronous round of ``rule`` (bit-sliced kernel)."""
    rule.validate(c.shape)
    return _config_of(rule.step_lanes(_lanes_of(c)), c.shape)


def step_many(flat_configs: np.ndarray, shape: TorusShape, rule: UpdateRule) -> np.ndarray:
    """Step a batch of boolean configurations of shape (B, L**d) with the packed kernel."""
    rule.validate(shape)
    flat_configs = np.asarray(flat_configs, bool)
    lanes = kernel.pack(flat_configs, shape)
    return kernel.unpack(rule.step_lanes(lanes), flat_configs.shape[0])


def reference_step_many(flat_configs: np.ndarray, shape: TorusShape, rule: UpdateRule) -> np.ndarray:
    """Slow reference stepper: explicit neighbor gather and per-node count."""
    rule.validate(shape)
    flat_configs = np.asarray(flat_configs, bool)
    nbrs = flat_configs[:, neighbor_table(shape)]  # (B, N, 2d)
    if isinstance(rule, ModifiedBP):
        return rule.reference(flat_configs, nbrs, shape)
    return rule.reference(flat_configs, nbrs.sum(-1), shape)


def reference_step(c: Configuration, rule: UpdateRule) -> Configuration:
    return Configuration.from_flat(c.shape, reference_step_many(c.flat[None, :], c.shape, rule)[0])


def classify(c: Configuration) -> Phase:
    n = c.popcount()
    if n == 0:
        return Phase.FULLY_WHITE
    if n == c.shape.n_nodes:
        return Phase.FULLY_BLACK
    return Phase.COEXIST


def classify_cycle(cycle) -> Phase:
    phases = {classify(c) for c in cycle}
    if phases == {Phase.FULLY_BLACK}:
        return Phase.FULLY_BLACK
    if phases == {Phase.FULLY_WHITE}:
        return Phase.FULLY_WHITE
    return Phase.COEXIST


def dominates(c1: Configuration, c2: Configuration) -> bool:
    """True iff every black node of ``c1`` is black in ``c2``."""
    if c1.shape != c2.shape:
        raise ValueError(f"shape mismatch: {c1.shape} vs {c2.shape}")
    return not np.any(c1.bits & ~c2.bits)


def invert(c: Configuration) -> Configuration:
    return Configuration.from_flat(c.shape, ~c.flat)


def default_max_rounds(shape: TorusShape) -> int:
    return 4 * shape.d * shape.n_nodes


@dataclass(frozen=True)
class RunOutcome:
    period: int | None
    consensus_time: int | None
    cycle: tuple[Configuration, ...]
    classification: Phase | None
    truncated: bool
    rounds: int


def _fingerprint(bits: np.ndarray) -> bytes:
    return hashlib.blake2b(bits.tobytes(), digest_size=8).digest()


def evolve(c0: Configuration, rule: UpdateRule, max_rounds: int | None = None,
           detector: str = "auto") -> RunOutcome:
    """Iterate ``rule`` from ``c0`` until a limit cycle is found.

    ``detector`` is "auto" (compare with the previous round for absorbing
    rules and with the two previous rounds otherwise) or "fingerprint"
    (hash history with exact confirmation, valid for any period).
    """
    rule.validate(c0.shape)
    shape = c0.shape
    if max_rounds is None:
        max_rounds = default_max_rounds(shape)
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    if detector == "fingerprint" or (detector == "auto" and rule.period_bound is None):
        return _evolve_fingerprint(c0, rule, max_rounds)
    if detector != "auto":
        raise ValueError(f"unknown detector {detector!r}")

    history = [_lanes_of(c0)]
    back = rule.period_bound
    for t in range(1, max_rounds + 1):
        history.append(rule.step_lanes(history[-1]))
        if len(history) > 3:
            history.pop(0)
        if t >= back and np.array_equal(history[-1], history[-1 - back]):
            tau = t - back
            cyc = history[-1 - back:-1]
            period = 1 if back == 1 or np.array_equal(cyc[0], cyc[1]) else 2
            cycle = tuple(_config_of(x, shape) for x in cyc[:period])
            return RunOutcome(period, tau, cycle, classify_cycle(cycle), False, t)
    return RunOutcome(None, None, (_config_of(history[-1], shape),), None, True, max_rounds)


def _evolve_fingerprint(c0, rule, max_rounds):
    shape = c0.shape
    seen: dict[bytes, list[tuple[int, Configuration]]] = {}
    c = c0
    for t in range(max_rounds + 1):
        fp = _fingerprint(c.bits)
        for t0, prev in seen.get(fp, ()):
            if prev == c:
                cycle, x = [prev], prev
                for _ in range(t - t0 - 1):
                    x = step(x, rule)
                    cycle.append(x)
                cycle = tuple(cycle)
                return RunOutcome(t - t0, t0, cycle, classify_cycle(cycle), False, t)
        seen.setdefault(fp, []).append((t, c))
        if t < max_rounds:
            c = step(c, rule)
    return RunOutcome(None, None, (c,), None, True, max_rounds)


@dataclass
class BatchOutcome:
    """Per-lane results of :func:`evolve_lanes`; arrays have length n_lanes."""

    consensus_time: np.ndarray  # -1 where truncated
    period: np.ndarray  # 0 where truncated
    truncated: np.ndarray
    any_black: np.ndarray  # limit cycle contains a black node
    all_black: np.ndarray  # every cycle configuration is fully black
    rounds: int


def evolve_lanes(x0: np.ndarray, n_lanes: int, rule: UpdateRule, max_rounds: int,
                 on_step=None) -> BatchOutcome:
    """Evolve every lane of a lane array until each one has entered its limit cycle.

    Lanes run in lockstep; a finished lane keeps cycling, so the final two
    states hold its whole cycle (period <= 2 for every implemented rule).
    ``on_step(t, x)`` is called after each round, if given.
    """
    if rule.period_bound not in (1, 2):
        raise ValueError("batched evolution needs a rule with period <= 2")
    active = kernel.lane_mask(n_lanes)
    W = x0.shape[0]
    done = np.zeros(W, np.uint64)
    tau = np.full(n_lanes, -1, np.int64)
    period = np.zeros(n_lanes, np.int64)
    hist = [x0]
    back = rule.period_bound
    t = 0
    while t < max_rounds and np.any(done != active):
        t += 1
        hist.append(rule.step_lanes(hist[-1]))
        if len(hist) > 3:
            hist.pop(0)
        if on_step is not None:
            on_step(t, hist[-1])
        if t < back:
            continue
        diff = kernel.any_per_lane(hist[-1] ^ hist[-1 - back])
        new = ~diff & active & ~done
        if np.any(new):
            lanes = kernel.word_bits(new, n_lanes)
            tau[lanes] = t - back
            if back == 2:
                osc = kernel.word_bits(kernel.any_per_lane(hist[-3] ^ hist[-2]), n_lanes)
                period[lanes] = np.where(osc[lanes], 2, 1)
            else:
                period[lanes] = 1
            done |= new
    last = hist[-2:] if len(hist) >= 2 else hist * 2
    anyb = kernel.any_per_lane(last[0] | last[1])
    allb = kernel.all_per_lane(last[0] & last[1])
    truncated = tau < 0
    return BatchOutcome(tau, period, truncated,
                        kernel.word_bits(anyb, n_lanes) & ~truncated,
                        kernel.word_bits(allb, n_lanes) & ~truncated, t)


def lane_phase(out: BatchOutcome) -> np.ndarray:
    """Per-lane Phase values (None where truncated)."""
    res = np.empty(len(out.truncated), dtype=object)
    res[:] = Phase.COEXIST
    res[~out.any_black] = Phase.FULLY_WHITE
    res[out.all_black] = Phase.FULLY_BLACK
    res[out.truncated] = None
    return res
