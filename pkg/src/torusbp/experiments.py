"""Seeded random initial configurations, Monte Carlo sweeps over p, coupled
threshold bisection and log-log exponent fits."""
from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from . import kernel
from .dynamics import BatchOutcome, UpdateRule, TwoWayBP, default_max_rounds, evolve_lanes
from .lattice import Configuration, TorusShape

log = logging.getLogger(__name__)

GENERATOR = "numpy.random.Philox(key=SeedSequence(seed, spawn_key=indices).generate_state(2, uint64))"


class Event(str, enum.Enum):
    BLACK_SURVIVES = "BlackSurvives"
    FULLY_BLACK = "FullyBlack"
    FULLY_WHITE = "FullyWhite"
    COEXIST = "Coexist"

    @property
    def increasing(self) -> bool | None:
        """Direction of the event in p for monotone rules (None: not monotone)."""
        return {"BlackSurvives": True, "FullyBlack": True, "FullyWhite": False}.get(self.value)


class MonotonicityError(RuntimeError):
    """Coupled trials contradict monotonicity of the event in p."""


class BracketError(ValueError):
    """The initial p-interval does not straddle the 50% level."""


def philox(seed: int, *indices: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, indices)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in indices))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


def uniforms(shape: TorusShape, seed: int, *indices: int) -> np.ndarray:
    """One uniform per node, in bit-index order."""
    return philox(seed, *indices).random(shape.n_nodes)


def _check_p(p: float):
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"p must lie in [0, 1], got {p}")


def random_config(shape: TorusShape, p: float, seed: int, *indices: int) -> Configuration:
    """Each node black independently with probability p."""
    _check_p(p)
    return Configuration.from_flat(shape, uniforms(shape, seed, *indices) < p)


def ball_offsets(d: int, T: int) -> list[tuple[int, ...]]:
    """Offsets of graph distance <= T (on the infinite lattice)."""
    rng = range(-T, T + 1)
    return [o for o in itertools.product(rng, repeat=d) if sum(map(abs, o)) <= T]


def ball_count(flat: np.ndarray, shape: TorusShape, T: int) -> np.ndarray:
    """Black nodes within graph distance T of each node (each node counted once)."""
    arr = np.asarray(flat, bool).reshape(shape.dims, order="F").astype(np.int32)
    offs = {tuple(x % shape.L for x in o) for o in ball_offsets(shape.d, T)}
    total = np.zeros_like(arr)
    for o in offs:
        total += np.roll(arr, o, axis=tuple(range(shape.d)))
    return total.ravel(order="F")


@dataclass(frozen=True, eq=False)
class DependentSample:
    config: Configuration
    stage1: Configuration
    stage1_p: float


def locally_dependent_config(shape: TorusShape, p: float, r: int, T: int, seed: int, *indices: int,
                             keep_stage1: bool = False):
    """Two-stage sample: Bernoulli(p ** (1 / 2**(r-1))) seeds, then a node is
    black iff its distance-T ball holds at least 2**(r-1) seeds.

    With ``keep_stage1`` the seed layer is returned alongside.
    """
    _check_p(p)
    if T < 0:
        raise ValueError("T must be >= 0")
    if r < 1:
        raise ValueError("r must be >= 1")
    s = 2 ** (r - 1)
    q = p ** (1.0 / s)
    seeds = uniforms(shape, seed, *indices) < q
    final = ball_count(seeds, shape, T) >= s
    c = Configuration.from_flat(shape, final)
    if keep_stage1:
        return DependentSample(c, Configuration.from_flat(shape, seeds), q)
    return c


def wilson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class SweepSpec:
    shape: TorusShape
    rule: UpdateRule
    probabilities: tuple[float, ...]
    trials: int = 400
    master_seed: int = 0
    max_rounds: int | None = None
    event: Event = Event.BLACK_SURVIVES

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        for p in self.probabilities:
            _check_p(p)
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "event", Event(self.event))
        self.rule.validate(self.shape)

    @property
    def rounds_cap(self) -> int:
        return default_max_rounds(self.shape) if self.max_rounds is None else self.max_rounds


def event_hits(out: BatchOutcome, event: Event) -> np.ndarray:
    if event is Event.BLACK_SURVIVES:
        return out.any_black
    if event is Event.FULLY_BLACK:
        return out.all_black
    if event is Event.FULLY_WHITE:
        return ~out.any_black & ~out.truncated
    return out.any_black & ~out.all_black


def run_batch(flat_configs: np.ndarray, shape: TorusShape, rule: UpdateRule, max_rounds: int) -> BatchOutcome:
    """Evolve a stack of flat configurations (B, N) to their limit cycles."""
    x = kernel.pack(flat_configs, shape)
    return evolve_lanes(x, flat_configs.shape[0], rule, max_rounds)


@dataclass
class SweepPoint:
    p: float
    frequency: float
    ci_low: float
    ci_high: float
    hits: int
    valid: int
    truncated: int


def run_sweep(spec: SweepSpec) -> list[SweepPoint]:
    """Event frequency with a Wilson 95% interval at every probe.

    Trial t of probe i draws its configuration from the generator keyed by
    (master_seed, i, t); truncated runs are excluded and counted.
    """
    out = []
    for i, p in enumerate(spec.probabilities):
        flats = np.stack([uniforms(spec.shape, spec.master_seed, i, t) < p for t in range(spec.trials)])
        res = run_batch(flats, spec.shape, spec.rule, spec.rounds_cap)
        hits = event_hits(res, spec.event) & ~res.truncated
        n = int((~res.truncated).sum())
        k = int(hits.sum())
        lo, hi = wilson(k, n)
        out.append(SweepPoint(p, k / n if n else float("nan"), lo, hi, k, n, int(res.truncated.sum())))
    return out


@dataclass
class ThresholdEstimate:
    p50: float
    lower: float
    upper: float
    trials: int
    trace: list[SweepPoint] = field(default_factory=list)
    truncated: int = 0

    def __post_init__(self):
        if not self.lower <= self.p50 <= self.upper:
            raise ValueError(f"need lower <= p50 <= upper, got {self.lower}, {self.p50}, {self.upper}")


class CoupledTrials:
    """Trial t uses one uniform per node keyed by (master_seed, t); a node is
    black at level p iff its uniform is below p, so configurations increase
    with p trial by trial."""

    def __init__(self, spec: SweepSpec):
        self.spec = spec
        self.u = np.stack([uniforms(spec.shape, spec.master_seed, t) for t in range(spec.trials)])
        self.outcomes: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def evaluate(self, p: float) -> SweepPoint:
        spec = self.spec
        res = run_batch(self.u < p, spec.shape, spec.rule, spec.rounds_cap)
        hits = event_hits(res, spec.event) & ~res.truncated
        self.outcomes[p] = (hits, res.truncated)
        self._check_monotone()
        n = int((~res.truncated).sum())
        k = int(hits.sum())
        lo, hi = wilson(k, n)
        return SweepPoint(p, k / n if n else float("nan"), lo, hi, k, n, int(res.truncated.sum()))

    def _check_monotone(self):
        inc = self.spec.event.increasing
        ps = sorted(self.outcomes)
        for a, b in zip(ps, ps[1:]):
            ha, ta = self.outcomes[a]
            hb, tb = self.outcomes[b]
            ok = ~ta & ~tb
            bad = (ha & ~hb) if inc else (~ha & hb)
            n_bad = int((bad & ok).sum())
            if n_bad:
                raise MonotonicityError(
                    f"{n_bad} coupled trials flip {self.spec.event.value} the wrong way between p={a:.6g} and p={b:.6g}"
                )


def estimate_threshold(spec: SweepSpec, tolerance: float = 0.02,
                       bracket: tuple[float, float] | None = None, max_steps: int = 60) -> ThresholdEstimate:
    """Geometric bisection for the p where the event frequency crosses 1/2.

    Probes move the bracket while their Wilson interval excludes 1/2; the
    search stops at the first probe whose interval contains 1/2 or once
    upper/lower - 1 < tolerance.  ``lower``/``upper`` are the last decisive
    probes on each side and p50 is the interpolated crossing inside them.
    """
    inc = spec.event.increasing
    if inc is None:
        raise ValueError(f"{spec.event.value} is not monotone in p; no threshold to bisect")
    if bracket is None:
        if len(spec.probabilities) >= 2:
            bracket = (min(spec.probabilities), max(spec.probabilities))
        else:
            bracket = (1.0 / spec.shape.n_nodes, 1.0)
    lo, hi = map(float, bracket)
    if not 0 < lo < hi <= 1:
        raise ValueError(f"bracket must satisfy 0 < lo < hi <= 1, got {bracket}")
    trials = CoupledTrials(spec)
    trace = []

    def side(pt: SweepPoint) -> int:
        """+1 if the probe is decisively on the high-p side, -1 low side, 0 undecided."""
        if pt.valid == 0:
            return 0
        above = pt.ci_low > 0.5
        below = pt.ci_high < 0.5
        if not (above or below):
            return 0
        return 1 if above == inc else -1

    for p, want in ((lo, -1), (hi, 1)):
        pt = trials.evaluate(p)
        trace.append(pt)
        if side(pt) != want:
            raise BracketError(
                f"{spec.event.value} frequency {pt.frequency:.3f} at p={p:.6g} "
                f"does not lie decisively on the {'low' if want < 0 else 'high'} side of 1/2"
            )
    for _ in range(max_steps):
        if hi / lo - 1 < tolerance:
            break
        mid = math.sqrt(lo * hi)
        pt = trials.evaluate(mid)
        trace.append(pt)
        s = side(pt)
        if s == 0:
            break
        if s < 0:
            lo = mid
        else:
            hi = mid
    p50 = crossing(trace, lo, hi, inc)
    return ThresholdEstimate(p50, lo, hi, spec.trials, trace, sum(pt.truncated for pt in trace))


def crossing(trace: Sequence[SweepPoint], lo: float, hi: float, increasing: bool = True) -> float:
    """Where the measured frequency crosses 1/2, interpolated linearly in log p
    between neighbouring probes in [lo, hi]."""
    pts = sorted((pt.p, pt.frequency if increasing else 1 - pt.frequency)
                 for pt in trace if lo <= pt.p <= hi and pt.valid)
    for (pa, fa), (pb, fb) in zip(pts, pts[1:]):
        if fa <= 0.5 <= fb:
            if fb == fa:
                return math.sqrt(pa * pb)
            w = (0.5 - fa) / (fb - fa)
            return math.exp(math.log(pa) + w * (math.log(pb) - math.log(pa)))
    return math.sqrt(lo * hi)


@dataclass
class ScalingFit:
    points: list[tuple[float, float]]
    slope: float
    intercept: float
    residual: float  # root-mean-square residual of log p50
    predicted: float

    @property
    def deviation(self) -> float:
        return self.slope - self.predicted


def fit_exponent(points: Sequence[tuple[float, float]], predicted: float) -> ScalingFit:
    """Least-squares slope of log p50 against log L."""
    pts = [(float(L), float(p)) for L, p in points]
    if len({L for L, _ in pts}) < 3:
        raise ValueError("need at least 3 distinct L values")
    if any(L <= 0 or p <= 0 for L, p in pts):
        raise ValueError("L and p50 must be positive")
    x = np.log([L for L, _ in pts])
    y = np.log([p for _, p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return ScalingFit(pts, float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))), float(predicted))


def predicted_exponent(d: int, r: int) -> float:
    """Exponent of the fully-white threshold L ** (-d / 2**(r-1))."""
    return -d / 2 ** (r - 1)


@dataclass
class ScalingRun:
    fit: ScalingFit
    estimates: dict[int, ThresholdEstimate]


def measure_scaling(d: int, r: int, sizes: Sequence[int], trials: int = 400, master_seed: int = 0,
                    event: Event = Event.BLACK_SURVIVES, tolerance: float = 0.02,
                    rule: UpdateRule | None = None) -> ScalingRun:
    """Threshold at each L over the bracket (L**-d, 1), then the fitted exponent."""
    rule = rule or TwoWayBP(r)
    ests = {}
    for L in sizes:
        shape = TorusShape(d, L)
        spec = SweepSpec(shape, rule, (1.0 / shape.n_nodes, 1.0), trials, master_seed, None, event)
        ests[L] = estimate_threshold(spec, tolerance)
        log.info("L=%d p50=%.5g [%.5g, %.5g]", L, ests[L].p50, ests[L].lower, ests[L].upper)
    fit = fit_exponent([(L, e.p50) for L, e in ests.items()], predicted_exponent(d, r))
    return ScalingRun(fit, ests)
