"""Example discovery and noise-region search over concrete noise vectors.

Two phases feed the synthesizer:

* ``select_examples`` line-searches scale multiples of a small direction set
  (all unit vectors plus all-ones), runs the statistical tester on each
  concretization, and keeps counterexamples whose p-value lands in the "zone
  of confusion" — neither clear violations nor clearly safe, hence the
  informative boundary cases.

* ``get_noise_region`` minimizes an L0-regularized privacy-loss objective
  over concrete noise vectors with differential evolution (rand/1/bin).  All
  probability estimates ride on one shared :class:`PresampleBank`: noise is
  drawn once from a fixed proposal scale, mechanism outputs are memoized per
  input side, and each candidate vector is scored by importance-reweighting
  those runs.  Per run the log-weight for hole h is N*alpha + S*beta, where N
  counts consumed draws, S sums their magnitudes, and (alpha, beta) depend
  only on candidate vs proposal scale — so scoring a population is a single
  matrix product.

Candidates may switch off a hole entirely (scales below the snap threshold
become "no noise"); runs are re-simulated once per distinct off-mask since
dropping a noise term changes control flow.

A bank may instead draw from a *mixture* of proposal scales (one component
picked per run and hole).  The mixture log-density is itself a function of
the cached (N, S) statistics, so reweighting stays a matrix product; wide
mixtures keep the weights bounded when candidate scales sit far from any
single proposal, which matters when one bank scores candidates whose scales
spread over an order of magnitude.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .dist import log_weight_coeffs, make_dist
from .lang import MechanismSketch, compile_sketch, count_hole_draws
from .tester import test_mechanism

__all__ = [
    "Example", "PresampleBank", "NoiseRegion",
    "directions", "select_examples", "estimate_event_prob",
    "objective", "batch_objective", "example_losses", "get_noise_region",
    "SNAP_THRESHOLD", "BOX_MAX", "DEFAULT_PROPOSAL_SCALE",
]

SNAP_THRESHOLD = 0.25
BOX_MAX = 16.0
DEFAULT_PROPOSAL_SCALE = 4.0
DEFAULT_SCALE_GRID = (0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0)
DEFAULT_ZONE = (0.05, 0.9)


@dataclass(frozen=True)
class Example:
    """A challenging counterexample with its discovery provenance."""

    d1: tuple
    d2: tuple
    event: object
    direction: tuple
    scale: float
    p_value: float


def directions(n_holes: int) -> list:
    """All-ones plus the unit vectors (deduplicated for n = 1)."""
    dirs = [(1,) * n_holes]
    for i in range(n_holes):
        u = tuple(1 if j == i else 0 for j in range(n_holes))
        if u not in dirs:
            dirs.append(u)
    return dirs


def select_examples(sketch: MechanismSketch, args: dict, direction_set=None,
                    scale_grid=DEFAULT_SCALE_GRID, trials: int = 20000,
                    seed: int = 0, zone=DEFAULT_ZONE) -> list:
    """Line-search direction multiples through the tester; keep zone hits
    plus every decision cell that the tester flagged as a violation.

    ``args`` must carry the fixed binding, including ``eps`` and ``qlen``.
    Every distinct zone hit is kept: the set needs both the scale-sensitive
    tail cells (which steer the optimizer toward the right magnitude) and
    the weakly-discriminating mode/half-line cells (which blow up when a
    hole's noise is removed and so keep the L0 reward honest).  Decision
    cells below the zone are kept as well — an under-provisioned sweep
    vector (too little noise, or a hole swept at no-noise) produces its
    strongest separations at p near zero, and those cells are exactly the
    anchors that stop the optimizer from drifting into a non-private
    pattern.  When nothing qualifies, the zone widens to [0.01, 0.99] and
    the trial count doubles, once.
    """
    if not scale_grid:
        raise ValueError("scale grid must be nonempty")
    if direction_set is None:
        direction_set = directions(sketch.n_holes)
    eps = args["eps"]
    qlen = args["qlen"]
    sketch_args = {a: args[a] for a in sketch.args}

    def sweep(zone_lo, zone_hi, n_trials):
        found = {}
        for direction in direction_set:
            for scale in scale_grid:
                vec = [scale * u if u else None for u in direction]
                _, cands = test_mechanism(
                    sketch, sketch_args, vec, eps, trials=n_trials,
                    seed=seed, qlen=qlen, return_all=True)
                for cx in cands:
                    anchor = cx.decision and cx.p_value < zone_lo
                    if not (zone_lo <= cx.p_value <= zone_hi or anchor):
                        continue
                    key = (cx.d1, cx.d2, cx.event)
                    if key not in found:
                        found[key] = Example(
                            d1=cx.d1, d2=cx.d2, event=cx.event,
                            direction=tuple(direction), scale=scale,
                            p_value=cx.p_value)
        return list(found.values())

    examples = sweep(zone[0], zone[1], trials)
    if not examples:
        examples = sweep(0.01, 0.99, 2 * trials)
    return examples


# ---------------------------------------------------------------------------
# Shared presamples + importance-sampling estimator
# ---------------------------------------------------------------------------

def _as_mask(candidate) -> tuple:
    return tuple(c is None for c in candidate)


def snap_vector(raw) -> tuple:
    """Map a raw box point to a noise vector: tiny scales mean "no noise"."""
    return tuple(None if x < SNAP_THRESHOLD else float(x) for x in raw)


class PresampleBank:
    """m noise traces drawn once from the proposal; runs memoized per
    (input side, off-mask); per-run draw statistics cached for reweighting.

    With ``mixture`` set (a tuple of scales), each run draws every hole's
    trace from one uniformly chosen component instead of the single proposal;
    the proposal scale then only serves as the reference density that both
    the candidate and the mixture are expressed against."""

    def __init__(self, sketch: MechanismSketch, args: dict, qlen: int,
                 m: int = 50000, proposal_scale: float = DEFAULT_PROPOSAL_SCALE,
                 seed: int = 0, mixture=None):
        self.sketch = sketch
        self.args = {a: args[a] for a in sketch.args}
        self.qlen = qlen
        self.m = m
        self.proposal_scale = float(proposal_scale)
        self.seed = seed
        self.mixture = tuple(float(s) for s in mixture) if mixture else None
        self.caps = count_hole_draws(sketch, self.args, qlen)
        n = sketch.n_holes
        comp = None
        if self.mixture is not None:
            comp = np.random.default_rng([seed, 999]).integers(
                0, len(self.mixture), size=(m, n))
        self._draws = []        # per hole: list of m rows (python ints)
        self._cum_abs = []      # per hole: (m, cap+1) int64 prefix sums of |v|
        self._mix_coeffs = []   # per hole: (2, K) reference-relative coeffs
        for h, hole in enumerate(sketch.holes):
            cap = self.caps[h]
            if cap == 0:
                self._draws.append([()] * m)
                self._cum_abs.append(np.zeros((m, 1), dtype=np.int64))
                self._mix_coeffs.append(None)
                continue
            if self.mixture is None:
                d = make_dist(hole.family, self.proposal_scale)
                arr = d.sample_array(np.random.default_rng([seed, 1000 + h]),
                                     (m, cap))
                self._mix_coeffs.append(None)
            else:
                arr = np.empty((m, cap), dtype=np.int64)
                for k, scale in enumerate(self.mixture):
                    rows = np.flatnonzero(comp[:, h] == k)
                    if rows.size:
                        dk = make_dist(hole.family, scale)
                        arr[rows] = dk.sample_array(
                            np.random.default_rng([seed, 1000 + h, k]),
                            (rows.size, cap))
                ab = np.array([log_weight_coeffs(hole.family, scale,
                                                 self.proposal_scale)
                               for scale in self.mixture])
                self._mix_coeffs.append(ab.T.copy())
            self._draws.append(arr.tolist())
            cum = np.zeros((m, cap + 1), dtype=np.int64)
            np.cumsum(np.abs(arr), axis=1, out=cum[:, 1:])
            self._cum_abs.append(cum)
        self._runners = {}      # mask -> compiled fn
        self._runs = {}         # (answers, mask) -> (outputs, stats m x 2n)
        self._stats_fp = {}     # (answers, mask) -> digest of stats
        self._mixrel = {}       # (answers, mask) -> (m,) mixture log-density
        self._indicators = {}   # (answers, mask, event) -> float32 (m,)
        self._ind_mats = {}     # (answers, mask, events key) -> float32 (E, m)

    def _runner(self, mask):
        fn = self._runners.get(mask)
        if fn is None:
            fn = self._runners[mask] = compile_sketch(self.sketch, list(mask))
        return fn

    def runs_for(self, answers: tuple, mask: tuple):
        """Outputs plus the (m, 2n) matrix of per-hole draw statistics
        [N_1..N_n, S_1..S_n] for this input side under this off-mask."""
        key = (tuple(answers), mask)
        hit = self._runs.get(key)
        if hit is not None:
            return hit
        fn = self._runner(mask)
        n = self.sketch.n_holes
        answers_list = list(answers)
        outputs = []
        counts = np.zeros((self.m, n), dtype=np.int64)
        draws = self._draws
        for j in range(self.m):
            out, consumed = fn(self.args, answers_list, [col[j] for col in draws])
            outputs.append(out)
            counts[j] = consumed
        stats = np.empty((self.m, 2 * n), dtype=np.float64)
        stats[:, :n] = counts
        rows = np.arange(self.m)
        for h in range(n):
            stats[:, n + h] = self._cum_abs[h][rows, counts[:, h]]
        self._runs[key] = (outputs, stats)
        # sides with identical consumption patterns share importance weights
        self._stats_fp[key] = hashlib.blake2b(
            stats.tobytes(), digest_size=16).digest()
        if self.mixture is not None:
            logk = math.log(len(self.mixture))
            mixrel = np.zeros(self.m)
            for h in range(n):
                if self._mix_coeffs[h] is None:
                    continue
                per_comp = stats[:, [h, n + h]] @ self._mix_coeffs[h]
                mixrel += logsumexp(per_comp, axis=1) - logk
            self._mixrel[key] = mixrel
        return outputs, stats

    def indicator(self, answers: tuple, mask: tuple, event) -> np.ndarray:
        key = (tuple(answers), mask, event)
        hit = self._indicators.get(key)
        if hit is None:
            outputs, _ = self.runs_for(answers, mask)
            hit = np.fromiter((event.contains(o) for o in outputs),
                              dtype=np.float32, count=self.m)
            self._indicators[key] = hit
        return hit

    def _indicator_matrix(self, answers: tuple, mask: tuple,
                          events: tuple) -> np.ndarray:
        key = (tuple(answers), mask, events)
        hit = self._ind_mats.get(key)
        if hit is None:
            hit = np.stack([self.indicator(answers, mask, e) for e in events])
            self._ind_mats[key] = hit
        return hit

    def _weights(self, stats: np.ndarray, coeffs: np.ndarray,
                 mixrel: Optional[np.ndarray] = None):
        """Normalized importance weights per candidate column: (m, B) float32
        weights and their (B,) column sums."""
        logw = stats @ coeffs
        if mixrel is not None:
            logw -= mixrel[:, None]
        logw -= logw.max(axis=0, keepdims=True)
        w = np.exp(logw, out=logw).astype(np.float32)
        return w, w.sum(axis=0, dtype=np.float64)

    def weight_coeffs(self, candidates) -> np.ndarray:
        """(2n, B) coefficient matrix: column b scores candidate b's draws."""
        n = self.sketch.n_holes
        coeffs = np.zeros((2 * n, len(candidates)))
        for b, cand in enumerate(candidates):
            for h, hole in enumerate(self.sketch.holes):
                if cand[h] is None:
                    continue
                alpha, beta = log_weight_coeffs(
                    hole.family, float(cand[h]), self.proposal_scale)
                coeffs[h, b] = alpha
                coeffs[n + h, b] = beta
        return coeffs

    @property
    def clamp(self):
        lo = 1.0 / (10 * self.m)
        return lo, 1.0 - lo

    def estimate_batch(self, answers: tuple, events: list, mask: tuple,
                       coeffs: np.ndarray) -> np.ndarray:
        """Clamped probability estimates, shape (len(events), B)."""
        answers = tuple(answers)
        _, stats = self.runs_for(answers, mask)
        w, den = self._weights(stats, coeffs, self._mixrel.get((answers, mask)))
        ind = self._indicator_matrix(answers, mask, tuple(events))
        lo, hi = self.clamp
        return np.clip((ind @ w) / den, lo, hi)


def estimate_event_prob(bank: PresampleBank, d, event, candidate) -> float:
    """Self-normalized importance estimate of P[mech(d) in event] under the
    candidate noise vector, clamped away from 0 and 1."""
    candidate = tuple(candidate)
    if len(candidate) != bank.sketch.n_holes:
        raise ValueError("candidate length must match the hole count")
    mask = _as_mask(candidate)
    coeffs = bank.weight_coeffs([candidate])
    return float(bank.estimate_batch(tuple(d), [event], mask, coeffs)[0, 0])


_CHUNK = 256


def example_losses(bank: PresampleBank, examples, candidates,
                   floor: float = 0.0) -> np.ndarray:
    """Two-sided loss estimate per (candidate, example), shape (B, n_ex).

    Candidates are grouped by off-mask and chunked; within a group each
    (input side, event) estimate is computed once and shared across the
    examples that reference it, and sides whose runs consumed identical
    draw patterns share one importance-weight computation.

    With ``floor`` > 0 an example only contributes when the candidate's own
    estimate of the event reaches the floor on at least one side; below it
    the ratio is dominated by Monte-Carlo noise and the loss is reported as
    the neutral 1.0 — the estimator-side analogue of the tester's minimum
    count rule."""
    candidates = [tuple(c) for c in candidates]
    by_mask = {}
    for idx, cand in enumerate(candidates):
        by_mask.setdefault(_as_mask(cand), []).append(idx)
    losses = np.zeros((len(candidates), len(examples)))
    side_events = {}
    for ex in examples:
        for side in (ex.d1, ex.d2):
            side_events.setdefault(side, set()).add(ex.event)
    side_events = {side: tuple(sorted(events, key=repr))
                   for side, events in side_events.items()}
    for mask, idxs in by_mask.items():
        for lo in range(0, len(idxs), _CHUNK):
            chunk = idxs[lo:lo + _CHUNK]
            coeffs = bank.weight_coeffs([candidates[i] for i in chunk])
            clamp_lo, clamp_hi = bank.clamp
            w_by_fp = {}
            est = {}
            for side, ev_list in side_events.items():
                _, stats = bank.runs_for(side, mask)
                fp = bank._stats_fp[(side, mask)]
                if fp not in w_by_fp:
                    w_by_fp[fp] = bank._weights(
                        stats, coeffs, bank._mixrel.get((side, mask)))
                w, den = w_by_fp[fp]
                ind = bank._indicator_matrix(side, mask, ev_list)
                block = np.clip((ind @ w) / den, clamp_lo, clamp_hi)
                for row, ev in zip(block, ev_list):
                    est[(side, ev)] = row
            r1 = np.stack([est[(ex.d1, ex.event)] for ex in examples])
            r2 = np.stack([est[(ex.d2, ex.event)] for ex in examples])
            loss_block = np.maximum(r1 / r2, r2 / r1)
            if floor > 0.0:
                loss_block = np.where(np.maximum(r1, r2) >= floor,
                                      loss_block, 1.0)
            losses[np.ix_(chunk, range(len(examples)))] = loss_block.T
    return losses


def _group_losses(bank: PresampleBank, examples, candidates,
                  floor: float = 0.0) -> np.ndarray:
    """Worst-example loss estimate per candidate, shape (B,)."""
    return example_losses(bank, examples, candidates, floor=floor).max(axis=1)


def batch_objective(bank: PresampleBank, examples, candidates, target_eps,
                    lam: float = 1.0, log_form: bool = False,
                    floor: float = 0.0) -> np.ndarray:
    """Objective for many candidates: |worst loss - e^eps| + lam * ||c||_0.

    ``log_form`` swaps the main term for |log(worst loss) - eps| (the
    diagnostic variant used in grid dumps); ``floor`` is forwarded to
    :func:`example_losses` so sub-resolution events score neutrally."""
    if not examples:
        raise ValueError("need at least one example to score candidates")
    candidates = [tuple(c) for c in candidates]
    worst = _group_losses(bank, examples, candidates, floor=floor)
    eps = float(target_eps)
    if log_form:
        main = np.abs(np.log(worst) - eps)
    else:
        main = np.abs(worst - math.exp(eps))
    l0 = np.array([sum(c is not None for c in cand) for cand in candidates],
                  dtype=np.float64)
    return main + lam * l0


def objective(bank: PresampleBank, examples, candidate, target_eps,
              lam: float = 1.0, floor: float = 0.0) -> float:
    return float(batch_objective(bank, examples, [candidate], target_eps, lam,
                                 floor=floor)[0])


# ---------------------------------------------------------------------------
# Differential evolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseRegion:
    """Final population (noise vector, objective), sorted best-first.

    ``champions`` holds the best vector evaluated for every no-noise mask
    the search ever visited, sorted best-first.  The final population
    usually collapses into a single basin; when two masks are equally good
    (e.g. either of two holes alone suffices), the champions preserve the
    losing basin so that enumeration can still reach it.
    """

    entries: tuple
    target_eps: float
    lam: float
    seed: int
    population: int
    steps: int
    champions: tuple = ()

    def best(self):
        return self.entries[0]

    def to_json(self) -> dict:
        def vec_json(vec):
            return [None if v is None else float(v) for v in vec]

        return {
            "entries": [
                {"vector": vec_json(vec), "objective": float(obj)}
                for vec, obj in self.entries
            ],
            "champions": [
                {"vector": vec_json(vec), "objective": float(obj)}
                for vec, obj in self.champions
            ],
            "target_eps": self.target_eps,
            "lam": self.lam,
            "seed": self.seed,
            "population": self.population,
            "steps": self.steps,
        }


def get_noise_region(bank: PresampleBank, examples, n_holes: int, target_eps,
                     lam: float = 1.0, population: int = 50, steps: int = 500,
                     seed: int = 0, F: float = 0.7, CR: float = 0.9,
                     floor: float = 0.0,
                     history: Optional[list] = None) -> NoiseRegion:
    """rand/1/bin differential evolution over the [0, 16]^n box.

    Each generation mutates every member (x_r1 + F*(x_r2 - x_r3), clipped),
    binomially crosses with rate CR, and keeps the trial on an objective tie
    or improvement.  Coordinates below the snap threshold execute as "no
    noise" and count zero toward the L0 term.  Alongside the population the
    search records a champion (best vector evaluated) per no-noise mask.
    ``history``, when supplied, collects the best objective after each
    generation.
    """
    if population < 4:
        raise ValueError("rand/1/bin needs a population of at least 4")
    if steps < 1:
        raise ValueError("steps must be positive")
    rng = np.random.default_rng([seed, 2])
    champs = {}

    def score(rows):
        snapped = [snap_vector(r) for r in rows]
        out = batch_objective(bank, examples, snapped, target_eps, lam,
                              floor=floor)
        for vec, o in zip(snapped, out):
            mask = _as_mask(vec)
            if mask not in champs or o < champs[mask][1]:
                champs[mask] = (vec, float(o))
        return out

    x = rng.uniform(0.0, BOX_MAX, (population, n_holes))
    obj = score(x)
    if history is not None:
        history.append(float(obj.min()))
    idx = np.arange(population)
    for _ in range(steps):
        donors = np.empty((population, 3), dtype=np.int64)
        for i in range(population):
            picks = rng.choice(population - 1, size=3, replace=False)
            picks += picks >= i
            donors[i] = picks
        r1, r2, r3 = donors[:, 0], donors[:, 1], donors[:, 2]
        mutant = np.clip(x[r1] + F * (x[r2] - x[r3]), 0.0, BOX_MAX)
        cross = rng.random((population, n_holes)) < CR
        forced = rng.integers(0, n_holes, population)
        cross[idx, forced] = True
        trial = np.where(cross, mutant, x)
        tobj = score(trial)
        better = tobj <= obj
        x[better] = trial[better]
        obj[better] = tobj[better]
        if history is not None:
            history.append(float(obj.min()))
    order = np.argsort(obj, kind="stable")
    entries = tuple((snap_vector(x[i]), float(obj[i])) for i in order)
    champions = tuple(sorted(champs.values(), key=lambda e: e[1]))
    return NoiseRegion(entries=entries, target_eps=float(target_eps),
                       lam=lam, seed=seed, population=population, steps=steps,
                       champions=champions)
