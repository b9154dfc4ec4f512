"""Symbolic completion of noise holes: enumerate, prune, rank, verify.

The concrete noise region found by differential evolution anchors an
enumerative search over a small expression grammar (coefficient times a power
of the query count times a power of 1/eps, or "no noise").  Expression
vectors whose concrete values at the fixed binding fall within an L1
neighborhood of some region member survive pruning; survivors are ranked
against test examples across several argument bindings by (violations,
privacy-loss tightness, injected noise magnitude) and the top few are
re-checked with the statistical tester before being reported.

Expression arithmetic is exact (rationals) so rankings cannot wobble with
floating-point noise; floats appear only inside the estimators.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from .config import RunConfig, _frac_str
from .lang import MechanismSketch
from .search import (Example, NoiseRegion, PresampleBank, example_losses,
                     get_noise_region, select_examples)
from .tester import (CoordEvent, PrefixEvent, ValueEvent, counterexample_record,
                     decision_p, test_mechanism)

__all__ = [
    "NoiseExpr", "Grammar", "RankedCandidate", "SynthError", "SynthOutcome",
    "enumerate_and_prune", "rank_candidates", "final_verify", "synth",
    "fix_params", "render_vector",
]


class SynthError(Exception):
    def __init__(self, phase: str, message: str):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase


# ---------------------------------------------------------------------------
# Grammar
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseExpr:
    """coeff * qlen^q_exp * (1/eps)^inveps_exp * T^t_exp, all exponents >= 0."""

    coeff: int
    q_exp: int
    inveps_exp: int
    t_exp: int = 0

    def gamma(self, binding: dict) -> Fraction:
        val = Fraction(self.coeff)
        if self.q_exp:
            val *= Fraction(binding["qlen"]) ** self.q_exp
        if self.inveps_exp:
            val /= Fraction(binding["eps"]) ** self.inveps_exp
        if self.t_exp:
            val *= Fraction(binding["T"]) ** self.t_exp
        return val

    def render(self) -> str:
        num = [] if self.coeff == 1 else [str(self.coeff)]
        if self.q_exp == 1:
            num.append("qlen")
        elif self.q_exp > 1:
            num.append(f"qlen^{self.q_exp}")
        if self.t_exp == 1:
            num.append("T")
        elif self.t_exp > 1:
            num.append(f"T^{self.t_exp}")
        head = "*".join(num) if num else "1"
        if self.inveps_exp == 1:
            return f"{head}/eps"
        if self.inveps_exp > 1:
            return f"{head}/eps^{self.inveps_exp}"
        return head


def render_vector(exprs) -> str:
    return "(" + ", ".join("bot" if e is None else e.render() for e in exprs) + ")"


@dataclass(frozen=True)
class Grammar:
    coeff_range: tuple = (1, 4)
    qlen_exp_range: tuple = (0, 2)
    inveps_exp_range: tuple = (1, 2)
    t_exp_range: tuple = (0, 0)

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Grammar":
        return cls(tuple(cfg.coeff_range), tuple(cfg.qlen_exp_range),
                   tuple(cfg.inveps_exp_range), tuple(cfg.t_exp_range))

    def expressions(self) -> list:
        """No-noise first, then lexicographic in (coeff, q_exp, inveps_exp,
        t_exp) — the tie-break order for all downstream ranking."""
        out = [None]
        for c in range(self.coeff_range[0], self.coeff_range[1] + 1):
            for q in range(self.qlen_exp_range[0], self.qlen_exp_range[1] + 1):
                for e in range(self.inveps_exp_range[0], self.inveps_exp_range[1] + 1):
                    for t in range(self.t_exp_range[0], self.t_exp_range[1] + 1):
                        out.append(NoiseExpr(c, q, e, t))
        return out


def gamma_vector(exprs, binding: dict) -> tuple:
    """Concrete noise scales (floats, None for no-noise) at a binding."""
    return tuple(None if e is None else float(e.gamma(binding)) for e in exprs)


# ---------------------------------------------------------------------------
# Pruning against the noise region
# ---------------------------------------------------------------------------

_CHAMPION_SLACK = 0.5


def _prune_anchors(region: NoiseRegion) -> list:
    """Region vectors that pruning measures distance against: the final
    population plus any per-mask champion whose objective is within the
    cost of one extra noise hole (lam, plus estimator slack) of the best.
    The population almost always collapses into one basin; near-tied
    champions keep the other basins reachable by enumeration."""
    anchors = [vec for vec, _ in region.entries]
    if region.champions:
        cut = region.entries[0][1] + region.lam + _CHAMPION_SLACK
        anchors.extend(vec for vec, obj in region.champions if obj <= cut)
    return anchors


def enumerate_and_prune(grammar: Grammar, region: NoiseRegion, args: dict,
                        radius: float = 3.0) -> list:
    """Expression vectors whose gamma-values have an L1 witness in the region.

    A no-noise hole matches only region coordinates that snapped to no-noise
    (distance 0 there); a noisy hole measures |gamma - scale| against the
    member's coordinate, counting snapped coordinates as 0.0.
    """
    if not region.entries:
        raise ValueError("region must be nonempty")
    if not radius > 0:
        raise ValueError("radius must be positive")
    exprs = grammar.expressions()
    anchors = _prune_anchors(region)
    n = len(anchors[0])
    gvals = np.array([0.0 if e is None else float(e.gamma(args)) for e in exprs])
    gbot = np.array([e is None for e in exprs])

    rvec = np.array([[0.0 if v is None else v for v in vec]
                     for vec in anchors])                      # (R, n)
    rbot = np.array([[v is None for v in vec]
                     for vec in anchors])                      # (R, n)

    kept = []
    per_hole = [np.arange(len(exprs))] * n
    for combo in itertools.product(*per_hole):
        idx = np.array(combo)
        cg = gvals[idx]                                        # (n,)
        cb = gbot[idx]                                         # (n,)
        bad = cb[None, :] & ~rbot                              # (R, n)
        diff = np.abs(cg[None, :] - rvec)
        diff[:, cb] = 0.0
        dist = diff.sum(axis=1)
        dist[bad.any(axis=1)] = np.inf
        if dist.min() <= radius + 1e-9:
            kept.append(tuple(exprs[i] for i in combo))
    return kept


# ---------------------------------------------------------------------------
# Test-example construction at varied bindings
# ---------------------------------------------------------------------------

def _reshape_pair(d1: tuple, d2: tuple, qlen: int) -> tuple:
    """Truncate or extend an answer pair to ``qlen``, padding both sides with
    the same fill so the pair's adjacency pattern is preserved."""
    if len(d1) >= qlen:
        return tuple(d1[:qlen]), tuple(d2[:qlen])
    pad = (d1[-1],) * (qlen - len(d1))
    return tuple(d1) + pad, tuple(d2) + pad


def _event_valid_at(event, qlen: int) -> bool:
    if isinstance(event, CoordEvent):
        return event.coord < qlen
    if isinstance(event, ValueEvent):
        vals = list(event.values)
        if vals and isinstance(vals[0], tuple) and not all(
                isinstance(x, bool) for x in vals[0]):
            # fixed integer tuples only match outputs of their own length
            return all(len(v) == qlen for v in vals)
    return True


def _inherit_examples(examples, qlen: int) -> list:
    out = []
    for ex in examples:
        if not _event_valid_at(ex.event, qlen):
            continue
        d1, d2 = _reshape_pair(ex.d1, ex.d2, qlen)
        if d1 == d2:
            continue
        out.append(replace(ex, d1=d1, d2=d2))
    return out


def _fresh_examples(sketch, binding, best_vector, cfg: RunConfig, seed) -> list:
    """One tester pass at the region's best vector rescaled to the binding's
    epsilon; zone hits become extra test examples."""
    factor = float(Fraction(1, 2) / Fraction(binding["eps"]))
    vec = [None if v is None else float(v) * factor for v in best_vector]
    sketch_args = {a: binding[a] for a in sketch.args}
    _, cands = test_mechanism(sketch, sketch_args, vec, binding["eps"],
                              trials=cfg.trials, seed=seed,
                              qlen=binding["qlen"], return_all=True)
    out = []
    for cx in cands:
        if cfg.zone[0] <= cx.p_value <= cfg.zone[1]:
            out.append(Example(d1=cx.d1, d2=cx.d2, event=cx.event,
                               direction=(), scale=round(factor, 6),
                               p_value=cx.p_value))
    return out


def build_test_examples(sketch, examples, region_best, bindings,
                        cfg: RunConfig) -> dict:
    """Per binding: inherited example shapes rescaled to the binding's length
    plus fresh zone hits, deduplicated, capped by p-centrality."""
    out = {}
    for b_idx, binding in enumerate(bindings):
        pool = _inherit_examples(examples, binding["qlen"])
        pool += _fresh_examples(sketch, binding, region_best, cfg,
                                seed=[cfg.seed, 5, b_idx])
        seen = {}
        for ex in pool:
            key = (ex.d1, ex.d2, ex.event)
            if key not in seen:
                seen[key] = ex
        pool = sorted(seen.values(), key=lambda ex: abs(ex.p_value - 0.5))
        out[_binding_key(binding)] = pool[:cfg.examples_cap]
    return out


def _binding_key(binding: dict) -> str:
    return f"eps={_frac_str(binding['eps'])},qlen={binding['qlen']}"


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

LOSS_GRAIN = 0.1  # log-loss comparison resolution (about +-5% multiplicative)


@dataclass(frozen=True)
class RankedCandidate:
    exprs: tuple
    violations: int
    worst_loss: float        # max estimated loss over all test examples
    magnitude: Fraction      # total gamma at the fixed binding
    enum_index: int
    per_binding: tuple = ()  # ((binding key, worst loss, violations), ...)
    verdicts: tuple = ()     # ((binding key, min p, confirm p or None), ...)

    def sort_key(self):
        # losses are Monte-Carlo estimates, so the key compares them at the
        # estimator's resolution: candidates within one log-loss grain tie
        # on loss and fall through to the noise-magnitude key (a completion
        # that merely post-processes another has the same true loss and
        # should lose on the extra noise, not win on estimate wobble)
        quantized = round(math.log(self.worst_loss) / LOSS_GRAIN)
        return (self.violations, -quantized, self.magnitude, self.enum_index)

    def to_json(self) -> dict:
        d = {
            "completion": render_vector(self.exprs),
            "exprs": ["bot" if e is None else e.render() for e in self.exprs],
            "violations": self.violations,
            "worst_loss": round(self.worst_loss, 6),
            "magnitude": _frac_str(self.magnitude),
            "enum_index": self.enum_index,
            "per_binding": [
                {"binding": k, "worst_loss": round(float(l), 6),
                 "violations": int(v)}
                for k, l, v in self.per_binding
            ],
        }
        if self.verdicts:
            out = []
            for k, p, cp in self.verdicts:
                v = {"binding": k, "min_p": round(float(p), 6)}
                if cp is not None:
                    v["confirm_p"] = round(float(cp), 6)
                out.append(v)
            d["verdicts"] = out
        return d


def rank_candidates(cands, bindings_data, gamma_binding: dict,
                    cfg: RunConfig) -> list:
    """Score every candidate at every binding and sort by the lexicographic
    key (violations asc, worst loss desc, magnitude asc, enumeration order).

    ``bindings_data`` is a list of (binding, bank, examples); a violation is
    an example whose loss estimate exceeds e^eps * (1 + slack) at that
    binding's epsilon.  Among equally private candidates the higher worst
    loss marks the tighter (less over-noised) completion; losses within one
    ``LOSS_GRAIN`` of each other count as equal and defer to magnitude.
    """
    if not cands:
        return []
    if not any(examples for _, _, examples in bindings_data):
        raise ValueError("no test examples at any binding")
    n_c = len(cands)
    violations = np.zeros(n_c, dtype=np.int64)
    worst_loss = np.full(n_c, -np.inf)
    per_binding = [[] for _ in range(n_c)]
    for binding, bank, examples in bindings_data:
        if not examples:
            continue
        eps = float(binding["eps"])
        concrete = [gamma_vector(exprs, binding) for exprs in cands]
        losses = example_losses(bank, examples, concrete,
                                floor=cfg.event_floor)         # (C, n_ex)
        threshold = math.exp(eps) * (1.0 + cfg.slack)
        v = (losses > threshold).sum(axis=1)
        worst = losses.max(axis=1)
        violations += v
        worst_loss = np.maximum(worst_loss, worst)
        key = _binding_key(binding)
        for i in range(n_c):
            per_binding[i].append((key, float(worst[i]), int(v[i])))
    ranked = [
        RankedCandidate(
            exprs=tuple(exprs), violations=int(violations[i]),
            worst_loss=float(worst_loss[i]),
            magnitude=sum((e.gamma(gamma_binding) for e in exprs
                           if e is not None), Fraction(0)),
            enum_index=i, per_binding=tuple(per_binding[i]))
        for i, exprs in enumerate(cands)
    ]
    ranked.sort(key=RankedCandidate.sort_key)
    return ranked


# ---------------------------------------------------------------------------
# Final verification
# ---------------------------------------------------------------------------

def final_verify(sketch: MechanismSketch, ranked, bindings, cfg: RunConfig):
    """Re-test the top 5 * #holes candidates with the statistical tester at
    every binding; reject any with a counterexample below ``verify_alpha``.

    Rejection reads the tester's decision cells (one pilot-selected event
    per pair and orientation), not the raw minimum over every derived
    event, which is multiplicity-biased.  A flagged binding additionally
    only rejects after the result reproduces under an independent seed;
    real violations sit many orders of magnitude below alpha and confirm
    trivially.  Returns (survivors, details) with per-binding decision
    p-values attached; survivor order follows the incoming ranking."""
    budget = 5 * sketch.n_holes
    top = ranked[:budget]
    survivors = []
    details = []
    for c_idx, cand in enumerate(top):
        verdicts = []
        rejected = False
        for b_idx, binding in enumerate(bindings):
            vec = gamma_vector(cand.exprs, binding)
            sketch_args = {a: binding[a] for a in sketch.args}

            def run_once(rep):
                _, cands = test_mechanism(
                    sketch, sketch_args, vec, binding["eps"],
                    trials=cfg.trials, seed=[cfg.seed, 7, c_idx, b_idx, rep],
                    qlen=binding["qlen"], return_all=True)
                return decision_p(cands)

            min_p = run_once(0)
            confirm_p = None
            if min_p < cfg.verify_alpha:
                confirm_p = run_once(1)
            verdicts.append((_binding_key(binding), min_p, confirm_p))
            if confirm_p is not None and confirm_p < cfg.verify_alpha:
                rejected = True
                break
        verified = replace(cand, verdicts=tuple(verdicts))
        entry = {"candidate": render_vector(cand.exprs), "rejected": rejected,
                 "verdicts": []}
        for k, p, cp in verdicts:
            v = {"binding": k, "min_p": round(p, 6)}
            if cp is not None:
                v["confirm_p"] = round(cp, 6)
            entry["verdicts"].append(v)
        details.append(entry)
        if not rejected:
            survivors.append(verified)
    return survivors, details


# ---------------------------------------------------------------------------
# Orchestrator
# ---------------------------------------------------------------------------

def fix_params(sketch: MechanismSketch, cfg: RunConfig) -> dict:
    """The fixed argument binding for example discovery and optimization."""
    binding = {"eps": cfg.epsilon, "qlen": cfg.qlen}
    for a in sketch.args:
        if a not in cfg.fixed_args:
            raise SynthError("init", f"no fixed value for sketch argument {a!r}")
        binding[a] = cfg.fixed_args[a]
    return binding


def _bindings(sketch: MechanismSketch, cfg: RunConfig) -> list:
    out = []
    for eps in cfg.test_eps:
        for qlen in cfg.test_qlens:
            binding = {"eps": eps, "qlen": qlen}
            for a in sketch.args:
                binding[a] = cfg.fixed_args[a]
            out.append(binding)
    return out


def _proposal_at(cfg: RunConfig, eps) -> float:
    # keep target/proposal scale ratios stable across bindings: the fixed
    # binding uses proposal_scale as-is, others rescale by 1/eps
    return cfg.proposal_scale * float(Fraction(1, 2) / Fraction(eps))


def _mixture_at(cfg: RunConfig, eps) -> tuple:
    # scoring banks cover the whole discovery grid, rescaled to the binding,
    # so candidates far from the central proposal still get stable weights
    factor = float(Fraction(1, 2) / Fraction(eps))
    return tuple(g * factor for g in cfg.scale_grid)


@dataclass
class SynthOutcome:
    report: dict
    timings: dict
    survivors: list
    ranked: list
    region: Optional[NoiseRegion]
    examples: list


def synth(sketch: MechanismSketch, cfg: RunConfig,
          grammar: Optional[Grammar] = None) -> SynthOutcome:
    """End-to-end synthesis: fix the binding, discover examples, optimize the
    noise region, enumerate and prune expressions, rank across bindings, and
    verify the top candidates.  The returned report is reproducible byte for
    byte at a fixed config; wall-clock numbers live in ``timings`` only."""
    cfg.validate()
    grammar = grammar or Grammar.from_config(cfg)
    timings = {}
    t_total = time.perf_counter()

    # --- init: fixed binding, examples, primary bank
    t0 = time.perf_counter()
    try:
        gamma_binding = fix_params(sketch, cfg)
        examples = select_examples(
            sketch, gamma_binding, scale_grid=cfg.scale_grid,
            trials=cfg.trials, seed=cfg.seed, zone=cfg.zone)
        banks = {}

        def bank_for(binding, scoring: bool = False):
            # the optimizer rides a single-proposal bank; scoring banks mix
            # proposal scales so that every pruned candidate stays in range
            key = (binding["eps"], binding["qlen"], scoring)
            if key not in banks:
                banks[key] = PresampleBank(
                    sketch, binding, qlen=binding["qlen"], m=cfg.presamples,
                    proposal_scale=_proposal_at(cfg, binding["eps"]),
                    seed=cfg.seed,
                    mixture=_mixture_at(cfg, binding["eps"]) if scoring
                    else None)
            return banks[key]

        primary_bank = bank_for(gamma_binding)
    except SynthError:
        raise
    except Exception as exc:
        raise SynthError("init", str(exc)) from exc
    timings["init"] = time.perf_counter() - t0

    if not examples:
        timings["total"] = time.perf_counter() - t_total
        report = _report(sketch, cfg, examples, None, [], [], [], [],
                         note="no challenging examples found")
        return SynthOutcome(report, timings, [], [], None, [])

    # --- opti: differential evolution over concrete noise vectors
    t0 = time.perf_counter()
    try:
        region = get_noise_region(
            primary_bank, examples, sketch.n_holes, float(cfg.epsilon),
            lam=cfg.lam, population=cfg.population,
            steps=cfg.steps(sketch.n_holes), seed=cfg.seed,
            floor=cfg.event_floor)
    except Exception as exc:
        raise SynthError("opti", str(exc)) from exc
    timings["opti"] = time.perf_counter() - t0

    # --- enum: prune grammar, build test examples, rank
    t0 = time.perf_counter()
    try:
        radius_used = cfg.radius
        cands = enumerate_and_prune(grammar, region, gamma_binding, cfg.radius)
        if not cands:
            radius_used = 2 * cfg.radius
            cands = enumerate_and_prune(grammar, region, gamma_binding,
                                        radius_used)
        bindings = _bindings(sketch, cfg)
        test_examples = build_test_examples(
            sketch, examples, region.best()[0], bindings, cfg)
        bindings_data = [(b, bank_for(b, scoring=True),
                          test_examples[_binding_key(b)]) for b in bindings]
        ranked = rank_candidates(cands, bindings_data, gamma_binding, cfg) \
            if cands else []
    except Exception as exc:
        raise SynthError("enum", str(exc)) from exc
    timings["enum"] = time.perf_counter() - t0

    # --- verify: statistical re-test of the top candidates
    t0 = time.perf_counter()
    try:
        survivors, verify_details = final_verify(sketch, ranked, bindings, cfg) \
            if ranked else ([], [])
    except Exception as exc:
        raise SynthError("verify", str(exc)) from exc
    timings["verify"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_total

    note = "" if survivors else "no candidate survived verification"
    report = _report(sketch, cfg, examples, region, ranked, survivors,
                     verify_details, test_examples, note=note,
                     radius_used=radius_used)
    return SynthOutcome(report, timings, survivors, ranked, region, examples)


def _example_json(ex: Example) -> dict:
    return {
        "d1": [int(v) for v in ex.d1],
        "d2": [int(v) for v in ex.d2],
        "event": ex.event.describe(),
        "direction": list(ex.direction),
        "scale": ex.scale,
        "p_at_discovery": round(ex.p_value, 6),
    }


def _report(sketch, cfg, examples, region, ranked, survivors, verify_details,
            test_examples, note="", radius_used=None) -> dict:
    return {
        "mechanism": sketch.name,
        "adjacency": sketch.adjacency,
        "holes": [{"id": h.hole_id + 1, "family": h.family,
                   "vector": h.vector} for h in sketch.holes],
        "config": cfg.echo(),
        "examples": [_example_json(ex) for ex in examples],
        "region": region.to_json() if region is not None else None,
        "radius_used": radius_used,
        "test_examples": {key: [_example_json(ex) for ex in exs]
                          for key, exs in (test_examples or {}).items()},
        "candidate_count": len(ranked),
        "ranking": [rc.to_json() for rc in ranked[:max(50, 5 * sketch.n_holes)]],
        "verify": verify_details,
        "survivors": [rc.to_json() for rc in survivors],
        "phases": ["init", "opti", "enum", "verify"],
        "note": note,
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
