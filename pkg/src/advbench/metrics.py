"""ASR, robustness curves, the ensemble lower envelope, and optimality.

Curves are genuine step functions, so all areas are computed exactly:
the integral of robust accuracy over [0, eps_max] equals the mean of
min(distance, eps_max) over samples. Summation always runs over sorted
keys, which makes every score independent of registration order.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEnsemble, IncompleteCoverage, InvalidInput

INF = float("inf")


@dataclass(frozen=True)
class RobustnessCurve:
    """Robust accuracy vs perturbation budget, as sorted per-sample distances.

    A distance of 0 marks a sample the clean model already misclassifies;
    +inf marks a sample no attack broke.
    """
    distances: tuple[float, ...]   # ascending, may contain +inf
    clean_accuracy: float
    norm: str
    eps_max: float

    @property
    def sample_count(self) -> int:
        return len(self.distances)

    def robust_accuracy(self, eps: float) -> float:
        return sum(1 for d in self.distances if d > eps) / len(self.distances)

    def area(self) -> float:
        """Exact integral of robust_accuracy over [0, eps_max]."""
        total = 0.0
        for d in self.distances:
            total += min(d, self.eps_max)
        return total / len(self.distances)

    def step_points(self) -> tuple[float, ...]:
        return tuple(sorted({d for d in self.distances
                             if np.isfinite(d) and d <= self.eps_max}))


def asr(records, eps: float) -> float:
    """Attack success rate: fraction of samples broken within radius eps."""
    if not records:
        raise InvalidInput("asr over an empty record list")
    if eps < 0:
        raise InvalidInput("eps must be >= 0")
    norms = {r.norm for r in records}
    if len(norms) != 1:
        raise InvalidInput("records mix norms")
    hits = sum(1 for r in records if r.succeeded and r.best_distance <= eps)
    return hits / len(records)


def curve_from_distances(distances, clean_accuracy: float, norm: str,
                         eps_max: float) -> RobustnessCurve:
    if not distances:
        raise InvalidInput("cannot build a curve from zero samples")
    if eps_max <= 0:
        raise InvalidInput("eps_max must be positive")
    return RobustnessCurve(distances=tuple(sorted(distances)),
                           clean_accuracy=clean_accuracy,
                           norm=norm, eps_max=eps_max)


def robustness_curve(records, clean_correct=None,
                     eps_max: float = 1.0) -> RobustnessCurve:
    """Build the curve for one attack's records on one model.

    clean_correct, if given, is aligned with records; cleanly
    misclassified samples are forced to distance 0 (non-robust at
    every eps).
    """
    if not records:
        raise InvalidInput("robustness_curve over an empty record list")
    norms = {r.norm for r in records}
    if len(norms) != 1:
        raise InvalidInput("records mix norms")
    if clean_correct is None:
        clean_correct = [not (r.succeeded and r.best_distance == 0.0)
                         for r in records]
    if len(clean_correct) != len(records):
        raise InvalidInput("clean_correct length mismatch")
    distances = []
    for rec, ok in zip(records, clean_correct):
        if not ok:
            distances.append(0.0)
        else:
            distances.append(rec.best_distance if rec.succeeded else INF)
    clean_acc = sum(clean_correct) / len(clean_correct)
    return curve_from_distances(distances, clean_acc, norms.pop(), eps_max)


class EnvelopeStore:
    """Per-sample minimal distances across all registered attacks.

    Holds the full per-attack distance vectors, so every score can be
    recomputed from scratch after each registration; incremental and
    batch computation are therefore identical by construction.
    """

    def __init__(self):
        # (model, norm) -> sid -> clean_correct
        self._clean: dict[tuple[str, str], dict[str, bool]] = {}
        # (model, norm) -> attack_id -> sid -> (distance, queries_at_best)
        self._attacks: dict[tuple[str, str], dict[str, dict]] = {}

    def register_samples(self, model: str, norm: str,
                         clean_correct: dict[str, bool]) -> None:
        key = (model, norm)
        if key in self._clean:
            if self._clean[key] != dict(clean_correct):
                raise InvalidInput(
                    f"conflicting sample sets for model {model!r} l{norm}")
            return
        if not clean_correct:
            raise InvalidInput("empty sample set")
        self._clean[key] = dict(clean_correct)
        self._attacks[key] = {}

    def register_attack(self, model: str, norm: str, attack_id: str,
                        results: dict[str, tuple[float, int]]) -> None:
        """results maps sample_id -> (best_distance, queries_at_best)."""
        key = (model, norm)
        if key not in self._clean:
            raise InvalidInput(f"no samples registered for {model!r} l{norm}")
        if set(results) != set(self._clean[key]):
            raise InvalidInput(
                f"attack {attack_id!r} does not cover the sample set")
        existing = self._attacks[key].get(attack_id)
        if existing is None:
            self._attacks[key][attack_id] = dict(results)
        else:
            # re-registration merges by per-sample minimum
            for sid, (dist, qb) in results.items():
                if dist < existing[sid][0]:
                    existing[sid] = (dist, qb)

    # -- queries --------------------------------------------------------------

    def norms(self) -> list[str]:
        return sorted({norm for _, norm in self._clean})

    def models(self, norm: str) -> list[str]:
        return sorted({m for m, p in self._clean if p == norm})

    def attacks(self, model: str, norm: str) -> list[str]:
        return sorted(self._attacks.get((model, norm), {}))

    def attack_ids(self, norm: str) -> list[str]:
        ids = set()
        for (m, p), reg in self._attacks.items():
            if p == norm:
                ids.update(reg)
        return sorted(ids)

    def sample_ids(self, model: str, norm: str) -> list[str]:
        return sorted(self._clean[(model, norm)])

    def clean_correct(self, model: str, norm: str) -> dict[str, bool]:
        return dict(self._clean[(model, norm)])

    def attack_distances(self, model: str, norm: str,
                         attack_id: str) -> dict[str, tuple[float, int]]:
        return dict(self._attacks[(model, norm)][attack_id])

    def envelope_distances(self, model: str,
                           norm: str) -> dict[str, tuple[float, str]]:
        """Per-sample minimum distance and the attack that achieved it."""
        key = (model, norm)
        reg = self._attacks.get(key)
        if not reg:
            raise EmptyEnsemble(f"no attacks registered for {model!r} l{norm}")
        env = {}
        for attack_id in sorted(reg):
            for sid, (dist, _) in reg[attack_id].items():
                if sid not in env or dist < env[sid][0]:
                    env[sid] = (dist, attack_id)
        return env

    def _curve(self, model, norm, distances: dict[str, float],
               eps_max: float) -> RobustnessCurve:
        clean = self._clean[(model, norm)]
        vals = []
        for sid in sorted(clean):
            vals.append(0.0 if not clean[sid] else distances[sid])
        clean_acc = sum(clean.values()) / len(clean)
        return curve_from_distances(vals, clean_acc, norm, eps_max)

    def attack_curve(self, model: str, norm: str, attack_id: str,
                     eps_max: float) -> RobustnessCurve:
        reg = self._attacks[(model, norm)][attack_id]
        return self._curve(model, norm, {s: d for s, (d, _) in reg.items()},
                           eps_max)

    def envelope_curve(self, model: str, norm: str,
                       eps_max: float) -> RobustnessCurve:
        env = self.envelope_distances(model, norm)
        return self._curve(model, norm, {s: d for s, (d, _) in env.items()},
                           eps_max)


def lower_envelope(store: EnvelopeStore, model: str, norm: str,
                   eps_max: float) -> RobustnessCurve:
    return store.envelope_curve(model, norm, eps_max)


def local_optimality(attack_curve: RobustnessCurve,
                     envelope_curve: RobustnessCurve) -> float:
    """1 - (A_attack - A_env) / (A_worst - A_env), clamped to [0, 1].

    A_worst is the area of the never-succeeding curve (constant at the
    clean-correct fraction). If even the envelope never succeeds the
    score is defined as 1.
    """
    for attr in ("norm", "eps_max", "sample_count", "clean_accuracy"):
        if getattr(attack_curve, attr) != getattr(envelope_curve, attr):
            raise InvalidInput(f"curves disagree on {attr}")
    a_att = attack_curve.area()
    a_env = envelope_curve.area()
    a_worst = attack_curve.clean_accuracy * attack_curve.eps_max
    if a_worst == a_env:
        return 1.0
    score = 1.0 - (a_att - a_env) / (a_worst - a_env)
    return min(1.0, max(0.0, score))


def global_optimality(local_scores: dict[str, float],
                      zoo_models) -> float:
    """Unweighted mean of local scores over the whole zoo."""
    zoo = sorted(zoo_models)
    missing = [m for m in zoo if m not in local_scores]
    if missing:
        raise IncompleteCoverage(f"attack missing models: {missing}")
    if not zoo:
        raise InvalidInput("empty zoo")
    return sum(local_scores[m] for m in zoo) / len(zoo)


@dataclass(frozen=True)
class LeaderboardEntry:
    rank: int
    attack_id: str
    norm: str
    global_optimality: float
    local_scores: dict[str, float] = field(hash=False)
    median_queries: float = INF


def _median_queries(store: EnvelopeStore, norm: str, attack_id: str,
                    models) -> float:
    qs = []
    for model in sorted(models):
        for sid in store.sample_ids(model, norm):
            dist, qb = store.attack_distances(model, norm, attack_id)[sid]
            if dist < INF:
                qs.append(qb)
    return float(statistics.median(sorted(qs))) if qs else INF


def rank(global_scores: dict[str, float], norm: str,
         local_scores: dict[str, dict[str, float]],
         median_queries: dict[str, float]) -> list[LeaderboardEntry]:
    """Sort descending by global optimality; ties break on fewer median
    queries, then identifier."""
    if not global_scores:
        raise InvalidInput("nothing to rank")
    order = sorted(global_scores,
                   key=lambda a: (-global_scores[a],
                                  median_queries.get(a, INF), a))
    return [LeaderboardEntry(rank=i + 1, attack_id=a, norm=norm,
                             global_optimality=global_scores[a],
                             local_scores=dict(local_scores[a]),
                             median_queries=median_queries.get(a, INF))
            for i, a in enumerate(order)]


def compute_leaderboards(store: EnvelopeStore,
                         eps_max_map: dict[tuple[str, str], float],
                         zoo_models: dict[str, list[str]] | None = None):
    """Recompute every score from the stored distance vectors.

    eps_max_map: (model, norm) -> eps_max. zoo_models: norm -> models an
    attack must cover to be ranked (defaults to every model seen).
    Returns {norm: {"entries": [...], "incomplete": [...]}}.
    """
    out = {}
    for norm in store.norms():
        zoo = sorted(zoo_models[norm]) if zoo_models else store.models(norm)
        # envelope curves are built lazily: during incremental updates a
        # zoo model may have no attacks registered yet for this norm, in
        # which case nothing can be ranked and its envelope is undefined
        env_curves: dict[str, RobustnessCurve] = {}

        def env_curve(m, norm=norm):
            if m not in env_curves:
                env_curves[m] = store.envelope_curve(m, norm,
                                                     eps_max_map[(m, norm)])
            return env_curves[m]
        globals_, locals_, medians, incomplete = {}, {}, {}, []
        for attack_id in store.attack_ids(norm):
            covered = [m for m in zoo
                       if attack_id in store.attacks(m, norm)]
            if covered != zoo:
                incomplete.append(attack_id)
                continue
            per_model = {}
            for m in zoo:
                ac = store.attack_curve(m, norm, attack_id,
                                        eps_max_map[(m, norm)])
                per_model[m] = local_optimality(ac, env_curve(m))
            locals_[attack_id] = per_model
            globals_[attack_id] = global_optimality(per_model, zoo)
            medians[attack_id] = _median_queries(store, norm, attack_id, zoo)
        entries = (rank(globals_, norm, locals_, medians)
                   if globals_ else [])
        out[norm] = {"entries": entries, "incomplete": sorted(incomplete)}
    return out


def incremental_update(store: EnvelopeStore, new_results,
                       eps_max_map: dict[tuple[str, str], float],
                       zoo_models: dict[str, list[str]] | None = None):
    """Register new attack outcomes, then recompute all scores.

    new_results: iterable of (model, norm, attack_id, {sid: (dist, qb)}).
    Equivalent to a from-scratch batch computation over the same set.
    """
    for model, norm, attack_id, results in new_results:
        store.register_attack(model, norm, attack_id, results)
    return compute_leaderboards(store, eps_max_map, zoo_models)
