"""Query-budget accounting and best-so-far perturbation capture.

Every forward/backward pass through a TrackedModel costs one unit from
the per-sample budget. Each forward pass on a candidate is inspected:
if the candidate is in-box, misclassified, and closer than the current
best, the record is updated automatically. Attacks therefore cannot
report a worse "final" iterate than their best intermediate one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExhausted, InvalidInput
from .nn import LossKind, MlpModel, forward, input_gradient

NORMS = ("0", "1", "2", "inf")

# coordinates closer than this to the reference count as unchanged for l0
L0_TOL = 1e-9


def lp_distance(delta: np.ndarray, norm: str) -> float:
    if norm == "inf":
        return float(np.max(np.abs(delta))) if delta.size else 0.0
    if norm == "2":
        return float(np.linalg.norm(delta))
    if norm == "1":
        return float(np.sum(np.abs(delta)))
    if norm == "0":
        return float(np.count_nonzero(np.abs(delta) > L0_TOL))
    raise InvalidInput(f"unknown norm {norm!r}")


def in_box(x: np.ndarray) -> bool:
    return bool(np.all(x >= 0.0) and np.all(x <= 1.0))


@dataclass
class QueryLedger:
    budget: int
    forward_count: int = 0
    backward_count: int = 0

    @property
    def spent(self) -> int:
        return self.forward_count + self.backward_count

    @property
    def remaining(self) -> int:
        return self.budget - self.spent

    def charge(self, pass_kind: str) -> None:
        if self.spent >= self.budget:
            raise BudgetExhausted(
                f"budget of {self.budget} passes exhausted")
        if pass_kind == "forward":
            self.forward_count += 1
        elif pass_kind == "backward":
            self.backward_count += 1
        else:
            raise InvalidInput(f"unknown pass kind {pass_kind!r}")


@dataclass
class PerturbationRecord:
    sample_id: str
    norm: str
    best_distance: float = float("inf")
    best_delta: np.ndarray | None = None
    queries_at_best: int = 0
    succeeded: bool = False


class TrackedModel:
    """A model wrapped with per-sample ledgers and best-so-far records."""

    def __init__(self, model: MlpModel, samples, norm: str, budget: int):
        if norm not in NORMS:
            raise InvalidInput(f"unknown norm {norm!r}")
        if budget < 1:
            raise InvalidInput("budget must be >= 1")
        self.model = model
        self.norm = norm
        self.budget = budget
        self._refs: dict[str, tuple[np.ndarray, int]] = {}
        self._ledgers: dict[str, QueryLedger] = {}
        self._records: dict[str, PerturbationRecord] = {}
        self._clean_misclassified: dict[str, bool] = {}
        for sample_id, x, y in samples:
            sample_id = str(sample_id)
            if sample_id in self._refs:
                raise InvalidInput(f"duplicate sample_id {sample_id!r}")
            x = np.asarray(x, dtype=np.float64)
            if not in_box(x):
                raise InvalidInput(
                    f"reference input for {sample_id!r} leaves the box")
            self._refs[sample_id] = (x, int(y))
            self._ledgers[sample_id] = QueryLedger(budget=budget)
            rec = PerturbationRecord(sample_id=sample_id, norm=norm)
            # clean evaluation is free: it defines the starting record
            clean_logits = forward(model, x)
            wrong = int(np.argmax(clean_logits)) != int(y)
            self._clean_misclassified[sample_id] = wrong
            if wrong:
                rec.best_distance = 0.0
                rec.best_delta = np.zeros_like(x)
                rec.succeeded = True
            self._records[sample_id] = rec

    # -- introspection -------------------------------------------------------

    @property
    def sample_ids(self) -> list[str]:
        return sorted(self._refs)

    def reference(self, sample_id: str) -> tuple[np.ndarray, int]:
        x, y = self._refs[sample_id]
        return x.copy(), y

    def ledger(self, sample_id: str) -> QueryLedger:
        return self._ledgers[sample_id]

    def record(self, sample_id: str) -> PerturbationRecord:
        return self._records[sample_id]

    def remaining(self, sample_id: str) -> int:
        return self._ledgers[sample_id].remaining

    def clean_misclassified(self, sample_id: str) -> bool:
        return self._clean_misclassified[sample_id]

    # -- budgeted passes -----------------------------------------------------

    def tracked_forward(self, sample_id: str, candidate) -> np.ndarray:
        ledger = self._ledgers[sample_id]
        ledger.charge("forward")
        candidate = np.asarray(candidate, dtype=np.float64)
        logits = forward(self.model, candidate)
        x, y = self._refs[sample_id]
        if int(np.argmax(logits)) != y and in_box(candidate):
            delta = candidate - x
            dist = lp_distance(delta, self.norm)
            rec = self._records[sample_id]
            if dist < rec.best_distance:
                rec.best_distance = dist
                rec.best_delta = delta.copy()
                rec.queries_at_best = ledger.spent
                rec.succeeded = True
        return logits

    def tracked_backward(self, sample_id: str, candidate, y: int,
                         kind: LossKind) -> np.ndarray:
        ledger = self._ledgers[sample_id]
        ledger.charge("backward")
        return input_gradient(self.model, candidate, y, kind)

    def best_records(self) -> list[PerturbationRecord]:
        """Snapshot of all records, sorted by sample_id."""
        out = []
        for sid in self.sample_ids:
            rec = self._records[sid]
            out.append(PerturbationRecord(
                sample_id=rec.sample_id, norm=rec.norm,
                best_distance=rec.best_distance,
                best_delta=None if rec.best_delta is None
                else rec.best_delta.copy(),
                queries_at_best=rec.queries_at_best,
                succeeded=rec.succeeded))
        return out


def wrap(model: MlpModel, samples, norm: str, budget: int) -> TrackedModel:
    """Wrap a model over a dataset slice of (sample_id, x, y) triples."""
    return TrackedModel(model, samples, norm, budget)
