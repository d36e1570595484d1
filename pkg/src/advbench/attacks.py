"""Gradient-based evasion attacks, all running through the query tracker.

Two families: fixed-budget (fgsm, pgd) maximize misclassification inside
an eps-ball; minimum-norm (ddn, fmn) shrink the perturbation radius while
staying adversarial. eps_search bridges the families by bisecting the
radius of an inner fixed-budget attack.

Each loss kind is oriented internally so that descending the gradient
moves toward misclassification (the cross-entropy variant is ascended).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExhausted, InvalidInput, UnsupportedNorm
from .nn import LossKind
from .tracking import TrackedModel, lp_distance

FIXED_BUDGET = "fixed_budget"
MINIMUM_NORM = "minimum_norm"

DEFAULT_LOSSES = {
    "fgsm": LossKind.DIFFERENCE_OF_LOGITS,
    "pgd": LossKind.DIFFERENCE_OF_LOGITS,
    "ddn": LossKind.NEG_CROSS_ENTROPY,
    "fmn": LossKind.DIFFERENCE_OF_LOGITS,
    "eps_search": LossKind.DIFFERENCE_OF_LOGITS,
}

FAMILIES = {
    "fgsm": FIXED_BUDGET,
    "pgd": FIXED_BUDGET,
    "ddn": MINIMUM_NORM,
    "fmn": MINIMUM_NORM,
    "eps_search": MINIMUM_NORM,
}


@dataclass(frozen=True)
class AttackConfig:
    identifier: str
    name: str                       # registry key
    norm: str                       # "0" | "1" | "2" | "inf"
    loss: LossKind | None = None
    steps: int = 100
    eps: float | None = None        # fixed-budget radius
    step_size: float | None = None
    gamma: float = 0.05             # ddn radius adjustment factor
    initial_radius: float = 1.0     # ddn starting l2 radius
    decay: float = 0.3              # fmn schedule scale
    eps_init: float | None = None   # fmn starting radius
    random_start: bool = False      # pgd seeded random init
    seed: int = 0
    eps_hi: float | None = None     # eps_search upper bracket
    tolerance: float | None = None  # eps_search bracket width
    inner: "AttackConfig | None" = None

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise InvalidInput(f"unknown attack {self.name!r}")
        if self.steps < 1:
            raise InvalidInput("steps must be >= 1")
        if self.family == FIXED_BUDGET and (self.eps is None or self.eps < 0):
            raise InvalidInput(f"{self.name} requires eps >= 0")
        if self.loss is None:
            object.__setattr__(self, "loss", DEFAULT_LOSSES[self.name])
        else:
            object.__setattr__(self, "loss", LossKind(self.loss))

    @property
    def family(self) -> str:
        return FAMILIES[self.name]

    def to_dict(self) -> dict:
        d = {k: v for k, v in dataclasses.asdict(self).items()
             if v is not None}
        d["loss"] = self.loss.value
        if self.inner is not None:
            d["inner"] = self.inner.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        if "inner" in d and d["inner"] is not None:
            d["inner"] = cls.from_dict(d["inner"])
        if "loss" in d and d["loss"] is not None:
            d["loss"] = LossKind(d["loss"])
        return cls(**d)


@dataclass
class AttackRunResult:
    success: bool
    best_distance: float
    queries_used: int


def project(delta: np.ndarray, x: np.ndarray, norm: str,
            eps: float) -> np.ndarray:
    """Clip delta into the eps-ball and keep x+delta inside [0,1]^d.

    Only l2 (radial scaling) and linf (coordinate clipping) are handled
    here; sparse norms use dedicated steps inside the attacks.
    """
    if eps < 0:
        raise InvalidInput("eps must be >= 0")
    if norm == "inf":
        delta = np.clip(delta, -eps, eps)
    elif norm == "2":
        # rescale until the recomputed norm is inside the ball: a single
        # multiply can overshoot eps by an ulp, which would break
        # idempotence of the projection
        n = np.linalg.norm(delta)
        while n > eps:
            delta = delta * (eps / n)
            n = np.linalg.norm(delta)
    else:
        raise UnsupportedNorm(f"projection not defined for l{norm}")
    return _box_project(delta, x)


def _box_project(delta: np.ndarray, x: np.ndarray) -> np.ndarray:
    # keep feasible components bitwise intact; (x+d)-x alone would
    # perturb them by a rounding ulp
    cand = x + delta
    clipped = np.clip(cand, 0.0, 1.0)
    return np.where(cand == clipped, delta, clipped - x)


def _project_l1(delta: np.ndarray, eps: float) -> np.ndarray:
    """Euclidean projection onto the l1 ball of radius eps.

    Sorted-magnitude greedy simplex projection (threshold shrinkage).
    """
    mags = np.abs(delta)
    if mags.sum() <= eps:
        return delta
    u = np.sort(mags)[::-1]
    cumsum = np.cumsum(u)
    ks = np.arange(1, u.size + 1)
    rho = np.max(np.nonzero(u * ks > (cumsum - eps))[0]) + 1
    theta = (cumsum[rho - 1] - eps) / rho
    return np.sign(delta) * np.maximum(mags - theta, 0.0)


def _ball_box_project(delta, x, norm, eps):
    if norm == "1":
        return _box_project(_project_l1(delta, eps), x)
    return project(delta, x, norm, eps)


def _oriented_backward(tm: TrackedModel, sample_id: str, candidate,
                       y: int, kind: LossKind) -> np.ndarray:
    """Gradient of the quantity whose descent causes misclassification."""
    g = tm.tracked_backward(sample_id, candidate, y, kind)
    if kind is LossKind.NEG_CROSS_ENTROPY:
        return -g
    return g


def _result(tm: TrackedModel, sample_id: str,
            success: bool) -> AttackRunResult:
    rec = tm.record(sample_id)
    return AttackRunResult(success=success,
                           best_distance=rec.best_distance,
                           queries_used=tm.ledger(sample_id).spent)


def fgsm(tm: TrackedModel, sample_id: str,
         cfg: AttackConfig) -> AttackRunResult:
    if tm.norm != "inf":
        raise UnsupportedNorm("fgsm is linf-only")
    x, y = tm.reference(sample_id)
    success = False
    try:
        g = _oriented_backward(tm, sample_id, x, y, cfg.loss)
        delta = project(-cfg.eps * np.sign(g), x, "inf", cfg.eps)
        logits = tm.tracked_forward(sample_id, x + delta)
        success = int(np.argmax(logits)) != y
    except BudgetExhausted:
        pass
    return _result(tm, sample_id, success)


def _pgd_with_eps(tm, sample_id, cfg, eps) -> bool:
    """One PGD run at radius eps; returns whether any iterate succeeded."""
    norm = tm.norm
    if norm not in ("2", "inf"):
        raise UnsupportedNorm("pgd supports l2 and linf only")
    x, y = tm.reference(sample_id)
    step = cfg.step_size if cfg.step_size is not None else 2.0 * eps / cfg.steps
    if step <= 0 and eps > 0:
        raise InvalidInput("step_size must be positive")
    delta = np.zeros_like(x)
    if cfg.random_start and eps > 0:
        rng = np.random.default_rng(cfg.seed)
        delta = _ball_box_project(rng.uniform(-eps, eps, x.shape),
                                  x, norm, eps)
    success = False
    for _ in range(cfg.steps):
        g = _oriented_backward(tm, sample_id, x + delta, y, cfg.loss)
        if norm == "inf":
            d = np.sign(g)
        else:
            d = g / max(np.linalg.norm(g), 1e-12)
        delta = project(delta - step * d, x, norm, eps)
        logits = tm.tracked_forward(sample_id, x + delta)
        if int(np.argmax(logits)) != y:
            success = True
    return success


def pgd(tm: TrackedModel, sample_id: str,
        cfg: AttackConfig) -> AttackRunResult:
    success = False
    try:
        success = _pgd_with_eps(tm, sample_id, cfg, cfg.eps)
    except BudgetExhausted:
        pass
    return _result(tm, sample_id, success)


def ddn(tm: TrackedModel, sample_id: str,
        cfg: AttackConfig) -> AttackRunResult:
    """Decoupled direction/norm search on the l2 sphere.

    The radius shrinks by (1 - gamma) after adversarial iterates and
    grows by (1 + gamma) after non-adversarial ones; the tracker keeps
    the closest adversarial candidate seen.
    """
    if tm.norm != "2":
        raise UnsupportedNorm("ddn is l2-only")
    if not 0.0 < cfg.gamma < 1.0:
        raise InvalidInput("gamma must lie in (0, 1)")
    x, y = tm.reference(sample_id)
    delta = np.zeros_like(x)
    radius = cfg.initial_radius
    try:
        for _ in range(cfg.steps):
            g = _oriented_backward(tm, sample_id, x + delta, y, cfg.loss)
            ghat = g / max(np.linalg.norm(g), 1e-12)
            v = delta - max(radius, 1e-6) * ghat
            vn = np.linalg.norm(v)
            delta = radius * v / vn if vn > 0 else v
            delta = np.clip(x + delta, 0.0, 1.0) - x
            logits = tm.tracked_forward(sample_id, x + delta)
            adversarial = int(np.argmax(logits)) != y
            radius *= (1.0 - cfg.gamma) if adversarial else (1.0 + cfg.gamma)
    except BudgetExhausted:
        pass
    rec = tm.record(sample_id)
    return _result(tm, sample_id, rec.succeeded)


_FMN_EPS_INIT = {"inf": 0.5, "2": 1.0, "1": 2.0}


def fmn(tm: TrackedModel, sample_id: str,
        cfg: AttackConfig) -> AttackRunResult:
    """Boundary-seeking step plus a multiplicative radius schedule.

    eps shrinks by (1 - decay_t) while adversarial and grows by
    (1 + decay_t) otherwise, with decay_t annealing as 1/sqrt(t+1).
    """
    norm = tm.norm
    if norm not in ("1", "2", "inf"):
        raise UnsupportedNorm("fmn supports l1, l2 and linf")
    x, y = tm.reference(sample_id)
    eps = cfg.eps_init if cfg.eps_init is not None else _FMN_EPS_INIT[norm]
    delta = np.zeros_like(x)
    try:
        for t in range(cfg.steps):
            g = _oriented_backward(tm, sample_id, x + delta, y, cfg.loss)
            if norm == "inf":
                d = np.sign(g)
            else:
                d = g / max(np.linalg.norm(g), 1e-12)
            alpha = 1.5 * max(eps, 1e-12)
            delta = _ball_box_project(delta - alpha * d, x, norm, eps)
            logits = tm.tracked_forward(sample_id, x + delta)
            adversarial = int(np.argmax(logits)) != y
            decay = cfg.decay / np.sqrt(t + 1.0)
            eps *= (1.0 - decay) if adversarial else (1.0 + decay)
            eps = max(eps, 1e-12)
    except BudgetExhausted:
        pass
    rec = tm.record(sample_id)
    return _result(tm, sample_id, rec.succeeded)


def eps_binary_search(tm: TrackedModel, sample_id: str,
                      cfg: AttackConfig) -> AttackRunResult:
    """Bisect the radius of an inner fixed-budget attack.

    The inner attack's success at a given eps is the bisection
    predicate; the tracker captures the best candidate along the way,
    so soundness never depends on the predicate being monotone.
    """
    if cfg.inner is None or cfg.inner.family != FIXED_BUDGET:
        raise InvalidInput("eps_search needs an inner fixed-budget attack")
    if cfg.eps_hi is None or cfg.eps_hi <= 0:
        raise InvalidInput("eps_hi must be positive")
    if cfg.tolerance is None or cfg.tolerance <= 0:
        raise InvalidInput("tolerance must be positive")

    def run_inner(eps: float) -> bool:
        inner = dataclasses.replace(cfg.inner, eps=eps)
        if inner.name == "fgsm":
            return fgsm(tm, sample_id, inner).success
        return pgd(tm, sample_id, inner).success

    lo, hi = 0.0, cfg.eps_hi
    try:
        if not run_inner(hi):
            return _result(tm, sample_id, tm.record(sample_id).succeeded)
        while hi - lo > cfg.tolerance and tm.remaining(sample_id) > 0:
            mid = 0.5 * (lo + hi)
            if run_inner(mid):
                hi = mid
            else:
                lo = mid
    except BudgetExhausted:
        pass
    return _result(tm, sample_id, tm.record(sample_id).succeeded)


ATTACKS = {
    "fgsm": fgsm,
    "pgd": pgd,
    "ddn": ddn,
    "fmn": fmn,
    "eps_search": eps_binary_search,
}


def run_attack(tm: TrackedModel, sample_id: str,
               cfg: AttackConfig) -> AttackRunResult:
    return ATTACKS[cfg.name](tm, sample_id, cfg)
