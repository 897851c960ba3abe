"""Geometric-complexity loss, loss weighting, opacity-ranked pruning and a log-scale fitter.

The loss compares each labeled splat's sorted aspect ratios (a1, a2) with the
shape target of its semantic group through a robust penalty. Only log-scales
are optimized here; rendering terms need a rasterizer and are out of reach.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import BadSchedule, MissingTarget, SplatGeomError
from .splat_model import SplatCloud

DEFAULT_WEIGHTS = (0.2, 0.2, 0.6)
DEFAULT_WARMUP = 6000
FULL_SCHEDULE_END = 30000


@dataclass(frozen=True)
class LossWeights:
    lambda_gc: float = DEFAULT_WEIGHTS[0]
    lambda_dssim: float = DEFAULT_WEIGHTS[1]
    lambda_l1: float = DEFAULT_WEIGHTS[2]

    def __post_init__(self):
        w = (self.lambda_gc, self.lambda_dssim, self.lambda_l1)
        if min(w) < 0 or max(w) <= 0:
            raise SplatGeomError(f"loss weights must be >= 0 with one positive, got {w}")


@dataclass(frozen=True)
class PenaltyConfig:
    """Robust penalty rho(t).

    huber: 0.5 t^2 inside |t| <= delta, linear outside.
    smooth-abs: sqrt(t^2 + delta^2) - delta.
    logistic: the sigmoid taken literally; kept only for ablations since it is
    neither zero at the origin nor symmetric.
    """

    kind: str = "huber"
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("huber", "smooth-abs", "logistic"):
            raise SplatGeomError(f"unknown penalty kind {self.kind!r}")
        if self.delta <= 0:
            raise SplatGeomError("penalty delta must be positive")

    def value(self, t):
        t = np.asarray(t, dtype=np.float64)
        d = self.delta
        if self.kind == "huber":
            a = np.abs(t)
            return np.where(a <= d, 0.5 * t * t, d * (a - 0.5 * d))
        if self.kind == "smooth-abs":
            return np.sqrt(t * t + d * d) - d
        return expit(t)

    def derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        d = self.delta
        if self.kind == "huber":
            return np.clip(t, -d, d)
        if self.kind == "smooth-abs":
            return t / np.sqrt(t * t + d * d)
        s = expit(t)
        return s * (1 - s)


def _targets_array(labels, targets):
    t = np.ones((len(labels), 2))
    for lab in np.unique(labels):
        if lab == 0:
            continue
        if int(lab) not in targets:
            raise MissingTarget(f"no shape target for label {int(lab)}")
        t[labels == lab] = targets[int(lab)]
    return t


def gc_terms(log_scales, labels, targets, penalty=PenaltyConfig(), live_mask=None,
             residual="log"):
    """Per-splat loss terms and their gradients w.r.t. log-scales.

    residual="log" penalizes log(target) - log(ratio); "linear" penalizes
    target - ratio. Unlabeled or dead splats get zero terms. Returns
    (terms (N,), grads (N, 3), active (N,) bool).
    """
    x = np.asarray(log_scales, dtype=np.float64)
    labels = np.asarray(getattr(labels, "per_splat_label", labels))
    n = len(x)
    active = labels != 0
    if live_mask is not None:
        active &= np.asarray(live_mask, dtype=bool)
    terms = np.zeros(n)
    grads = np.zeros((n, 3))
    if not active.any():
        return terms, grads, active

    idx = np.flatnonzero(active)
    xa = x[idx]
    t = _targets_array(labels[idx], targets)
    # descending stable sort: ties hand the larger role to the lower axis index
    order = np.argsort(-xa, axis=1, kind="stable")
    xs = np.take_along_axis(xa, order, axis=1)
    d1 = xs[:, 0] - xs[:, 2]
    d2 = xs[:, 1] - xs[:, 2]
    if residual == "log":
        r1, r2 = np.log(t[:, 0]) - d1, np.log(t[:, 1]) - d2
        g1, g2 = -penalty.derivative(r1), -penalty.derivative(r2)
    elif residual == "linear":
        a1, a2 = np.exp(d1), np.exp(d2)
        r1, r2 = t[:, 0] - a1, t[:, 1] - a2
        g1, g2 = -penalty.derivative(r1) * a1, -penalty.derivative(r2) * a2
    else:
        raise SplatGeomError(f"unknown residual {residual!r}")
    terms[idx] = penalty.value(r1) + penalty.value(r2)
    gs = np.stack([g1, g2, -(g1 + g2)], axis=1)  # w.r.t. (max, mid, min)
    ga = np.empty_like(gs)
    np.put_along_axis(ga, order, gs, axis=1)
    grads[idx] = ga
    return terms, grads, active


def gc_loss(log_scales, labels, targets, penalty=PenaltyConfig(), live_mask=None,
            residual="log"):
    """Mean geometric-complexity loss over labeled live splats, with its gradient."""
    terms, grads, active = gc_terms(log_scales, labels, targets, penalty, live_mask, residual)
    m = int(active.sum())
    if m == 0:
        return 0.0, grads
    return float(_tree_sum(terms[active]) / m), grads / m


def _tree_sum(values, chunk=4096):
    """Chunked sum with a fixed reduction order."""
    parts = [math.fsum(values[i:i + chunk]) for i in range(0, len(values), chunk)]
    return math.fsum(parts)


def total_loss(gc, dssim, l1, weights=LossWeights()):
    return weights.lambda_gc * gc + weights.lambda_dssim * dssim + weights.lambda_l1 * l1


@dataclass
class TrainState:
    iteration: int = 0
    live_mask: np.ndarray = None
    learning_rate: float = 0.01
    warmup_iters: int = DEFAULT_WARMUP
    target_total: int = 0
    end_iter: int = FULL_SCHEDULE_END


def prune_schedule(state, initial_count):
    """Live-count target: flat through warmup, then linear down to target_total at end_iter."""
    if state.target_total > initial_count:
        raise BadSchedule(f"target {state.target_total} exceeds initial count {initial_count}")
    if state.warmup_iters < 0:
        raise BadSchedule("warmup must be non-negative")
    it, w, end = state.iteration, state.warmup_iters, state.end_iter
    if it <= w:
        return initial_count
    if it >= end:
        return state.target_total
    frac = (it - w) / (end - w)
    return int(math.floor(initial_count - frac * (initial_count - state.target_total) + 0.5))


def prune(opacities, live_mask, target_live_count):
    """Kill the lowest-opacity live splats (ties: lower index first) down to the target."""
    live = np.asarray(live_mask, dtype=bool).copy()
    live_idx = np.flatnonzero(live)
    excess = len(live_idx) - int(target_live_count)
    if excess <= 0:
        return live
    op = np.asarray(opacities, dtype=np.float64)[live_idx]
    ranked = live_idx[np.argsort(op, kind="stable")]
    live[ranked[:excess]] = False
    return live


@dataclass
class FitResult:
    cloud: SplatCloud
    live_mask: np.ndarray
    trace: list = field(default_factory=list)  # (iteration, gc_loss, live_count)
    log_scales: np.ndarray = None  # float64 optimum before float32 storage

    @property
    def final_loss(self):
        return self.trace[-1][1] if self.trace else 0.0


def fit_shapes(cloud, labels, targets, penalty=PenaltyConfig(), lr=0.01, iters=2000,
               live_mask=None, schedule=None, residual="log"):
    """Gradient descent on log-scales only.

    The objective is separable per splat, so each splat takes a plain gradient
    step on its own term (the sum of terms, not the mean); the trace records
    the mean loss. With a `schedule` (TrainState), splats are pruned by opacity
    before each step to the scheduled live count.
    """
    if lr <= 0:
        raise SplatGeomError("learning rate must be positive")
    labels = np.asarray(getattr(labels, "per_splat_label", labels))
    x = cloud.log_scales.astype(np.float64)
    live = np.ones(cloud.count, bool) if live_mask is None else np.asarray(live_mask, bool).copy()
    opac = expit(cloud.opacity_logits.astype(np.float64))
    initial = int(live.sum())
    trace = []
    for it in range(iters + 1):
        if schedule is not None:
            schedule.iteration = it
            live = prune(opac, live, prune_schedule(schedule, initial))
        terms, grads, active = gc_terms(x, labels, targets, penalty, live, residual)
        m = int(active.sum())
        trace.append((it, float(_tree_sum(terms[active]) / m) if m else 0.0, int(live.sum())))
        if it == iters:
            break
        x -= lr * grads
    fitted = cloud.replace(log_scales=x.astype(np.float32)) if iters else cloud
    if schedule is not None:
        schedule.live_mask = live
    return FitResult(fitted, live, trace, x)
