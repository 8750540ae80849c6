"""Full-batch optimizers for the network parameters.

* Rprop (the iRprop- variant): per-parameter step sizes grown while the
  gradient sign persists and shrunk when it flips, with the update
  suppressed on a flip.
* BFGS: dense inverse-Hessian approximation, strong-Wolfe line search with
  cubic interpolation.
* :func:`train` runs either one alone or Rprop for a leading fraction of the
  iterations followed by BFGS.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .mlp import Objective, flatten, unflatten

METHODS = ("rprop", "bfgs", "hybrid")


class TrainingError(RuntimeError):
    """Training cannot continue (non-finite loss or gradient)."""


class LineSearchError(RuntimeError):
    """No acceptable step was found along the search direction."""


# -- Rprop ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RpropState:
    step_sizes: np.ndarray
    prev_grad: np.ndarray
    eta_minus: float = 0.6
    eta_plus: float = 1.2
    step_min: float = 1e-6
    step_max: float = 50.0

    def __post_init__(self):
        if not 0 < self.eta_minus < 1 < self.eta_plus:
            raise ValueError("Rprop factors must satisfy 0 < eta_minus < 1 < eta_plus")
        if not 0 < self.step_min <= self.step_max:
            raise ValueError("Rprop step bounds must satisfy 0 < step_min <= step_max")

    @classmethod
    def initial(cls, n, step0=0.1, **kwargs):
        return cls(np.full(n, float(step0)), np.zeros(n), **kwargs)


def rprop_step(state, params, grad):
    """One iRprop- update.

    Returns
    -------
    (RpropState, ndarray)
        The new state and the updated parameters. Inputs are not modified.
    """
    grad = np.asarray(grad, dtype=float)
    params = np.asarray(params, dtype=float)
    if grad.shape != params.shape or grad.shape != state.step_sizes.shape:
        raise ValueError("params, grad and Rprop state must have equal length")
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient component in Rprop step")

    agreement = grad * state.prev_grad
    grow = agreement > 0
    shrink = agreement < 0
    step = state.step_sizes.copy()
    step[grow] = np.minimum(step[grow] * state.eta_plus, state.step_max)
    step[shrink] = np.maximum(step[shrink] * state.eta_minus, state.step_min)

    g = np.where(shrink, 0.0, grad)
    new_params = params - np.sign(g) * step
    return replace(state, step_sizes=step, prev_grad=g), new_params


# -- line search ---------------------------------------------------------

@dataclass
class _Point:
    alpha: float
    f: float
    dphi: float
    g: np.ndarray | None


def _cubic_min(a, b):
    """Minimiser of the cubic matching value and slope at both points."""
    d1 = a.dphi + b.dphi - 3.0 * (a.f - b.f) / (a.alpha - b.alpha)
    rad = d1 * d1 - a.dphi * b.dphi
    if rad < 0:
        return None
    d2 = math.copysign(math.sqrt(rad), b.alpha - a.alpha)
    den = b.dphi - a.dphi + 2.0 * d2
    if den == 0:
        return None
    t = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / den
    return t if math.isfinite(t) else None


def strong_wolfe(fun, x, f0, g0, direction, c1=1e-4, c2=0.9, alpha0=1.0,
                 max_trials=25):
    """Step length along ``direction`` satisfying the strong Wolfe conditions.

    ``fun(x)`` returns ``(loss, grad)``. Returns ``(alpha, f, g)`` at the
    accepted point. If the trial budget runs out after sufficient decrease
    has been found, the best such point is returned; otherwise
    :class:`LineSearchError` is raised.
    """
    dphi0 = float(g0 @ direction)
    if not dphi0 < 0:
        raise LineSearchError("search direction is not a descent direction")
    trials = 0

    def probe(alpha):
        nonlocal trials
        trials += 1
        f, g = fun(x + alpha * direction)
        f = float(f)
        if not (math.isfinite(f) and np.all(np.isfinite(g))):
            return _Point(alpha, math.inf, math.nan, None)
        return _Point(alpha, f, float(g @ direction), g)

    def armijo(p):
        return p.f <= f0 + c1 * p.alpha * dphi0

    def curvature(p):
        return abs(p.dphi) <= -c2 * dphi0

    def zoom(lo, hi):
        while trials < max_trials:
            width = hi.alpha - lo.alpha
            t = None
            if math.isfinite(hi.f):
                t = _cubic_min(lo, hi)
            left, right = sorted((lo.alpha, hi.alpha))
            margin = 0.1 * abs(width)
            if t is None or not left + margin <= t <= right - margin:
                t = lo.alpha + 0.5 * width
            p = probe(t)
            if not armijo(p) or p.f >= lo.f:
                hi = p
            else:
                if curvature(p):
                    return p
                if p.dphi * (hi.alpha - lo.alpha) >= 0:
                    hi = lo
                lo = p
        if lo.alpha > 0:
            return lo
        raise LineSearchError(f"no sufficient decrease after {max_trials} trials")

    prev = _Point(0.0, f0, dphi0, g0)
    alpha = alpha0
    while trials < max_trials:
        p = probe(alpha)
        if not armijo(p) or (prev.alpha > 0 and p.f >= prev.f):
            best = zoom(prev, p)
            break
        if curvature(p):
            best = p
            break
        if p.dphi >= 0:
            best = zoom(p, prev)
            break
        prev = p
        alpha *= 2.0
    else:
        if prev.alpha > 0:
            best = prev
        else:
            raise LineSearchError(f"no sufficient decrease after {max_trials} trials")
    return best.alpha, best.f, best.g


# -- BFGS ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BfgsState:
    """Inverse-Hessian approximation plus the last point and its gradient."""

    inv_hessian: np.ndarray
    prev_point: np.ndarray | None = None
    prev_grad: np.ndarray | None = None
    prev_loss: float | None = None
    c1: float = 1e-4
    c2: float = 0.9
    max_trials: int = 25
    n_updates: int = 0
    n_skipped: int = 0

    @classmethod
    def initial(cls, n, **kwargs):
        return cls(np.eye(n), **kwargs)

    def reset(self):
        return replace(self, inv_hessian=np.eye(self.inv_hessian.shape[0]), n_updates=0)


def bfgs_update(h, s, y, first=False):
    """Rank-two update of the inverse Hessian ``h``, or None when the
    curvature condition ``s.y > 1e-10 |s| |y|`` fails.

    With ``first=True`` the matrix is rescaled by ``s.y / y.y`` before the
    update.
    """
    sy = float(s @ y)
    if not sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
        return None
    if first:
        h = h * (sy / float(y @ y))
    rho = 1.0 / sy
    hy = h @ y
    h = (h - rho * (np.outer(s, hy) + np.outer(hy, s))
         + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
    return 0.5 * (h + h.T)


def _bfgs_iterate(state, x, f, g, fun):
    d = -(state.inv_hessian @ g)
    alpha, f_new, g_new = strong_wolfe(fun, x, f, g, d, c1=state.c1, c2=state.c2,
                                       max_trials=state.max_trials)
    x_new = x + alpha * d
    h = bfgs_update(state.inv_hessian, x_new - x, g_new - g, first=state.n_updates == 0)
    if h is None:
        state = replace(state, n_skipped=state.n_skipped + 1)
    else:
        state = replace(state, inv_hessian=h, n_updates=state.n_updates + 1)
    state = replace(state, prev_point=x_new, prev_grad=g_new, prev_loss=f_new)
    return state, x_new


def bfgs_step(state, params, loss_fn, grad_fn=None):
    """One BFGS iteration from ``params``.

    ``loss_fn(x)`` returns the loss; ``grad_fn(x)`` its gradient. When
    ``grad_fn`` is None, ``loss_fn`` must return ``(loss, grad)``.

    Raises
    ------
    LineSearchError
        No decrease was found along the quasi-Newton direction.
    TrainingError
        The loss at ``params`` is not finite.
    """
    if grad_fn is None:
        fun = loss_fn
    else:
        def fun(v):
            return loss_fn(v), grad_fn(v)
    x = np.asarray(params, dtype=float)
    if state.prev_point is not None and np.array_equal(x, state.prev_point):
        f, g = state.prev_loss, state.prev_grad
    else:
        f, g = fun(x)
        f = float(f)
        g = np.asarray(g, dtype=float)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise TrainingError("non-finite loss or gradient at BFGS start point")
    return _bfgs_iterate(state, x, f, g, fun)


# -- training loop -------------------------------------------------------

def rprop_iterations(method, total, switch_fraction):
    """Number of leading Rprop iterations in a run of ``total``."""
    if method == "rprop":
        return total
    if method == "bfgs":
        return 0
    return min(total, math.ceil(round(switch_fraction * total, 9)))


@dataclass(frozen=True)
class TrainConfig:
    method: str = "hybrid"
    total_iterations: int = 1000
    switch_fraction: float = 0.1
    seed: int = 0
    grad_tol: float = 1e-10
    record_time: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if isinstance(self.total_iterations, bool) or int(self.total_iterations) != self.total_iterations \
                or self.total_iterations < 1:
            raise ValueError(f"total_iterations must be an integer >= 1, got {self.total_iterations!r}")
        if not 0.0 <= self.switch_fraction <= 1.0:
            raise ValueError(f"switch_fraction must lie in [0, 1], got {self.switch_fraction!r}")
        if not self.grad_tol >= 0:
            raise ValueError("grad_tol must be non-negative")

    @property
    def n_rprop(self):
        return rprop_iterations(self.method, self.total_iterations, self.switch_fraction)

    def to_dict(self):
        return {
            "method": self.method,
            "total_iterations": int(self.total_iterations),
            "switch_fraction": float(self.switch_fraction),
            "seed": int(self.seed),
            "grad_tol": float(self.grad_tol),
            "record_time": bool(self.record_time),
        }


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    method: str
    sse: float
    elapsed_s: float


@dataclass(frozen=True, eq=False)
class TrainTrace:
    """Loss after every iteration, the trained network and timing.

    Record 0 holds the initial loss and carries the label of the first
    iteration's method.
    """

    records: tuple
    network: object
    wall_time: float
    stopped_early: bool = False
    stop_reason: str | None = None
    n_fallbacks: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def sse(self):
        return np.array([r.sse for r in self.records])

    @property
    def methods(self):
        return [r.method for r in self.records]

    @property
    def final_sse(self):
        return self.records[-1].sse

    def to_rows(self):
        return [(r.iteration, r.method, r.sse, r.elapsed_s) for r in self.records]


STALL_LIMIT = 3
FALLBACK_STEP = 1e-3


def train(net, batch, cfg):
    """Fit ``net`` to ``batch`` by full-batch optimization.

    The first ``cfg.n_rprop`` iterations use Rprop and the rest BFGS. Each
    iteration is one gradient evaluation at a new point (plus line-search
    probes for BFGS). The run stops early once the gradient infinity-norm
    falls below ``cfg.grad_tol``, or after repeated BFGS steps that find no
    decrease at all.
    """
    objective = Objective(net.spec, batch)
    clock = time.perf_counter if cfg.record_time else (lambda: 0.0)
    start = clock()
    n_rprop = cfg.n_rprop
    total = int(cfg.total_iterations)

    x = flatten(net)
    f, g = objective(x)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise TrainingError("non-finite initial loss or gradient")
    first = "rprop" if n_rprop > 0 else "bfgs"
    records = [TraceRecord(0, first, f, clock() - start)]
    rprop = RpropState.initial(x.size)
    bfgs = None
    stop_reason = None
    fallbacks = stalls = 0

    if np.max(np.abs(g), initial=0.0) < cfg.grad_tol:
        stop_reason = "gradient_tolerance"

    for it in range(1, total + 1):
        if stop_reason:
            break
        if it <= n_rprop:
            label = "rprop"
            rprop, x = rprop_step(rprop, x, g)
            f, g = objective(x)
            if not (math.isfinite(f) and np.all(np.isfinite(g))):
                raise TrainingError(f"non-finite loss after Rprop iteration {it}")
        else:
            label = "bfgs"
            if bfgs is None:
                bfgs = BfgsState.initial(x.size)
            try:
                bfgs, x = _bfgs_iterate(bfgs, x, f, g, objective)
                f, g = bfgs.prev_loss, bfgs.prev_grad
                stalls = 0
            except LineSearchError:
                fallbacks += 1
                bfgs = bfgs.reset()
                norm = np.linalg.norm(g)
                trial = x - FALLBACK_STEP * g / norm
                f_t, g_t = objective(trial)
                if math.isfinite(f_t) and f_t < f and np.all(np.isfinite(g_t)):
                    x, f, g = trial, float(f_t), g_t
                    stalls = 0
                else:
                    stalls += 1
                bfgs = replace(bfgs, prev_point=x, prev_grad=g, prev_loss=f)
        records.append(TraceRecord(it, label, float(f), clock() - start))
        if np.max(np.abs(g)) < cfg.grad_tol:
            stop_reason = "gradient_tolerance"
        elif stalls >= STALL_LIMIT:
            stop_reason = "stalled"

    wall = clock() - start
    stopped = len(records) < total + 1
    return TrainTrace(
        records=tuple(records),
        network=unflatten(net.spec, x),
        wall_time=wall,
        stopped_early=stopped,
        stop_reason=stop_reason if stopped else None,
        n_fallbacks=fallbacks,
        extra={"n_evals": objective.n_evals},
    )


def write_trace_csv(trace, path):
    """Plot-ready trace: ``iteration,method,sse,elapsed_s``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "method", "sse", "elapsed_s"])
        for r in trace.records:
            writer.writerow([r.iteration, r.method, repr(float(r.sse)), repr(float(r.elapsed_s))])


def read_trace_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            TraceRecord(int(row["iteration"]), row["method"], float(row["sse"]),
                        float(row["elapsed_s"]))
            for row in csv.DictReader(fh)
        ]
