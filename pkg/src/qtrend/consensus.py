"""Windowed consensus ADMM for long series.

The series is cut into W overlapping windows. Each window solves its own
multi-quantile block problem with a proximity term pulling it towards the
shared consensus trend; the coordinator averages the windows where they
overlap and updates the multipliers. Windows are solved concurrently by a
thread pool: the numba kernels release the GIL, so threads scale with cores.
"""
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field
import math

import numpy as np

from .errors import DimensionError, LayoutError
from .solver import (CouplingTerm, FitResult, InnerControls, WeightMask, count_knots,
                     objective, project_rows, solve_block)

DEFAULT_OVERLAP = 500
DEFAULT_GAMMA = 1.0


@dataclass(frozen=True)
class WindowLayout:
    """Window bounds as 1-based inclusive (l_w, u_w) pairs."""

    bounds: tuple
    n: int

    def __post_init__(self):
        b = tuple((int(lo), int(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", b)
        _check_interleaving(b, int(self.n))

    @property
    def W(self):
        return len(self.bounds)

    def slices(self):
        return [slice(lo - 1, hi) for lo, hi in self.bounds]

    def lengths(self):
        return [hi - lo + 1 for lo, hi in self.bounds]


def _check_interleaving(bounds, n):
    if not bounds:
        raise LayoutError("layout needs at least one window")
    if bounds[0][0] != 1 or bounds[-1][1] != n:
        raise LayoutError(f"windows must cover [1, {n}], got {bounds[0][0]}..{bounds[-1][1]}")
    for lo, hi in bounds:
        if hi < lo:
            raise LayoutError(f"empty window ({lo}, {hi})")
    for (l0, u0), (l1, u1) in zip(bounds, bounds[1:]):
        if not l0 < l1 <= u0 < u1:
            raise LayoutError(f"windows ({l0}, {u0}) and ({l1}, {u1}) do not interleave")
    for (l0, u0), (l2, _) in zip(bounds, bounds[2:]):
        if l2 <= u0:
            raise LayoutError(f"non-consecutive windows overlap at {l2} <= {u0}")


def make_layout(n, W, overlap=DEFAULT_OVERLAP, k=2):
    """Equally sized windows (lengths differ by at most one) with fixed overlaps.

    >>> make_layout(30, 2, overlap=10).bounds
    ((1, 20), (11, 30))
    """
    n, W, overlap = int(n), int(W), int(overlap)
    if W < 1:
        raise LayoutError("W must be >= 1")
    if W == 1:
        if n < k + 2:
            raise LayoutError(f"a window needs at least k + 2 = {k + 2} points")
        return WindowLayout(((1, n),), n)
    if overlap < 1:
        raise LayoutError("overlap must be >= 1")
    if n < W * (k + 2):
        raise LayoutError(f"n={n} is too short for {W} windows of at least {k + 2} points")
    total = n + (W - 1) * overlap
    base, extra = divmod(total, W)
    lengths = [base + (1 if w < extra else 0) for w in range(W)]
    if min(lengths) < k + 2:
        raise LayoutError(f"windows of {min(lengths)} points are shorter than k + 2 = {k + 2}")
    if min(lengths) <= overlap:
        raise LayoutError(f"overlap {overlap} is not shorter than the windows (~{base} points)")
    # windows w - 1 and w + 1 must stay disjoint, so interior windows need
    # room for both overlaps
    if W > 2 and min(lengths[1:-1]) < 2 * overlap:
        raise LayoutError(
            f"overlap {overlap} is too large for {W} windows of ~{base} points on n={n}")
    bounds = []
    lo = 1
    for length in lengths:
        bounds.append((lo, lo + length - 1))
        lo = lo + length - overlap
    return WindowLayout(tuple(bounds), n)


@dataclass(frozen=True)
class StoppingRule:
    eps_abs: float = 0.01
    eps_rel: float = 0.001
    max_iterations: int = 100

    def __post_init__(self):
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("eps_abs and eps_rel must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class ConsensusState:
    consensus: np.ndarray
    window_thetas: list
    omegas: list
    gamma: float = DEFAULT_GAMMA
    iteration: int = 0
    primal_residual: float = math.inf
    dual_residual: float = math.inf
    previous: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if len(self.window_thetas) != len(self.omegas):
            raise DimensionError("one dual block per window is required")
        for th, om in zip(self.window_thetas, self.omegas):
            if np.shape(th) != np.shape(om):
                raise DimensionError(f"window {np.shape(th)} and dual {np.shape(om)} differ")

    def check_layout(self, layout):
        if layout.W != len(self.window_thetas):
            raise DimensionError(f"{len(self.window_thetas)} window blocks for W={layout.W}")
        J = self.consensus.shape[1]
        for length, th in zip(layout.lengths(), self.window_thetas):
            if np.shape(th) != (length, J):
                raise DimensionError(f"window block {np.shape(th)} != {(length, J)}")
        if self.consensus.shape[0] != layout.n:
            raise DimensionError(f"consensus has {self.consensus.shape[0]} rows, layout n={layout.n}")


def consensus_update(state, layout, dual_sign=1.0):
    """Average the windows where they overlap, adjusted by the multipliers.

    Rows covered by one window copy that window. In the overlap of windows
    w - 1 and w the consensus is the mean of the two trends plus
    (omega^(w-1) + omega^(w)) / (2 gamma), the minimiser of the augmented
    Lagrangian in the consensus block. ``dual_sign=-1`` subtracts the
    multiplier term instead; with that sign the multiplier sum over an
    overlap doubles every iteration, so round-off grows without bound.
    """
    state.check_layout(layout)
    n, J = state.consensus.shape
    acc = np.zeros((n, J))
    dual = np.zeros((n, J))
    cover = np.zeros(n, dtype=np.int64)
    for sl, th, om in zip(layout.slices(), state.window_thetas, state.omegas):
        acc[sl] += th
        dual[sl] += om
        cover[sl] += 1
    if np.any(cover == 0):
        raise LayoutError("some rows are outside every window")
    out = acc / cover[:, None]
    two = cover == 2
    out[two] += dual_sign * dual[two] / (2.0 * state.gamma)
    return out


def dual_update(state, layout):
    """omega^(w) += gamma (theta^(w) - U^(w) consensus), for every window."""
    state.check_layout(layout)
    return [om + state.gamma * (th - state.consensus[sl])
            for sl, th, om in zip(layout.slices(), state.window_thetas, state.omegas)]


def residuals(state, layout):
    """(primal, dual) residuals of the current iterate.

    The dual residual sums the consensus change once per window, so it is
    gamma * sqrt(W) * ||consensus_m - consensus_{m-1}||_F. Before the first
    consensus change it is infinite.
    """
    state.check_layout(layout)
    primal = math.sqrt(sum(float(np.sum((th - state.consensus[sl]) ** 2))
                           for sl, th in zip(layout.slices(), state.window_thetas)))
    if state.previous is None:
        dual = math.inf
    else:
        step = float(np.sum((state.consensus - state.previous) ** 2))
        dual = state.gamma * math.sqrt(layout.W * step)
    return primal, dual


def _thresholds(state, rule, n, J):
    base = rule.eps_abs * math.sqrt(n * J)
    cons = float(np.linalg.norm(state.consensus))
    big = max([cons] + [float(np.linalg.norm(th)) for th in state.window_thetas])
    eps_p = base + rule.eps_rel * big
    eps_d = base + rule.eps_rel * math.sqrt(sum(float(np.sum(om ** 2)) for om in state.omegas))
    return eps_p, eps_d


def criteria_met(state, rule, n, J, W=None):
    eps_p, eps_d = _thresholds(state, rule, n, J)
    return state.primal_residual < eps_p and state.dual_residual < eps_d


def stop_check(state, rule, n, J, W):
    """True when both residuals are under their thresholds or the cap is hit."""
    if len(state.window_thetas) != W:
        raise DimensionError(f"state has {len(state.window_thetas)} windows, expected {W}")
    return criteria_met(state, rule, n, J) or state.iteration >= rule.max_iterations


@dataclass
class ConvergenceTrace:
    iterations: list = field(default_factory=list)
    primal: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    converged: bool = False

    def append(self, m, rp, rd, obj):
        self.iterations.append(int(m))
        self.primal.append(float(rp))
        self.dual.append(float(rd))
        self.objective.append(float(obj))

    def __len__(self):
        return len(self.iterations)

    def rows(self):
        return list(zip(self.iterations, self.primal, self.dual, self.objective))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["iteration", "r_primal", "r_dual", "objective"])
            for m, rp, rd, obj in self.rows():
                out.writerow([m, repr(rp), repr(rd), repr(obj)])


def windowed_objective(y, spec, layout, window_thetas, weights=None):
    """Sum over windows of the block objective, overlaps counted twice."""
    total = 0.0
    for sl, th in zip(layout.slices(), window_thetas):
        mask = None if weights is None else weights[sl]
        total += objective(y[sl], th, spec, mask)
    return total


def _window_masks(weights, layout):
    if weights is None:
        return [None] * layout.W
    out = []
    for sl in layout.slices():
        w = weights[sl]
        out.append(WeightMask(w) if np.any(w > 0) else None)
        if not np.any(w > 0):
            raise LayoutError(f"window {sl.start + 1}..{sl.stop} has no observed points")
    return out


def fit_windows(y, spec, layout, gamma=DEFAULT_GAMMA, rule=None, mask=None, controls=None,
                workers=None, trace_path=None):
    """Windowed consensus fit; returns (FitResult, ConvergenceTrace).

    With W = 1 this is exactly :func:`solve_block`. ``workers`` bounds the
    thread pool (default: one thread per window). Results are reduced in
    window order, so runs are reproducible regardless of scheduling.
    """
    rule = rule or StoppingRule()
    controls = controls or InnerControls()
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != layout.n:
        raise DimensionError(f"series length {y.size} != layout n={layout.n}")
    weights = None
    if mask is not None:
        weights = mask.weights if isinstance(mask, WeightMask) else np.asarray(mask, dtype=float)
        if weights.shape != y.shape:
            raise DimensionError("mask length does not match the series")
    elif np.any(~np.isfinite(y)):
        weights = np.isfinite(y).astype(float)
    n, J = y.size, spec.J
    trace = ConvergenceTrace()

    if layout.W == 1:
        res = solve_block(y, spec, None if weights is None else WeightMask(weights), controls=controls)
        trace.append(0, 0.0, 0.0, res.objective)
        trace.converged = True
        if trace_path is not None:
            trace.to_csv(trace_path)
        return res, trace

    slices = layout.slices()
    masks = _window_masks(weights, layout)
    ys = [y[sl] for sl in slices]
    pool = ThreadPoolExecutor(max_workers=workers or layout.W)
    try:
        first = list(pool.map(lambda a: solve_block(a[0], spec, a[1], controls=controls),
                              zip(ys, masks)))
        state = ConsensusState(
            consensus=np.zeros((n, J)),
            window_thetas=[r.theta for r in first],
            omegas=[np.zeros_like(r.theta) for r in first],
            gamma=float(gamma),
        )
        results = first
        inner = sum(r.inner_iterations for r in first)
        while True:
            state.previous = None if state.iteration == 0 else state.consensus
            state.consensus = consensus_update(state, layout)
            snapshot, duals, prev = state.consensus, state.omegas, results

            def solve(w):
                cp = CouplingTerm(snapshot[slices[w]], duals[w], state.gamma)
                return solve_block(ys[w], spec, masks[w], coupling=cp, controls=controls,
                                   warm_start=prev[w])

            results = list(pool.map(solve, range(layout.W)))
            inner += sum(r.inner_iterations for r in results)
            state.window_thetas = [r.theta for r in results]
            state.omegas = dual_update(state, layout)
            state.iteration += 1
            state.primal_residual, state.dual_residual = residuals(state, layout)
            trace.append(state.iteration, state.primal_residual, state.dual_residual,
                         windowed_objective(y, spec, layout, state.window_thetas, weights))
            if stop_check(state, rule, n, J, layout.W):
                break
    finally:
        pool.shutdown(wait=True)

    trace.converged = criteria_met(state, rule, n, J)
    if trace_path is not None:
        trace.to_csv(trace_path)
    # the multiplier adjustment is applied per column, so the consensus can
    # cross by round-off; project it back onto the constraint set
    theta = project_rows(state.consensus) if J > 1 else state.consensus.copy()
    wmask = None if weights is None else weights
    result = FitResult(
        theta=theta,
        inner_iterations=inner,
        objective=objective(np.where(np.isfinite(y), y, 0.0), theta, spec, wmask),
        knots=tuple(count_knots(theta[:, j], spec.k) for j in range(J)),
        converged=trace.converged,
        primal_residual=state.primal_residual,
        dual_residual=state.dual_residual,
    )
    return result, trace
