"""Monte Carlo estimation of weak errors, mixing and contraction diagnostics.

The estimators follow a common-random-numbers protocol: every path index maps
to one fine Brownian lattice (keyed by the master seed), the reference
solution is evaluated on the fine lattice, and each coarse scheme consumes an
exact coarsening of the same increments.  Per-path quantities are computed
independently of how paths are grouped into batches, and reductions run in
path-index order with compensated summation, so results are bit-identical for
any worker count or chunk size.

Expectations are estimated by plain sample means with normal-approximation
95% confidence half-widths (1.96 * sd / sqrt(N)); path counts are >= 1000 in
all shipped experiment presets.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .brownian import coarsen_array, generate_increments
from .integrators import BeConfig, Trajectory, run_scheme_batch
from .linear_analytic import LinearAdditiveParams, exact_finals_batch
from .model import DissipativityParams, SdepcaProblem, check_moment_condition

_Z95 = 1.96
#: Mean-square differences below this floor are treated as fully decayed when
#: fitting contraction rates (coupled chains underflow after enough blocks).
_DECAY_FLOOR = 1e-280


class MonteCarloFailure(RuntimeError):
    """Raised when more paths fail than the failure budget allows."""

    def __init__(self, failures, n_paths):
        self.failures = failures
        super().__init__(
            f"{len(failures)} path failures out of {n_paths} exceed the budget; "
            f"first: {failures[0] if failures else None}"
        )


class TestFunction(enum.Enum):
    """Bounded smooth test functions used by the experiment suite."""

    __test__ = False  # keep pytest from collecting this as a test class

    SIN_SQ = "sin_sq"            # sin(|x|^2)
    COS_ABS = "cos_abs"          # cos(|x|)
    ATAN_ABS = "atan_abs"        # arctan(|x|)
    EXP_NEG_SQ = "exp_neg_sq"    # exp(-|x|^2)
    ATAN_SQ = "atan_sq"          # arctan(|x|^2)
    SIN_SQ_SHIFT = "sin_sq_shift"  # sin(|x|^2 + pi/2)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        nrm = np.sqrt(np.sum(x * x, axis=-1))
        if self is TestFunction.SIN_SQ:
            return np.sin(nrm**2)
        if self is TestFunction.COS_ABS:
            return np.cos(nrm)
        if self is TestFunction.ATAN_ABS:
            return np.arctan(nrm)
        if self is TestFunction.EXP_NEG_SQ:
            return np.exp(-(nrm**2))
        if self is TestFunction.ATAN_SQ:
            return np.arctan(nrm**2)
        return np.sin(nrm**2 + 0.5 * math.pi)


#: Test-function presets of the two experiment figures per problem family.
EXAMPLE1_WEAK_PHIS = (
    TestFunction.SIN_SQ,
    TestFunction.COS_ABS,
    TestFunction.ATAN_ABS,
    TestFunction.EXP_NEG_SQ,
)
EXAMPLE2_WEAK_PHIS = (
    TestFunction.SIN_SQ_SHIFT,
    TestFunction.COS_ABS,
    TestFunction.ATAN_SQ,
    TestFunction.EXP_NEG_SQ,
)
EXAMPLE1_ERGODIC_PHIS = (
    TestFunction.ATAN_ABS,
    TestFunction.COS_ABS,
    TestFunction.SIN_SQ,
)
EXAMPLE2_ERGODIC_PHIS = (
    TestFunction.ATAN_ABS,
    TestFunction.SIN_SQ,
    TestFunction.EXP_NEG_SQ,
)


def _kahan_mean(values: np.ndarray) -> float:
    """Compensated mean in index order; order-fixed for reproducibility."""
    total = 0.0
    comp = 0.0
    for v in values:
        y = float(v) - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total / len(values)


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    mean = _kahan_mean(values)
    n = len(values)
    if n < 2:
        return mean, math.inf
    var = _kahan_mean((values - mean) ** 2) * n / (n - 1)
    return mean, math.sqrt(var / n)


def _run_chunked(n_total: int, chunk_size: int, n_workers: int, worker) -> None:
    spans = [(i, min(i + chunk_size, n_total)) for i in range(0, n_total, chunk_size)]
    if n_workers <= 1:
        for lo, hi in spans:
            worker(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda span: worker(*span), spans))


def _is_power_of_two_fraction(delta: float) -> bool:
    mantissa, _ = math.frexp(delta)
    return delta > 0.0 and mantissa == 0.5


def fit_order(deltas: Sequence[float], errors: Sequence[float]) -> tuple[float, float]:
    """Ordinary least squares of log(error) against log(delta)."""
    deltas = np.asarray(deltas, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(deltas) < 2 or len(deltas) != len(errors):
        raise ValueError("need at least two (delta, error) pairs")
    if np.any(deltas <= 0.0) or np.any(errors <= 0.0):
        raise ValueError("deltas and errors must be strictly positive")
    lx = np.log(deltas)
    ly = np.log(errors)
    xc = lx - lx.mean()
    slope = float(np.dot(xc, ly - ly.mean()) / np.dot(xc, xc))
    intercept = float(ly.mean() - slope * lx.mean())
    return slope, intercept


@dataclass
class WeakErrorReport:
    """Per-step-size coupled weak errors E|phi(X(T)) - phi(Y_T)| with CIs.

    ``mean_gaps`` is the secondary metric |mean phi(X) - mean phi(Y)|: the
    Monte Carlo estimate of the pure weak error on the same coupled runs,
    with ``mean_gap_slope`` its own log-log fit.  For multiplicative noise
    the primary metric also carries the scheme's strong-order component, so
    the two slopes can differ.
    """

    deltas: list
    errors: list
    half_widths: list
    n_paths: int
    fitted_slope: Optional[float]
    fitted_intercept: Optional[float]
    mean_gaps: list
    mean_gap_slope: Optional[float]
    n_failed: int
    phi: str
    T: int

    def as_dict(self) -> dict:
        return {
            "deltas": [float(v) for v in self.deltas],
            "errors": [float(v) for v in self.errors],
            "half_widths": [float(v) for v in self.half_widths],
            "n_paths": self.n_paths,
            "fitted_slope": None if self.fitted_slope is None else float(self.fitted_slope),
            "fitted_intercept": None
            if self.fitted_intercept is None
            else float(self.fitted_intercept),
            "mean_gaps": [float(v) for v in self.mean_gaps],
            "mean_gap_slope": None if self.mean_gap_slope is None else float(self.mean_gap_slope),
            "n_failed": self.n_failed,
            "phi": self.phi,
            "T": self.T,
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")

    def to_csv(self, path: str | Path) -> None:
        lines = ["delta,error,ci_half_width"]
        for d, e, h in zip(self.deltas, self.errors, self.half_widths):
            lines.append(f"{d:.17g},{e:.17g},{h:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")


def linear_exact_reference(params: LinearAdditiveParams):
    """Reference sampler evaluating the exact linear solution at time T."""

    def reference(increments: np.ndarray, fine_step: float, T: int) -> np.ndarray:
        finals = exact_finals_batch(params, increments[..., 0], fine_step, T)
        return finals[:, None]

    return reference


def ssbe_reference(problem: SdepcaProblem, newton_tol: float = 1e-12):
    """Reference sampler running split-step backward Euler at the fine step."""

    def reference(increments: np.ndarray, fine_step: float, T: int) -> np.ndarray:
        m = int(round(1.0 / fine_step))
        cfg = BeConfig(m=m, newton_tol=newton_tol)
        run = run_scheme_batch(
            "ssbe", problem, cfg, increments, problem.initial_state, T, record="final"
        )
        return run.finals

    return reference


def estimate_weak_errors(
    problem: SdepcaProblem,
    reference: Callable[[np.ndarray, float, int], np.ndarray],
    deltas: Sequence[float],
    n_paths: int,
    T: int,
    phis: Sequence[TestFunction],
    master_seed: int,
    *,
    fine_step: float = 2.0**-11,
    n_workers: int = 1,
    chunk_size: int = 512,
    newton_tol: float = 1e-12,
    max_failure_fraction: float = 1e-3,
) -> dict[TestFunction, WeakErrorReport]:
    """Coupled weak-error tables for several test functions on shared paths.

    For each path one fine lattice is generated; the reference consumes it
    directly and backward Euler consumes its coarsenings, so all errors are
    measured on the same Brownian path, and every test function is evaluated
    on the same simulated endpoints.  Paths that fail anywhere are dropped
    pairwise across all step sizes; more than ``max_failure_fraction`` of
    failures aborts the estimate.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    T = int(T)
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if not phis:
        raise ValueError("need at least one test function")
    deltas = [float(d) for d in deltas]
    ms = []
    factors = []
    for d in deltas:
        if not _is_power_of_two_fraction(d):
            raise ValueError(f"step size {d} is not dyadic")
        if d <= fine_step:
            raise ValueError(f"step size {d} must exceed the fine step {fine_step}")
        m = round(1.0 / d)
        factor = round(d / fine_step)
        if abs(m * d - 1.0) > 1e-12 or abs(factor * fine_step - d) > 1e-18:
            raise ValueError(f"step size {d} is not coarsenable from {fine_step}")
        ms.append(m)
        factors.append(factor)

    r = problem.dim_noise
    d_state = problem.dim_state
    n_deltas = len(deltas)
    ref_finals = np.full((n_paths, d_state), np.nan)
    num_finals = np.full((n_deltas, n_paths, d_state), np.nan)
    failure_log: list = []

    def worker(lo: int, hi: int) -> None:
        incs = np.stack(
            [generate_increments(master_seed, i, float(T), fine_step, r) for i in range(lo, hi)]
        )
        ref_finals[lo:hi] = reference(incs, fine_step, T)
        for j, (delta, m, factor) in enumerate(zip(deltas, ms, factors)):
            coarse = coarsen_array(incs, factor)
            cfg = BeConfig(m=m, newton_tol=newton_tol)
            run = run_scheme_batch(
                "be", problem, cfg, coarse, problem.initial_state, T, record="final"
            )
            for row, k, l, kind in run.failures:
                failure_log.append({"path": lo + row, "delta": delta, "k": k, "l": l, "kind": kind})
            num_finals[j, lo:hi] = run.finals

    _run_chunked(n_paths, chunk_size, n_workers, worker)

    ok = np.all(np.isfinite(ref_finals), axis=-1) & np.all(
        np.isfinite(num_finals), axis=(0, 2)
    )
    n_failed = int(n_paths - ok.sum())
    if n_failed > max_failure_fraction * n_paths:
        bad = sorted(set(range(n_paths)) - set(np.flatnonzero(ok)))
        log = failure_log or [{"path": int(b)} for b in bad]
        raise MonteCarloFailure(log, n_paths)

    reports: dict[TestFunction, WeakErrorReport] = {}
    for phi in phis:
        pr = phi(ref_finals[ok])
        mean_ref = _kahan_mean(pr)
        errors = []
        half_widths = []
        mean_gaps = []
        for j in range(n_deltas):
            pn = phi(num_finals[j, ok])
            mean, se = _mean_se(np.abs(pr - pn))
            errors.append(mean)
            half_widths.append(_Z95 * se)
            mean_gaps.append(abs(mean_ref - _kahan_mean(pn)))

        slope = intercept = None
        if n_deltas >= 2 and all(e > 0.0 for e in errors):
            slope, intercept = fit_order(deltas, errors)
        else:
            warnings.warn("weak-error slope undefined (need >= 2 step sizes with positive errors)")
        gap_slope = None
        if n_deltas >= 2 and all(g > 0.0 for g in mean_gaps):
            gap_slope, _ = fit_order(deltas, mean_gaps)

        reports[phi] = WeakErrorReport(
            deltas=deltas,
            errors=errors,
            half_widths=half_widths,
            n_paths=n_paths,
            fitted_slope=slope,
            fitted_intercept=intercept,
            mean_gaps=mean_gaps,
            mean_gap_slope=gap_slope,
            n_failed=n_failed,
            phi=phi.value,
            T=T,
        )
    return reports


def estimate_weak_error(
    problem: SdepcaProblem,
    reference: Callable[[np.ndarray, float, int], np.ndarray],
    deltas: Sequence[float],
    n_paths: int,
    T: int,
    phi: TestFunction,
    master_seed: int,
    **kwargs,
) -> WeakErrorReport:
    """Single-test-function form of :func:`estimate_weak_errors`."""
    return estimate_weak_errors(
        problem, reference, deltas, n_paths, T, [phi], master_seed, **kwargs
    )[phi]


@dataclass
class ErgodicityReport:
    """Mean traces of phi(Y_k) from several initial values, plus their spread.

    ``pooled_se[k]`` is sqrt(2) times the root-mean-square standard error
    across initials: the scale of a typical pairwise trace difference if the
    chains were independent (the coupled chains are positively correlated, so
    this is conservative).
    """

    initials: list
    traces: list
    standard_errors: list
    spread: list
    pooled_se: list
    n_paths: int
    n_failed: int
    phi: str

    def as_dict(self) -> dict:
        return {
            "initials": self.initials,
            "traces": self.traces,
            "standard_errors": self.standard_errors,
            "spread": self.spread,
            "pooled_se": self.pooled_se,
            "n_paths": self.n_paths,
            "n_failed": self.n_failed,
            "phi": self.phi,
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")

    def to_csv(self, path: str | Path) -> None:
        n_init = len(self.initials)
        header = "k," + ",".join(f"trace_{i}" for i in range(n_init)) + ",spread"
        lines = [header]
        for k in range(len(self.spread)):
            row = [str(k)] + [f"{self.traces[i][k]:.17g}" for i in range(n_init)]
            row.append(f"{self.spread[k]:.17g}")
            lines.append(",".join(row))
        Path(path).write_text("\n".join(lines) + "\n")


def ergodic_mean_trace(
    problem: SdepcaProblem,
    cfg: BeConfig,
    initials: Sequence,
    K: int,
    n_paths: int,
    phi: TestFunction,
    master_seed: int,
    *,
    n_workers: int = 1,
    chunk_size: int = 512,
) -> ErgodicityReport:
    """Estimate E phi(Y_k), k = 0..K, from each initial value.

    All initials are driven by the same family of increment lattices (path
    index i uses the same noise for every initial), so the spread directly
    measures how fast the chains forget their starting point.
    """
    if K < 0:
        raise ValueError("K must be nonnegative")
    initial_arr = np.atleast_2d(np.asarray(initials, dtype=float))
    if initial_arr.shape[0] == 1 and problem.dim_state == 1 and len(initials) > 1:
        initial_arr = np.asarray(initials, dtype=float)[:, None]
    if not np.all(np.isfinite(initial_arr)):
        raise ValueError("initial values must be finite")
    n_init = initial_arr.shape[0]
    r = problem.dim_noise
    delta = cfg.delta

    phis_all = np.full((n_init, K + 1, n_paths), np.nan)

    def worker(lo: int, hi: int) -> None:
        incs = np.stack(
            [generate_increments(master_seed, i, float(K), delta, r) for i in range(lo, hi)]
        ) if K > 0 else np.zeros((hi - lo, 0, r))
        for i0 in range(n_init):
            run = run_scheme_batch(
                "be", problem, cfg, incs, initial_arr[i0], K, record="anchors"
            )
            phis_all[i0, :, lo:hi] = phi(run.anchors)

    _run_chunked(n_paths, chunk_size, n_workers, worker)

    ok = np.all(np.isfinite(phis_all), axis=(0, 1))
    n_failed = int(n_paths - ok.sum())

    traces = np.empty((n_init, K + 1))
    ses = np.empty((n_init, K + 1))
    for i0 in range(n_init):
        for k in range(K + 1):
            traces[i0, k], ses[i0, k] = _mean_se(phis_all[i0, k, ok])
    spread = traces.max(axis=0) - traces.min(axis=0)
    pooled = np.sqrt(2.0 * np.mean(ses**2, axis=0))

    return ErgodicityReport(
        initials=initial_arr.tolist(),
        traces=traces.tolist(),
        standard_errors=ses.tolist(),
        spread=spread.tolist(),
        pooled_se=pooled.tolist(),
        n_paths=n_paths,
        n_failed=n_failed,
        phi=phi.value,
    )


def time_average(trajectory: Trajectory, phi: Callable[[np.ndarray], np.ndarray]) -> float:
    """Time average (1/K) sum of phi over the anchors Y_0 .. Y_{K-1}.

    ``phi`` is any observable mapping (..., d) states to scalars, e.g. a
    :class:`TestFunction`.
    """
    n_anchors = trajectory.n_anchors
    if n_anchors < 1:
        raise ValueError("trajectory has no anchors")
    if n_anchors == 1:
        return float(phi(trajectory.anchor(0)))
    values = phi(trajectory.anchors()[:-1])
    return _kahan_mean(np.atleast_1d(values))


@dataclass
class ContractionReport:
    """Empirical mean-square distance of coupled chains, with a decay fit."""

    x: list
    y: list
    mean_sq_diffs: list
    half_widths: list
    fitted_decay_factor: Optional[float]
    decay_factor_se: Optional[float]
    bound: Optional[float]
    n_paths: int
    n_failed: int

    def as_dict(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "mean_sq_diffs": self.mean_sq_diffs,
            "half_widths": self.half_widths,
            "fitted_decay_factor": self.fitted_decay_factor,
            "decay_factor_se": self.decay_factor_se,
            "bound": self.bound,
            "n_paths": self.n_paths,
            "n_failed": self.n_failed,
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")

    def to_csv(self, path: str | Path) -> None:
        lines = ["k,mean_sq_diff,ci_half_width"]
        for k, (v, h) in enumerate(zip(self.mean_sq_diffs, self.half_widths)):
            lines.append(f"{k},{v:.17g},{h:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")


def contraction_estimate(
    problem: SdepcaProblem,
    cfg: BeConfig,
    x: np.ndarray | float,
    y: np.ndarray | float,
    n_paths: int,
    K: int,
    master_seed: int,
    *,
    params: Optional[DissipativityParams] = None,
    n_workers: int = 1,
    chunk_size: int = 512,
) -> ContractionReport:
    """Mean-square distance E|Y_k^x - Y_k^y|^2 of noise-coupled chains.

    Each path index drives both chains with identical increments.  The decay
    factor per unit time is fitted on the log of the positive part of the
    trace; when dissipativity constants are supplied, the analytic per-block
    contraction factor is attached for comparison.
    """
    x_arr = np.asarray(x, dtype=float).reshape(problem.dim_state)
    y_arr = np.asarray(y, dtype=float).reshape(problem.dim_state)
    if np.array_equal(x_arr, y_arr):
        raise ValueError("initial values x and y must differ")
    if K < 1:
        raise ValueError("K must be >= 1")
    r = problem.dim_noise
    delta = cfg.delta

    sq_diffs = np.full((K + 1, n_paths), np.nan)

    def worker(lo: int, hi: int) -> None:
        incs = np.stack(
            [generate_increments(master_seed, i, float(K), delta, r) for i in range(lo, hi)]
        )
        run_x = run_scheme_batch("be", problem, cfg, incs, x_arr, K, record="anchors")
        run_y = run_scheme_batch("be", problem, cfg, incs, y_arr, K, record="anchors")
        diff = run_x.anchors - run_y.anchors
        sq_diffs[:, lo:hi] = np.sum(diff * diff, axis=-1)

    _run_chunked(n_paths, chunk_size, n_workers, worker)

    ok = np.all(np.isfinite(sq_diffs), axis=0)
    n_failed = int(n_paths - ok.sum())

    msd = np.empty(K + 1)
    hw = np.empty(K + 1)
    for k in range(K + 1):
        mean, se = _mean_se(sq_diffs[k, ok])
        msd[k] = mean
        hw[k] = _Z95 * se

    usable = np.flatnonzero(np.isfinite(msd) & (msd > _DECAY_FLOOR))
    factor = factor_se = None
    if usable.size >= 2:
        ks = usable.astype(float)
        ly = np.log(msd[usable])
        kc = ks - ks.mean()
        slope = float(np.dot(kc, ly - ly.mean()) / np.dot(kc, kc))
        resid = ly - (ly.mean() + slope * kc)
        dof = max(usable.size - 2, 1)
        slope_se = math.sqrt(float(np.dot(resid, resid)) / dof / float(np.dot(kc, kc)))
        factor = math.exp(slope)
        factor_se = factor * slope_se

    bound = None
    if params is not None:
        from .model import contraction_rates

        bound = contraction_rates(params, delta, cfg.m).rbar1_block

    return ContractionReport(
        x=x_arr.tolist(),
        y=y_arr.tolist(),
        mean_sq_diffs=msd.tolist(),
        half_widths=hw.tolist(),
        fitted_decay_factor=factor,
        decay_factor_se=factor_se,
        bound=bound,
        n_paths=n_paths,
        n_failed=n_failed,
    )


@dataclass
class MomentReport:
    """Per-block estimates of E|Y_k|^(2p) with a monotone-growth flag.

    The flag fires when the trace increases strictly at every step over the
    last half of the horizon and the total increase exceeds the combined
    confidence half-widths of the window endpoints.
    """

    p: int
    moments: list
    half_widths: list
    growth_flag: bool
    n_paths: int
    n_failed: int

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "moments": self.moments,
            "half_widths": self.half_widths,
            "growth_flag": self.growth_flag,
            "n_paths": self.n_paths,
            "n_failed": self.n_failed,
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")

    def to_csv(self, path: str | Path) -> None:
        lines = ["k,moment,ci_half_width"]
        for k, (v, h) in enumerate(zip(self.moments, self.half_widths)):
            lines.append(f"{k},{v:.17g},{h:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")


def moment_estimate(
    problem: SdepcaProblem,
    cfg: BeConfig,
    p: int,
    n_paths: int,
    K: int,
    master_seed: int,
    *,
    params: Optional[DissipativityParams] = None,
    n_workers: int = 1,
    chunk_size: int = 512,
) -> MomentReport:
    """Monte Carlo trace of the 2p-th moment of the block anchors."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if K < 1:
        raise ValueError("K must be >= 1")
    if params is not None and not check_moment_condition(params, p):
        warnings.warn(
            f"moment condition fails for p={p}; the 2p-th moment may be unbounded"
        )
    r = problem.dim_noise
    delta = cfg.delta
    vals = np.full((K + 1, n_paths), np.nan)

    def worker(lo: int, hi: int) -> None:
        incs = np.stack(
            [generate_increments(master_seed, i, float(K), delta, r) for i in range(lo, hi)]
        )
        run = run_scheme_batch(
            "be", problem, cfg, incs, problem.initial_state, K, record="anchors"
        )
        norm_sq = np.sum(run.anchors**2, axis=-1)
        vals[:, lo:hi] = norm_sq**p

    _run_chunked(n_paths, chunk_size, n_workers, worker)

    ok = np.all(np.isfinite(vals), axis=0)
    n_failed = int(n_paths - ok.sum())
    if not ok.any():
        raise MonteCarloFailure([{"reason": "all paths failed"}], n_paths)

    moments = np.empty(K + 1)
    hw = np.empty(K + 1)
    for k in range(K + 1):
        mean, se = _mean_se(vals[k, ok])
        moments[k] = mean
        hw[k] = _Z95 * se

    window_start = K - K // 2
    window = moments[window_start:]
    strictly_up = bool(np.all(np.diff(window) > 0.0)) if window.size > 1 else False
    beyond_ci = window[-1] - window[0] > hw[window_start] + hw[-1]
    growth_flag = strictly_up and bool(beyond_ci)

    return MomentReport(
        p=p,
        moments=moments.tolist(),
        half_widths=hw.tolist(),
        growth_flag=growth_flag,
        n_paths=n_paths,
        n_failed=n_failed,
    )


@dataclass(frozen=True)
class RecursionBoundReport:
    """Outcome of checking the discrete Gronwall-type recursion bound."""

    ok: bool
    first_violation: Optional[int]
    hypothesis_failures: tuple

    def __bool__(self) -> bool:
        return self.ok


def check_recursion_bound(
    z: Sequence[float],
    alpha: float,
    beta: float,
    gamma: float,
    delta: float,
    m: int,
) -> RecursionBoundReport:
    """Check the block recursion bound along a nonnegative sequence.

    Hypothesis at index n = k*m+l+1:  z[n] <= (1 - alpha*delta) z[n-1]
    + beta*delta z[k*m] + gamma*delta.  Wherever the hypothesis has held at
    every step since the block anchor, the conclusion

        z[n] <= (beta/alpha + (1 - beta/alpha) e^{-alpha (l+1) delta}) z[k*m]
                + gamma/alpha

    is asserted.  Indices with a broken hypothesis are reported and exempt
    from the assertion (the bound is vacuous there).
    """
    if not (alpha > beta > 0.0):
        raise ValueError("need alpha > beta > 0")
    if gamma <= 0.0:
        raise ValueError("need gamma > 0")
    if not 1.0 - alpha * delta > 0.0:
        raise ValueError("need 1 - alpha*delta > 0")
    if m < 1:
        raise ValueError("m must be >= 1")
    z = np.asarray(z, dtype=float)
    if np.any(z < 0.0):
        raise ValueError("sequence must be nonnegative")

    tol = 1e-9 * max(1.0, float(np.max(z, initial=0.0)), gamma / alpha)
    ratio = beta / alpha
    ok = True
    first_violation = None
    hypothesis_failures: list[int] = []

    for block_start in range(0, len(z) - 1, m):
        z_anchor = z[block_start]
        hypothesis_held = True
        for l in range(m):
            n = block_start + l + 1
            if n >= len(z):
                break
            rhs = (1.0 - alpha * delta) * z[n - 1] + beta * delta * z_anchor + gamma * delta
            if z[n] > rhs + tol:
                hypothesis_failures.append(n)
                hypothesis_held = False
            if hypothesis_held:
                bound = (
                    ratio + (1.0 - ratio) * math.exp(-alpha * (l + 1) * delta)
                ) * z_anchor + gamma / alpha
                if z[n] > bound + tol:
                    ok = False
                    if first_violation is None:
                        first_violation = n
    return RecursionBoundReport(
        ok=ok,
        first_violation=first_violation,
        hypothesis_failures=tuple(hypothesis_failures),
    )
