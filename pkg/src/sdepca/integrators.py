"""Drift-implicit and reference time-stepping schemes on block-structured grids.

The primary scheme is backward Euler: each step solves

    x_next - delta * f(x_next, anchor) = x + g(x, anchor) * dB

where ``anchor`` is the state frozen at the start of the current unit block
(the piecewise-constant argument).  Monotonicity of the drift makes the
implicit map strongly monotone, so the solve has a unique solution for every
step size; Newton from the explicit part with damping is the workhorse, with
a safeguarded 1-d bisection (or a line-searched Newton) as fallback.

Explicit Euler and split-step backward Euler are provided as references.  All
schemes run either on a single path (``simulate_be`` and friends, returning a
:class:`Trajectory`) or vectorized across a batch of paths
(:func:`run_scheme_batch`), which is what the Monte Carlo layer uses.  Rows of
a batch are advanced independently - a row's iterates never depend on the
other rows - so batched and per-path runs agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .brownian import BrownianGrid, coarsen_array
from .model import SdepcaProblem

_MAX_HALVINGS = 30
_FALLBACKS = ("bisection-1d", "damped-newton")

_STATUS_OK = 0
_STATUS_NO_CONVERGENCE = 1
_STATUS_NON_FINITE = 2


class NonConvergenceError(RuntimeError):
    """Implicit solve exhausted its iterations and the fallback failed."""

    def __init__(self, residual: float, message: str = ""):
        self.residual = residual
        super().__init__(message or f"implicit solve did not converge (residual {residual:.3e})")


class NonFiniteError(RuntimeError):
    """A state or coefficient evaluation produced NaN/Inf."""

    def __init__(self, path_index: int | None = None, k: int | None = None, l: int | None = None):
        self.path_index = path_index
        self.k = k
        self.l = l
        where = f" at path={path_index}, block k={k}, step l={l}" if k is not None else ""
        super().__init__(f"non-finite state encountered{where}")


@dataclass(frozen=True)
class BeConfig:
    """Step-size and implicit-solve settings; ``m`` steps per unit interval."""

    m: int
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    fallback: str = "bisection-1d"

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        if not self.newton_tol > 0.0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be positive")
        if self.fallback not in _FALLBACKS:
            raise ValueError(f"fallback must be one of {_FALLBACKS}, got {self.fallback!r}")

    @property
    def delta(self) -> float:
        return 1.0 / self.m


@dataclass(frozen=True)
class Trajectory:
    """One simulated path; ``states[n]`` approximates the state at t = n/m."""

    states: np.ndarray
    m: int
    problem_tag: str = "custom"
    path_index: int = 0

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError("states must be a (n_steps+1, d) array")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory contains non-finite states")
        object.__setattr__(self, "states", states)

    @property
    def delta(self) -> float:
        return 1.0 / self.m

    @property
    def n_anchors(self) -> int:
        return (self.states.shape[0] - 1) // self.m + 1

    def anchor(self, k: int) -> np.ndarray:
        """Block anchor Y_k, the state at integer time k."""
        if k < 0 or k >= self.n_anchors:
            raise IndexError(f"anchor {k} out of range (have {self.n_anchors})")
        return self.states[k * self.m]

    def anchors(self) -> np.ndarray:
        return self.states[:: self.m][: self.n_anchors]

    def times(self) -> np.ndarray:
        return np.arange(self.states.shape[0]) / self.m

    def to_csv(self, path: str | Path) -> None:
        """Write `t,x_0,...,x_{d-1}` rows with round-trip-exact f64 text."""
        d = self.states.shape[1]
        header = "t," + ",".join(f"x_{j}" for j in range(d))
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for n in range(self.states.shape[0]):
                row = [f"{n / self.m:.17g}"] + [f"{v:.17g}" for v in self.states[n]]
                fh.write(",".join(row) + "\n")


@dataclass
class BatchRun:
    """Result of advancing a batch of paths; failed rows are NaN and listed."""

    finals: np.ndarray
    anchors: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> np.ndarray:
        mask = np.ones(self.finals.shape[0], dtype=bool)
        for row, _, _, _ in self.failures:
            mask[row] = False
        return mask


def _batch_coefficients(problem: SdepcaProblem):
    """Batch-capable (drift, diffusion, jacobian) callables for a problem."""
    if problem.batchable:
        drift, diffusion, jac = problem.drift, problem.diffusion, problem.drift_jacobian_x
    else:
        def drift(x, y):
            return np.stack([problem.drift(x[i], y[i]) for i in range(x.shape[0])])

        def diffusion(x, y):
            return np.stack([problem.diffusion(x[i], y[i]) for i in range(x.shape[0])])

        if problem.drift_jacobian_x is None:
            jac = None
        else:
            def jac(x, y):
                return np.stack(
                    [problem.drift_jacobian_x(x[i], y[i]) for i in range(x.shape[0])]
                )

    if jac is None:
        def jac(x, y, _drift=drift):
            # central differences, step scaled with the state magnitude
            n, d = x.shape
            h = 1e-7 * (1.0 + np.linalg.norm(x, axis=1))
            J = np.empty((n, d, d))
            for j in range(d):
                step = np.zeros((n, d))
                step[:, j] = h
                J[:, :, j] = (_drift(x + step, y) - _drift(x - step, y)) / (2.0 * h)[:, None]
            return J

    return drift, diffusion, jac


def _row_norm(res: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.sum(res * res, axis=1))
    norms[~np.all(np.isfinite(res), axis=1)] = np.inf
    return norms


def _bisect_root_1d(drift, y_row: np.ndarray, delta: float, rhs: float, tol: float) -> float:
    """Safeguarded bisection for x - delta*f(x, y) = rhs, f monotone in x."""

    def res(v: float) -> float:
        value = drift(np.array([[v]]), y_row[None, :])
        return v - delta * float(np.asarray(value).reshape(1)[0]) - rhs

    width = 1.0 + abs(rhs)
    lo, hi = rhs - width, rhs + width
    r_lo, r_hi = res(lo), res(hi)
    for _ in range(80):
        if math.isfinite(r_lo) and math.isfinite(r_hi) and r_lo <= 0.0 <= r_hi:
            break
        width *= 2.0
        lo, hi = rhs - width, rhs + width
        r_lo, r_hi = res(lo), res(hi)
    else:
        return math.nan
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r_mid = res(mid)
        if abs(r_mid) <= tol:
            return mid
        if r_mid < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4.0 * np.finfo(float).eps * max(1.0, abs(mid)):
            return mid if abs(res(mid)) <= 10.0 * tol else math.nan
    return mid if abs(res(mid)) <= tol else math.nan


def _armijo_newton_row(drift, jac, y_row, delta, rhs_row, cfg: BeConfig) -> np.ndarray | None:
    """Line-searched Newton on the merit 0.5*|residual|^2 for one row.

    Runs with its own iteration budget: the fallback exists to rescue rows
    the main loop gave up on, however small ``newton_max_iter`` is.
    """
    x = rhs_row.copy()
    for _ in range(200):
        f = drift(x[None, :], y_row[None, :])[0]
        res = x - delta * f - rhs_row
        rnorm = np.linalg.norm(res)
        if not np.isfinite(rnorm):
            return None
        if rnorm <= cfg.newton_tol:
            return x
        A = np.eye(x.shape[0]) - delta * jac(x[None, :], y_row[None, :])[0]
        try:
            dx = np.linalg.solve(A, -res)
        except np.linalg.LinAlgError:
            return None
        scale = 1.0
        for _ in range(_MAX_HALVINGS):
            x_try = x + scale * dx
            f_try = drift(x_try[None, :], y_row[None, :])[0]
            r_try = np.linalg.norm(x_try - delta * f_try - rhs_row)
            if np.isfinite(r_try) and r_try < rnorm:
                x = x_try
                break
            scale *= 0.5
        else:
            return None
    return None


def _newton_batch(drift, jac, y, delta, rhs, cfg: BeConfig):
    """Row-wise solve of x - delta*drift(x, y) = rhs from the guess x = rhs.

    Returns (x, status, resnorm) where status is 0/1/2 for
    converged / not converged / non-finite.  Each row is damped and frozen
    independently, so its iterates do not depend on the rest of the batch.
    """
    n, d = rhs.shape
    status = np.zeros(n, dtype=np.int8)
    if delta == 0.0:
        return rhs.copy(), status, np.zeros(n)

    x = rhs.copy()
    bad_input = ~np.all(np.isfinite(rhs), axis=1)
    res = np.zeros_like(x)
    good = ~bad_input
    if good.any():
        res[good] = x[good] - delta * drift(x[good], y[good]) - rhs[good]
    rnorm = _row_norm(res)
    rnorm[bad_input] = np.inf
    status[bad_input] = _STATUS_NON_FINITE
    x[bad_input] = np.nan

    needs_fallback = np.zeros(n, dtype=bool)
    for _ in range(cfg.newton_max_iter):
        active = (rnorm > cfg.newton_tol) & (status == _STATUS_OK) & ~needs_fallback
        if not active.any():
            break
        ia = np.flatnonzero(active)
        xa, ya, ra = x[ia], y[ia], res[ia]
        finite_res = np.all(np.isfinite(ra), axis=1)
        A = np.empty((len(ia), d, d))
        A[finite_res] = np.eye(d) - delta * jac(xa[finite_res], ya[finite_res])
        dx = np.full_like(xa, np.nan)
        solvable = finite_res & np.all(np.isfinite(A.reshape(len(ia), -1)), axis=1)
        if solvable.any():
            try:
                dx[solvable] = np.linalg.solve(A[solvable], -ra[solvable][..., None])[..., 0]
            except np.linalg.LinAlgError:
                for j in np.flatnonzero(solvable):
                    try:
                        dx[j] = np.linalg.solve(A[j], -ra[j])
                    except np.linalg.LinAlgError:
                        dx[j] = np.nan
        broken = ~np.all(np.isfinite(dx), axis=1)
        needs_fallback[ia[broken]] = True

        workable = np.flatnonzero(~broken)
        if workable.size == 0:
            continue
        iw = ia[workable]
        xw, dw = xa[workable], dx[workable]
        scale = np.ones((len(iw), 1))
        x_new = xw + dw
        r_new = x_new - delta * drift(x_new, y[iw]) - rhs[iw]
        rn_new = _row_norm(r_new)
        for _ in range(_MAX_HALVINGS):
            worse = rn_new >= rnorm[iw]
            if not worse.any():
                break
            scale[worse] *= 0.5
            x_new[worse] = xw[worse] + scale[worse] * dw[worse]
            r_new[worse] = x_new[worse] - delta * drift(x_new[worse], y[iw][worse]) - rhs[iw][worse]
            rn_new[worse] = _row_norm(r_new[worse])
        progressed = rn_new < rnorm[iw]
        ip = iw[progressed]
        x[ip] = x_new[progressed]
        res[ip] = r_new[progressed]
        rnorm[ip] = rn_new[progressed]
        needs_fallback[iw[~progressed]] = True

    unresolved = (rnorm > cfg.newton_tol) & (status == _STATUS_OK)
    for i in np.flatnonzero(unresolved):
        root = None
        if cfg.fallback == "bisection-1d" and d == 1:
            v = _bisect_root_1d(drift, y[i], delta, float(rhs[i, 0]), cfg.newton_tol)
            if math.isfinite(v):
                root = np.array([v])
        else:
            root = _armijo_newton_row(drift, jac, y[i], delta, rhs[i], cfg)
        if root is None:
            status[i] = _STATUS_NO_CONVERGENCE if math.isfinite(rnorm[i]) else _STATUS_NON_FINITE
            x[i] = np.nan
        else:
            x[i] = root
            f = drift(root[None, :], y[i][None, :])[0]
            rnorm[i] = float(np.linalg.norm(root - delta * f - rhs[i]))
    return x, status, rnorm


def solve_implicit(
    drift,
    jac,
    y_block: np.ndarray,
    delta: float,
    rhs: np.ndarray,
    cfg: BeConfig,
) -> np.ndarray:
    """Solve x - delta*drift(x, y_block) = rhs to ``cfg.newton_tol``.

    ``drift`` must be one-sided Lipschitz (monotone) in x, which guarantees a
    unique solution for every step size, and must accept batched ``(n, d)``
    states like the coefficients of a batchable problem (``be_step`` adapts
    single-state coefficients automatically).  Raises
    :class:`NonConvergenceError` or :class:`NonFiniteError` on failure.
    """
    y_block = np.asarray(y_block, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    d = rhs.shape[-1] if rhs.ndim else 1
    if jac is None:
        def jac_b(x, y, _drift=drift):
            n = x.shape[0]
            h = 1e-7 * (1.0 + np.linalg.norm(x, axis=1))
            J = np.empty((n, d, d))
            for j in range(d):
                step = np.zeros((n, d))
                step[:, j] = h
                J[:, :, j] = (_drift(x + step, y) - _drift(x - step, y)) / (2.0 * h)[:, None]
            return J
    else:
        jac_b = jac
    with np.errstate(over="ignore", invalid="ignore"):
        x, status, rnorm = _newton_batch(
            drift, jac_b, y_block[None, :], float(delta), rhs[None, :], cfg
        )
    if status[0] == _STATUS_NON_FINITE:
        raise NonFiniteError()
    if status[0] == _STATUS_NO_CONVERGENCE:
        raise NonConvergenceError(float(rnorm[0]))
    return x[0]


def be_step(
    problem: SdepcaProblem,
    cfg: BeConfig,
    x_prev: np.ndarray,
    y_block: np.ndarray,
    dB: np.ndarray,
) -> np.ndarray:
    """One backward Euler step from ``x_prev`` with block anchor ``y_block``."""
    x_prev = np.asarray(x_prev, dtype=float).reshape(problem.dim_state)
    y_block = np.asarray(y_block, dtype=float).reshape(problem.dim_state)
    dB = np.asarray(dB, dtype=float).reshape(problem.dim_noise)
    drift, diffusion, jac = _batch_coefficients(problem)
    g = np.asarray(diffusion(x_prev[None, :], y_block[None, :]), dtype=float)[0]
    rhs = x_prev + g @ dB
    if not np.all(np.isfinite(rhs)):
        raise NonFiniteError()
    with np.errstate(over="ignore", invalid="ignore"):
        x, status, rnorm = _newton_batch(
            drift, jac, y_block[None, :], cfg.delta, rhs[None, :], cfg
        )
    if status[0] == _STATUS_NON_FINITE:
        raise NonFiniteError()
    if status[0] == _STATUS_NO_CONVERGENCE:
        raise NonConvergenceError(float(rnorm[0]))
    return x[0]


def run_scheme_batch(
    scheme: str,
    problem: SdepcaProblem,
    cfg: BeConfig,
    increments: np.ndarray,
    x0: np.ndarray,
    K: int,
    record: str = "anchors",
) -> BatchRun:
    """Advance a batch of paths through K unit blocks of m steps each.

    ``increments`` has shape (n_paths, >= K*m, r) at step size 1/m; ``x0`` is
    one start (d,) shared by all rows or per-row starts (n_paths, d).
    ``record`` selects what is kept: "final", "anchors" (shape (K+1, n, d))
    or "full" ((n, K*m+1, d)).  A row whose state, coefficient or implicit
    solve goes bad is frozen at NaN and reported in ``failures`` as
    (row, k, l, reason); the other rows continue unaffected.
    """
    if scheme not in ("be", "em", "ssbe"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if record not in ("final", "anchors", "full"):
        raise ValueError(f"unknown record mode {record!r}")
    if K < 0:
        raise ValueError("K must be nonnegative")
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 3:
        raise ValueError("increments must have shape (n_paths, n_steps, r)")
    n_paths = increments.shape[0]
    m, d, r = cfg.m, problem.dim_state, problem.dim_noise
    if increments.shape[1] < K * m:
        raise ValueError(
            f"grid too short: need {K * m} steps of size 1/{m}, have {increments.shape[1]}"
        )
    if increments.shape[2] != r:
        raise ValueError(f"noise dimension mismatch: {increments.shape[2]} != {r}")

    x0 = np.asarray(x0, dtype=float)
    x = np.broadcast_to(x0, (n_paths, d)).astype(float).copy()

    drift, diffusion, jac = _batch_coefficients(problem)
    delta = cfg.delta
    anchors = np.full((K + 1, n_paths, d), np.nan) if record == "anchors" else None
    states = np.full((n_paths, K * m + 1, d), np.nan) if record == "full" else None
    if anchors is not None:
        anchors[0] = x
    if states is not None:
        states[:, 0] = x

    failures: list[tuple[int, int, int, str]] = []
    alive = np.ones(n_paths, dtype=bool)

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(K):
            y_full = x.copy()
            for l in range(m):
                idx = np.flatnonzero(alive)
                if idx.size == 0:
                    break
                xa = x[idx]
                ya = y_full[idx]
                dB = increments[idx, k * m + l]
                reason = np.zeros(idx.size, dtype=np.int8)
                if scheme == "em":
                    x_new = xa + delta * drift(xa, ya) + np.einsum("ndr,nr->nd", diffusion(xa, ya), dB)
                    reason[~np.all(np.isfinite(x_new), axis=1)] = _STATUS_NON_FINITE
                elif scheme == "be":
                    rhs = xa + np.einsum("ndr,nr->nd", diffusion(xa, ya), dB)
                    x_new, reason, _ = _newton_batch(drift, jac, ya, delta, rhs, cfg)
                else:  # ssbe: implicit drift update, then explicit diffusion
                    x_star, reason, _ = _newton_batch(drift, jac, ya, delta, xa, cfg)
                    ok = reason == _STATUS_OK
                    x_new = np.full_like(xa, np.nan)
                    if ok.any():
                        g_star = diffusion(x_star[ok], ya[ok])
                        x_new[ok] = x_star[ok] + np.einsum("ndr,nr->nd", g_star, dB[ok])
                    fresh_bad = ok & ~np.all(np.isfinite(x_new), axis=1)
                    reason[fresh_bad] = _STATUS_NON_FINITE
                bad = reason != _STATUS_OK
                bad |= ~np.all(np.isfinite(x_new), axis=1)
                if bad.any():
                    for j in np.flatnonzero(bad):
                        kind = "nonconvergence" if reason[j] == _STATUS_NO_CONVERGENCE else "nonfinite"
                        failures.append((int(idx[j]), k, l, kind))
                    x_new[bad] = np.nan
                    alive[idx[bad]] = False
                x[idx] = x_new
                if states is not None:
                    states[idx, k * m + l + 1] = x_new
            if anchors is not None:
                anchors[k + 1] = x

    return BatchRun(finals=x, anchors=anchors, states=states, failures=failures)


def _coarse_increments(grid: BrownianGrid, cfg: BeConfig, K: int) -> np.ndarray:
    ratio = cfg.delta / grid.fine_step
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ValueError(
            f"grid with fine_step {grid.fine_step} is not coarsenable to delta 1/{cfg.m}"
        )
    coarse = coarsen_array(grid.increments, factor)
    if coarse.shape[0] < K * cfg.m:
        raise ValueError(f"horizon {grid.horizon} too short for K={K} unit blocks")
    return coarse[: K * cfg.m]


def _simulate(scheme: str, problem, cfg, grid: BrownianGrid, K: int) -> Trajectory:
    coarse = _coarse_increments(grid, cfg, K)
    run = run_scheme_batch(scheme, problem, cfg, coarse[None], problem.initial_state, K, record="full")
    if run.failures:
        _, k, l, kind = run.failures[0]
        if kind == "nonconvergence":
            raise NonConvergenceError(
                math.nan, f"implicit solve failed at path={grid.path_index}, k={k}, l={l}"
            )
        raise NonFiniteError(grid.path_index, k, l)
    return Trajectory(
        states=run.states[0],
        m=cfg.m,
        problem_tag=problem.tag,
        path_index=grid.path_index,
    )


def simulate_be(problem: SdepcaProblem, cfg: BeConfig, grid: BrownianGrid, K: int) -> Trajectory:
    """Backward Euler over K unit blocks, anchor frozen at each block start."""
    return _simulate("be", problem, cfg, grid, K)


def simulate_em(problem: SdepcaProblem, cfg: BeConfig, grid: BrownianGrid, K: int) -> Trajectory:
    """Explicit Euler reference; may legitimately blow up on stiff problems."""
    return _simulate("em", problem, cfg, grid, K)


def simulate_ssbe(problem: SdepcaProblem, cfg: BeConfig, grid: BrownianGrid, K: int) -> Trajectory:
    """Split-step backward Euler: implicit drift update, then diffusion kick."""
    return _simulate("ssbe", problem, cfg, grid, K)


def be_mean_multiplier(theta1: float, theta2: float, m: int) -> float:
    """Zero-noise per-block anchor multiplier of backward Euler on the linear
    problem: rho^m + (theta2/theta1)(1 - rho^m) with rho = 1/(1 + theta1/m).

    Converges to the continuous multiplier at rate O(1/m); validated against
    zero-noise simulation in the tests.
    """
    if theta1 <= 0.0 or m < 1:
        raise ValueError("theta1 must be positive and m >= 1")
    rho = 1.0 / (1.0 + theta1 / m)
    return rho**m + (theta2 / theta1) * (1.0 - rho**m)
