import math

import numpy as np
import pytest

from sdepca.brownian import BrownianGrid, generate_path
from sdepca.integrators import (
    BeConfig,
    NonConvergenceError,
    NonFiniteError,
    Trajectory,
    be_mean_multiplier,
    be_step,
    run_scheme_batch,
    simulate_be,
    simulate_em,
    simulate_ssbe,
    solve_implicit,
)
from sdepca.problems import cubic_multiplicative, linear_additive


def zero_noise_grid(horizon, fine_step):
    n = int(round(horizon / fine_step))
    return BrownianGrid(
        fine_step=fine_step,
        horizon=horizon,
        dim_noise=1,
        increments=np.zeros((n, 1)),
        master_seed=0,
        path_index=0,
    )


def bisect_oracle(residual, lo, hi, tol=1e-13):
    """Test-local bisection, independent of the library's solver internals."""
    r_lo = residual(lo)
    assert r_lo <= 0.0 <= residual(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r_mid = residual(mid)
        if abs(r_mid) <= tol or hi - lo < 1e-16:
            return mid
        if r_mid < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestSolveImplicit:
    def test_linear_closed_form(self):
        problem = linear_additive(3.0, 1.0)
        cfg = BeConfig(m=2)
        x = solve_implicit(
            problem.drift, problem.drift_jacobian_x, np.array([1.0]), 0.5, np.array([1.0]), cfg
        )
        # (rhs + delta*theta2*y) / (1 + delta*theta1)
        assert x[0] == pytest.approx(0.6, abs=1e-12)

    def test_zero_delta_is_identity(self):
        problem = cubic_multiplicative(1.0, 1.0)
        cfg = BeConfig(m=1)
        rhs = np.array([1.7])
        x = solve_implicit(problem.drift, problem.drift_jacobian_x, np.array([0.3]), 0.0, rhs, cfg)
        assert np.array_equal(x, rhs)

    def test_cubic_against_bisection_oracle(self):
        problem = cubic_multiplicative(1.0, 1.0)
        cfg = BeConfig(m=10)
        x = solve_implicit(
            problem.drift, problem.drift_jacobian_x, np.array([0.0]), 0.1, np.array([0.0]), cfg
        )
        root = bisect_oracle(lambda v: 0.1 * v**3 + 2.0 * v - 0.1, -1.0, 1.0)
        assert x[0] == pytest.approx(root, abs=1e-12)
        assert x[0] == pytest.approx(0.0499938, abs=1e-6)

    def test_randomized_cubic_solves_match_oracle(self):
        problem = cubic_multiplicative(1.0, 1.0)
        cfg = BeConfig(m=4)
        rng = np.random.default_rng(17)
        for _ in range(1000):
            delta = float(rng.choice([0.5, 0.25, 0.0625]))
            rhs = float(rng.uniform(-8.0, 8.0))
            y = float(rng.uniform(-3.0, 3.0))

            def res(v):
                return v - delta * (-(v**3) - 10.0 * v + 2.0 * y + 1.0) - rhs

            width = 1.0 + abs(rhs)
            while res(rhs - width) > 0.0 or res(rhs + width) < 0.0:
                width *= 2.0
            root = bisect_oracle(res, rhs - width, rhs + width)
            x = solve_implicit(
                problem.drift, problem.drift_jacobian_x, np.array([y]), delta, np.array([rhs]), cfg
            )
            assert x[0] == pytest.approx(root, abs=1e-10)

    def test_finite_difference_jacobian_path(self):
        problem = cubic_multiplicative(1.0, 1.0)
        cfg = BeConfig(m=10)
        x = solve_implicit(problem.drift, None, np.array([0.0]), 0.1, np.array([0.0]), cfg)
        assert x[0] == pytest.approx(0.0499938, abs=1e-6)

    def test_unsolvable_system_raises(self):
        # x - delta*x = rhs with delta = 1 has no solution for rhs != 0
        cfg = BeConfig(m=1, newton_max_iter=5)
        with pytest.raises(NonConvergenceError):
            solve_implicit(lambda x, y: x, None, np.array([0.0]), 1.0, np.array([1.0]), cfg)

    def test_non_finite_rhs_raises(self):
        problem = cubic_multiplicative(1.0, 1.0)
        cfg = BeConfig(m=2)
        with pytest.raises(NonFiniteError):
            solve_implicit(
                problem.drift,
                problem.drift_jacobian_x,
                np.array([0.0]),
                0.5,
                np.array([np.nan]),
                cfg,
            )

    def test_damped_newton_fallback_mode(self):
        problem = cubic_multiplicative(1.0, 1.0)
        cfg = BeConfig(m=4, newton_max_iter=1, fallback="damped-newton")
        x = solve_implicit(
            problem.drift, problem.drift_jacobian_x, np.array([1.0]), 0.25, np.array([5.0]), cfg
        )
        res = x[0] - 0.25 * (-(x[0] ** 3) - 10.0 * x[0] + 2.0 + 1.0) - 5.0
        assert abs(res) <= 1e-12


class TestBeStep:
    def test_linear_example(self):
        problem = linear_additive(3.0, 1.0)
        cfg = BeConfig(m=2)
        x = be_step(problem, cfg, np.array([1.0]), np.array([1.0]), np.array([0.0]))
        assert x[0] == pytest.approx(0.6, abs=1e-12)

    def test_zero_drift_zero_noise_is_identity(self):
        problem = linear_additive(1.0, 0.0)
        still = type(problem)  # keep the dataclass type
        frozen = still(
            dim_state=1,
            dim_noise=1,
            drift=lambda x, y: np.zeros_like(x),
            diffusion=problem.diffusion,
            initial_state=problem.initial_state,
        )
        cfg = BeConfig(m=2)
        x = be_step(frozen, cfg, np.array([1.3]), np.array([0.0]), np.array([0.0]))
        assert x[0] == pytest.approx(1.3, abs=1e-14)

    def test_second_linear_step(self):
        problem = linear_additive(3.0, 1.0)
        cfg = BeConfig(m=2)
        x = be_step(problem, cfg, np.array([0.6]), np.array([1.0]), np.array([0.0]))
        assert x[0] == pytest.approx(0.44, abs=1e-12)

    def test_randomized_linear_closed_form(self):
        # oracle equivalence over 1e4 randomized parameter/input tuples
        rng = np.random.default_rng(23)
        for _ in range(10_000):
            theta1 = float(rng.uniform(0.1, 10.0))
            theta2 = float(rng.uniform(-5.0, 5.0))
            m = int(rng.integers(1, 64))
            x_prev = float(rng.uniform(-10.0, 10.0))
            y = float(rng.uniform(-10.0, 10.0))
            dB = float(rng.normal(0.0, 0.5))
            problem = linear_additive(theta1, theta2)
            cfg = BeConfig(m=m)
            got = be_step(problem, cfg, np.array([x_prev]), np.array([y]), np.array([dB]))
            want = (x_prev + dB + cfg.delta * theta2 * y) / (1.0 + cfg.delta * theta1)
            assert got[0] == pytest.approx(want, abs=1e-12)


class TestSimulateBe:
    def test_zero_noise_anchor(self):
        problem = linear_additive(3.0, 1.0)
        trajectory = simulate_be(problem, BeConfig(m=2), zero_noise_grid(2.0, 0.5), 2)
        assert trajectory.anchor(0)[0] == 1.0
        assert trajectory.anchor(1)[0] == pytest.approx(0.44, abs=1e-12)

    def test_constant_when_coefficients_vanish(self):
        problem = linear_additive(3.0, 1.0)
        frozen = type(problem)(
            dim_state=1,
            dim_noise=1,
            drift=lambda x, y: np.zeros_like(x),
            diffusion=lambda x, y: np.zeros(np.shape(x)[:-1] + (1, 1)),
            initial_state=[2.5],
        )
        grid = generate_path(5, 0, 3.0, 2.0**-3, 1)
        trajectory = simulate_be(frozen, BeConfig(m=8), grid, 3)
        assert np.all(trajectory.states == 2.5)

    def test_mean_multiplier_law(self):
        # zero-noise anchors follow x0 * mu_delta(1)^k
        for theta1, theta2, m in [(3.0, 1.0, 2), (3.0, 1.0, 16), (2.5, -1.0, 8)]:
            problem = linear_additive(theta1, theta2, x0=1.0)
            K = 6
            trajectory = simulate_be(problem, BeConfig(m=m), zero_noise_grid(float(K), 1.0 / m), K)
            mult = be_mean_multiplier(theta1, theta2, m)
            for k in range(K + 1):
                assert trajectory.anchor(k)[0] == pytest.approx(mult**k, rel=1e-10)

    def test_mean_multiplier_first_order_consistency(self):
        # mu_delta(1) -> mu(1) at rate O(delta)
        theta1, theta2 = 3.0, 1.0
        mu_cont = theta2 / theta1 + (1 - theta2 / theta1) * math.exp(-theta1)
        errors = [abs(be_mean_multiplier(theta1, theta2, m) - mu_cont) for m in (16, 32, 64, 128)]
        ratios = [a / b for a, b in zip(errors, errors[1:])]
        for ratio in ratios:
            assert ratio == pytest.approx(2.0, rel=0.2)

    def test_grid_not_coarsenable_rejected(self):
        problem = linear_additive(3.0, 1.0)
        grid = generate_path(0, 0, 2.0, 0.5, 1)
        with pytest.raises(ValueError):
            simulate_be(problem, BeConfig(m=8), grid, 2)  # delta finer than grid

    def test_horizon_too_short_rejected(self):
        problem = linear_additive(3.0, 1.0)
        grid = generate_path(0, 0, 2.0, 0.5, 1)
        with pytest.raises(ValueError):
            simulate_be(problem, BeConfig(m=2), grid, 4)


class TestSimulateEm:
    def test_pure_integration(self):
        problem = linear_additive(1.0, 0.0)
        pure = type(problem)(
            dim_state=1,
            dim_noise=1,
            drift=lambda x, y: np.zeros_like(x),
            diffusion=problem.diffusion,
            initial_state=[0.0],
        )
        grid = generate_path(8, 1, 2.0, 2.0**-2, 1)
        trajectory = simulate_em(pure, BeConfig(m=4), grid, 2)
        expected = np.concatenate([[0.0], np.cumsum(grid.increments[:, 0])])
        np.testing.assert_allclose(trajectory.states[:, 0], expected, rtol=0, atol=1e-15)

    def test_matches_exact_decay_at_small_step(self):
        problem = linear_additive(3.0, 0.0, x0=1.0)
        m = 256
        trajectory = simulate_em(problem, BeConfig(m=m), zero_noise_grid(1.0, 1.0 / m), 1)
        assert trajectory.anchor(1)[0] == pytest.approx(math.exp(-3.0), abs=5 * 3.0**2 / m)

    def test_cubic_blowup_raises(self):
        problem = cubic_multiplicative(1.0, 1.0, x0=10.0)
        try:
            simulate_em(problem, BeConfig(m=2), zero_noise_grid(4.0, 0.5), 4)
        except NonFiniteError as err:
            assert err.k is not None
        else:
            pytest.fail("explicit Euler should blow up on the stiff cubic problem")


class TestSimulateSsbe:
    def test_zero_noise_equals_be(self):
        problem = cubic_multiplicative(1.0, 1.0)
        grid = zero_noise_grid(2.0, 0.25)
        cfg = BeConfig(m=4)
        t_be = simulate_be(problem, cfg, grid, 2)
        t_ssbe = simulate_ssbe(problem, cfg, grid, 2)
        np.testing.assert_allclose(t_be.states, t_ssbe.states, rtol=0, atol=1e-12)

    def test_zero_drift_reduces_to_explicit(self):
        problem = cubic_multiplicative(1.0, 0.0)
        pure = type(problem)(
            dim_state=1,
            dim_noise=1,
            drift=lambda x, y: np.zeros_like(x),
            diffusion=problem.diffusion,
            initial_state=[1.0],
        )
        grid = generate_path(3, 2, 2.0, 2.0**-2, 1)
        cfg = BeConfig(m=4)
        t_ssbe = simulate_ssbe(pure, cfg, grid, 2)
        t_em = simulate_em(pure, cfg, grid, 2)
        np.testing.assert_allclose(t_ssbe.states, t_em.states, rtol=0, atol=1e-14)

    def test_self_convergence_on_cubic(self):
        # anchor(1) at coarse steps vs the 2^-11 run on the same 200 paths:
        # strong-error scale, shrinking as the coarse step refines
        from sdepca.brownian import coarsen_array

        problem = cubic_multiplicative(1.0, 1.0)
        incs = np.stack(
            [generate_path(31, i, 1.0, 2.0**-11, 1).increments for i in range(200)]
        )
        fine = run_scheme_batch(
            "ssbe", problem, BeConfig(m=2**11), incs, problem.initial_state, 1, record="final"
        )
        diffs = {}
        for m in (2**7, 2**9):
            coarse = coarsen_array(incs, 2**11 // m)
            run = run_scheme_batch(
                "ssbe", problem, BeConfig(m=m), coarse, problem.initial_state, 1, record="final"
            )
            diffs[m] = float(np.abs(fine.finals[:, 0] - run.finals[:, 0]).mean())
        assert diffs[2**9] < diffs[2**7]
        assert diffs[2**9] < 0.02


class TestBatchEngine:
    def test_batch_matches_per_path(self):
        problem = cubic_multiplicative(1.0, 1.0)
        cfg = BeConfig(m=8)
        grids = [generate_path(13, i, 3.0, 2.0**-3, 1) for i in range(5)]
        increments = np.stack([g.increments for g in grids])
        run = run_scheme_batch("be", problem, cfg, increments, problem.initial_state, 3, record="final")
        for i, grid in enumerate(grids):
            solo = simulate_be(problem, cfg, grid, 3)
            assert run.finals[i, 0] == solo.states[-1, 0]

    def test_failures_are_isolated(self):
        # explicit Euler: |x0| = 10 overflows the cubic, x0 = 0.1 is stable
        problem = cubic_multiplicative(1.0, 1.0)
        cfg = BeConfig(m=8)
        increments = np.zeros((3, 32, 1))
        x0 = np.array([[10.0], [0.1], [-10.0]])
        run = run_scheme_batch("em", problem, cfg, increments, x0, 4, record="final")
        failed_rows = {row for row, _, _, _ in run.failures}
        assert failed_rows == {0, 2}
        assert np.isfinite(run.finals[1, 0])
        assert run.ok.tolist() == [False, True, False]

    def test_anchor_record_shape(self):
        problem = linear_additive(3.0, 1.0)
        cfg = BeConfig(m=4)
        increments = np.zeros((2, 8, 1))
        run = run_scheme_batch("be", problem, cfg, increments, problem.initial_state, 2, record="anchors")
        assert run.anchors.shape == (3, 2, 1)
        assert np.all(run.anchors[0] == 1.0)

    def test_non_batchable_problem_matches_batchable(self):
        from sdepca.model import SdepcaProblem

        a, b = 1.0, 1.0
        single = SdepcaProblem(
            dim_state=1,
            dim_noise=1,
            drift=lambda x, y: np.array([-(x[0] ** 3) - 10.0 * x[0] + 2.0 * y[0] + 1.0]),
            diffusion=lambda x, y: np.array([[a * x[0] + b * y[0]]]),
            initial_state=[2.0],
            batchable=False,
        )
        batch = cubic_multiplicative(a, b)
        grid = generate_path(6, 0, 2.0, 2.0**-4, 1)
        cfg = BeConfig(m=16)
        t_single = simulate_be(single, cfg, grid, 2)
        t_batch = simulate_be(batch, cfg, grid, 2)
        np.testing.assert_allclose(t_single.states, t_batch.states, rtol=1e-12, atol=1e-14)
        # bisection fallback path with single-state coefficients
        step = be_step(
            single,
            BeConfig(m=4, newton_max_iter=1, fallback="bisection-1d"),
            np.array([2.0]),
            np.array([2.0]),
            np.array([0.3]),
        )
        assert np.isfinite(step[0])


class TestTrajectory:
    def test_csv_round_trip_exact(self, tmp_path):
        problem = linear_additive(3.0, 1.0)
        grid = generate_path(2, 7, 2.0, 2.0**-2, 1)
        trajectory = simulate_be(problem, BeConfig(m=4), grid, 2)
        target = tmp_path / "trajectory.csv"
        trajectory.to_csv(target)
        header = target.read_text().splitlines()[0]
        assert header == "t,x_0"
        data = np.loadtxt(target, delimiter=",", skiprows=1)
        np.testing.assert_array_equal(data[:, 1], trajectory.states[:, 0])
        np.testing.assert_array_equal(data[:, 0], trajectory.times())

    def test_rejects_non_finite_states(self):
        with pytest.raises(ValueError):
            Trajectory(states=np.array([[1.0], [np.inf]]), m=1)

    def test_anchor_bounds(self):
        trajectory = Trajectory(states=np.zeros((5, 1)), m=2)
        assert trajectory.n_anchors == 3
        with pytest.raises(IndexError):
            trajectory.anchor(3)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BeConfig(m=0)
        with pytest.raises(ValueError):
            BeConfig(m=2, newton_tol=0.0)
        with pytest.raises(ValueError):
            BeConfig(m=2, fallback="magic")
