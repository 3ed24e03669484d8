"""Tests for the Frank-Wolfe NPMLE solver."""

import math

import numpy as np
import pytest

from countsmooth.mixture import (
    CountsVector,
    InfeasiblePriorError,
    MixingDistribution,
    gradient_D,
    log_likelihood,
    mixture_pmf,
)
from countsmooth.solver import (
    SolverConfig,
    build_grid,
    refit_weights,
    solve_npmle,
    solve_root_example,
)


def one_heavy_counts(m: int, k: int) -> CountsVector:
    return CountsVector([0] * (k - 1) + [m])


def closed_form_two_atom(m: int, k: int) -> MixingDistribution:
    b = solve_root_example(m)
    eps = 1.0 / (k * (1.0 - math.exp(-b)))
    return MixingDistribution(atoms=np.array([0.0, b]), weights=np.array([1 - eps, eps]))


class TestRootExample:
    def test_m2_bracket_and_residual(self):
        b = solve_root_example(2)
        assert 1.0 < b < 2.0
        assert (2 - b) * math.expm1(b) - b == pytest.approx(0.0, abs=1e-10)

    def test_m3_bracket(self):
        b = solve_root_example(3)
        assert 2.0 < b < 3.0
        assert (3 - b) * math.expm1(b) - b == pytest.approx(0.0, abs=1e-9)

    def test_m1_rejected(self):
        with pytest.raises(ValueError):
            solve_root_example(1)


class TestBuildGrid:
    def test_default_span_and_size(self):
        prof = CountsVector([0, 0, 0, 4]).profile()
        grid = build_grid(prof)
        assert grid[0] == 0.0 and grid[-1] == 4.0
        assert grid.size == 40
        assert np.allclose(np.diff(grid), grid[1] - grid[0])

    def test_single_value_counts(self):
        prof = CountsVector([7, 7, 7]).profile()
        np.testing.assert_array_equal(build_grid(prof), [7.0])

    def test_all_zero_counts(self):
        prof = CountsVector([0, 0]).profile()
        np.testing.assert_array_equal(build_grid(prof), [0.0])

    def test_cap_applies(self):
        prof = CountsVector([0, 10**6]).profile()
        grid = build_grid(prof)
        assert grid.size == 100_000
        assert grid[-1] == 1e6


def simplex_projection(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sorting method)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    rho = idx[cond][-1]
    tau = css[cond][-1] / rho
    return np.maximum(v - tau, 0.0)


def projected_gradient_weights(atoms, profile, iters=40_000, lr=0.05):
    """Independent simplex optimizer for the weight subproblem (test oracle)."""
    from countsmooth.mixture import poisson_log_pmf

    ys = profile.distinct_counts
    phis = profile.multiplicities.astype(float)
    log_pmf = poisson_log_pmf(np.asarray(atoms, float)[:, None], ys[None, :])
    pmf = np.exp(log_pmf)
    w = np.full(len(atoms), 1.0 / len(atoms))
    obj = -np.inf
    for _ in range(iters):
        f = w @ pmf
        grad = pmf @ (phis / f)
        w_new = simplex_projection(w + lr * grad / phis.sum())
        f_new = w_new @ pmf
        if np.any(f_new <= 0):
            lr *= 0.5
            continue
        new_obj = float(phis @ np.log(f_new))
        if new_obj < obj:
            lr *= 0.5
            continue
        if abs(new_obj - obj) < 1e-14 * max(1.0, abs(new_obj)):
            w = w_new
            break
        w, obj = w_new, new_obj
    return w


class TestRefitWeights:
    def test_single_atom_gets_weight_one(self):
        prof = CountsVector([2, 3, 4]).profile()
        G = refit_weights([3.0], prof)
        assert G.n_atoms == 1
        assert G.weights[0] == 1.0

    def test_one_heavy_closed_form_weight(self):
        # With support {0, b*}, the optimal weight on b* is 1/(k(1-e^-b*)).
        m, k = 3, 10
        b = solve_root_example(m)
        prof = one_heavy_counts(m, k).profile()
        G = refit_weights([0.0, b], prof)
        eps = 1.0 / (k * (1.0 - math.exp(-b)))
        assert G.weights[-1] == pytest.approx(eps, abs=1e-8)

    def test_matches_projected_gradient_oracle(self):
        rng = np.random.default_rng(5)
        cfg = SolverConfig(weight_refit_tol=1e-14, weight_refit_max_iter=100_000)
        for _ in range(6):
            counts = CountsVector(rng.integers(0, 9, size=25))
            prof = counts.profile()
            atoms = np.sort(rng.uniform(0.05, 8.0, size=3))
            ours = refit_weights(atoms, prof, cfg)
            ours_obj = log_likelihood(ours, prof)
            w_ref = projected_gradient_weights(atoms, prof)
            keep = w_ref > 0
            ref = MixingDistribution.from_unnormalized(np.asarray(atoms)[keep], w_ref[keep])
            ref_obj = log_likelihood(ref, prof)
            assert ours_obj >= ref_obj - 1e-8

    def test_infeasible_atoms_raise(self):
        prof = CountsVector([0, 2]).profile()
        with pytest.raises(InfeasiblePriorError):
            refit_weights([0.0], prof)


class TestSolveNpmle:
    def test_binary_counts_point_mass_at_mean(self):
        counts = CountsVector([0, 1, 0, 1, 1, 0, 0, 0, 0, 1])
        report = solve_npmle(counts.profile())
        assert report.converged
        assert report.solution.n_atoms == 1
        assert report.solution.atoms[0] == pytest.approx(0.4, abs=1e-9)

    @pytest.mark.parametrize("m,k", [(2, 4), (3, 12), (5, 25)])
    def test_one_heavy_two_atom_solution(self, m, k):
        cfg = SolverConfig(grid_multiplier=1000, kkt_tol=1e-7)
        report = solve_npmle(one_heavy_counts(m, k).profile(), cfg)
        truth = closed_form_two_atom(m, k)
        sol = report.solution
        assert sol.n_atoms == 2
        assert sol.atoms[0] == pytest.approx(0.0, abs=1e-6)
        assert sol.atoms[1] == pytest.approx(truth.atoms[1], abs=5e-3)
        assert sol.weights[1] == pytest.approx(truth.weights[1], abs=1e-3)
        prof = one_heavy_counts(m, k).profile()
        assert log_likelihood(sol, prof) == pytest.approx(
            log_likelihood(truth, prof), abs=1e-6
        )

    def test_gradient_one_at_atoms(self):
        rng = np.random.default_rng(8)
        counts = CountsVector(rng.poisson(3.0, size=80))
        prof = counts.profile()
        report = solve_npmle(prof)
        assert report.converged
        D = gradient_D(report.solution, prof, report.solution.atoms)
        assert np.all(np.abs(D - 1.0) <= 1e-5)

    def test_trace_monotone_and_support_bound(self):
        rng = np.random.default_rng(10)
        for _ in range(8):
            counts = CountsVector(rng.poisson(rng.uniform(0.5, 20.0), size=60))
            prof = counts.profile()
            report = solve_npmle(prof)
            trace = np.array(report.log_likelihood_trace)
            assert np.all(np.diff(trace) >= 0)
            assert report.solution.n_atoms <= len(prof.entries)
            assert report.solution.atoms.min() >= prof.min_count - 1e-9
            assert report.solution.atoms.max() <= prof.max_count + 1e-9

    def test_converged_flag_matches_certificate(self):
        counts = CountsVector([0, 1, 2, 5, 9, 2, 1, 0, 0, 3])
        report = solve_npmle(counts.profile())
        assert report.converged == (report.max_gradient <= 1 + SolverConfig().kkt_tol)

    def test_all_zero_counts(self):
        report = solve_npmle(CountsVector([0, 0, 0]).profile())
        assert report.converged
        assert report.solution.n_atoms == 1
        assert report.solution.atoms[0] == 0.0

    def test_deterministic_reports(self):
        counts = CountsVector(np.random.default_rng(2).poisson(4.0, size=100))
        prof = counts.profile()
        r1 = solve_npmle(prof)
        r2 = solve_npmle(prof)
        np.testing.assert_array_equal(r1.solution.atoms, r2.solution.atoms)
        np.testing.assert_array_equal(r1.solution.weights, r2.solution.weights)
        assert r1.final_log_likelihood == r2.final_log_likelihood
        assert r1.log_likelihood_trace == r2.log_likelihood_trace
        assert r1.max_gradient == r2.max_gradient

    def test_density_floor_holds_on_typical_data(self):
        rng = np.random.default_rng(21)
        counts = CountsVector(rng.poisson(5.0, size=200))
        prof = counts.profile()
        report = solve_npmle(prof)
        assert report.converged
        k = prof.k
        for y in prof.distinct_counts:
            f = mixture_pmf(report.solution, int(y))
            assert f >= 0.01 / (k * math.sqrt(y + 1.0))


class TestSolverConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SolverConfig(grid_multiplier=0)
        with pytest.raises(ValueError):
            SolverConfig(kkt_tol=0.0)
        with pytest.raises(ValueError):
            SolverConfig(max_fw_iters=0)
