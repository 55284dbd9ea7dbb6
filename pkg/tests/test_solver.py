import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ksprofile.errors import PositivityViolation, RangeViolation, ValidationError, WrongVerdict
from ksprofile.grid import build_graded_grid
from ksprofile.report import RunReport, Verdict
from ksprofile.solver import (
    FieldState,
    KineticFunctions,
    MonitorSpec,
    RegularizationParams,
    SolverConfig,
    check_kinetic_bounds,
    estimate_blowup_time,
    prototype_kinetics,
    replay,
    run,
    step,
    tabulated_kinetics,
)


def linear_kinetics(D=1.0):
    return KineticFunctions(D=lambda u, v: np.full_like(u, D), S=lambda u, v: np.zeros_like(u),
                            g=lambda u: u, m=1.0, q=1.0, K_D1=D, K_D2=D, K_S=0.0, K_g=1.0)


def bump(grid, mass, width):
    u = np.exp(-((grid.centers / width) ** 2))
    return u * (mass / grid.mass(u))


class TestKinetics:
    def test_prototype_pointwise(self):
        kin = prototype_kinetics(2.5, 0.5)
        u = np.linspace(0, 10, 50)
        np.testing.assert_allclose(kin.D(u, u), (u + 1) ** 1.5)
        np.testing.assert_allclose(kin.S(u, u), u * (u + 1) ** -0.5)
        np.testing.assert_array_equal(kin.g(u), u)

    @pytest.mark.parametrize("m,q,eta", [(1, 1, None), (2, 1, None), (3, 2, 0.5), (1.5, 0.5, 2.0)])
    def test_declared_bounds(self, m, q, eta):
        kin = prototype_kinetics(m, q, eta)
        assert check_kinetic_bounds(kin, samples=2000) == {"D_lower": 0, "D_upper": 0, "S_upper": 0, "g_upper": 0}

    def test_lower_bound_fails_below_one(self):
        # (u+1)^(m-1) stays bounded while u^(m-1) blows up as u -> 0
        counts = check_kinetic_bounds(prototype_kinetics(0.5, 1.5), samples=2000)
        assert counts["D_lower"] > 0
        assert counts["D_upper"] == counts["S_upper"] == counts["g_upper"] == 0

    def test_floor_conflicts_below_one(self):
        # a floor eta cannot sit under K_D2 max(u, 1)^(m-1) -> 0 when m < 1
        counts = check_kinetic_bounds(prototype_kinetics(0.5, 1.5, eta=0.3), samples=2000)
        assert counts["D_upper"] > 0

    def test_tabulated(self):
        u = np.logspace(-3, 3, 200)
        kin = tabulated_kinetics(u, (u + 1) ** 0.5, u, m=1.5, q=1, K_D1=1, K_D2=2**0.5, K_S=1)
        np.testing.assert_allclose(kin.D(np.array([1.0]), 0), [2**0.5], rtol=1e-3)
        assert sum(check_kinetic_bounds(kin, 1e-3, 1e3).values()) == 0

    def test_drift_factor_at_zero(self):
        kin = prototype_kinetics(1, 1)
        assert np.all(np.isfinite(kin.drift_factor(np.zeros(3), np.zeros(3))))


class TestTruncation:
    @given(eps=st.floats(1e-6, 0.99), frac=st.floats(0, 1))
    def test_identity_below_cap(self, eps, frac):
        G = RegularizationParams(eps)
        xi = frac / eps
        assert G(xi) == xi

    @given(eps=st.floats(1e-6, 0.99), xi=st.floats(0, 1e12))
    def test_bounds(self, eps, xi):
        val = float(RegularizationParams(eps)(xi))
        assert 0 <= val <= 2 / eps

    def test_plateau_and_smoothness(self):
        G = RegularizationParams(0.1)
        assert G(20.0) == pytest.approx(15.0) and G(1e6) == pytest.approx(15.0)
        xi = np.linspace(0, 30, 30001)
        vals = G(xi)
        assert np.all(np.diff(vals) >= 0)
        slope = np.diff(vals) / np.diff(xi)
        assert np.abs(np.diff(slope)).max() < 1e-2

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.5])
    def test_invalid(self, eps):
        with pytest.raises(ValidationError):
            RegularizationParams(eps)


class TestStep:
    def test_decoupled_oracle(self):
        grid = build_graded_grid(1.0, 128)
        c, vbar, dt = 2.0, 0.5, 1e-4
        errs = []

        def check(s, _):
            errs.append(max(np.abs(s.v - (c + (vbar - c) * math.exp(-s.t))).max(), np.abs(s.u - c).max()))
        final = replay(grid, linear_kinetics(), None, FieldState(np.full(128, c), np.full(128, vbar)),
                       [dt] * 10_000, observer=check)
        assert final.t == pytest.approx(1.0)
        assert max(errs) < 1e-6

    def test_zero_state(self):
        grid = build_graded_grid(1.0, 64, 1.05)
        s = FieldState(np.zeros(64), np.zeros(64))
        for _ in range(20):
            s = step(grid, prototype_kinetics(1, 1), None, s, 1e-3)
        assert not s.u.any() and not s.v.any()

    def test_pure_diffusion(self):
        grid = build_graded_grid(1.0, 64, 1.02)
        u0 = 1.0 + np.random.default_rng(4).random(64)
        mass0 = grid.mass(u0)
        final = replay(grid, linear_kinetics(), None, FieldState(u0, np.zeros(64)), [1e-3] * 10_000)
        assert abs(grid.mass(final.u) - mass0) / mass0 < 1e-12
        np.testing.assert_allclose(final.u, mass0 / grid.volumes.sum(), rtol=1e-8)

    def test_maximum_principle(self):
        grid = build_graded_grid(1.0, 64, 1.03)
        kin = prototype_kinetics(2, 1, eta=0.5)
        kin = KineticFunctions(D=kin.D, S=lambda u, v: np.zeros_like(u), g=kin.g, m=2, q=1,
                               K_D1=1, K_D2=2, K_S=0, K_g=1)
        u = 5 * np.exp(-((grid.centers - 0.4) / 0.1) ** 2) + 0.1
        s = FieldState(u, np.zeros(64))
        for _ in range(200):
            new = step(grid, kin, None, s, 2e-4)
            assert new.u.max() <= s.u.max() * (1 + 1e-12)
            assert new.u.min() >= s.u.min() * (1 - 1e-12)
            s = new

    def test_bad_dt(self):
        grid = build_graded_grid(1.0, 16)
        with pytest.raises(RangeViolation):
            step(grid, linear_kinetics(), None, FieldState(np.ones(16), np.ones(16)), 0.0)

    def test_positivity_budget(self):
        grid = build_graded_grid(1.0, 64)
        u = bump(grid, 10, 0.1)
        v = 50 * np.exp(-((grid.centers / 0.05) ** 2))
        with pytest.raises(PositivityViolation):
            step(grid, prototype_kinetics(1, 1), None, FieldState(u, v), 1.0, positivity_budget=1e-30)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"dt_min": 1e-3, "dt_init": 1e-4}, {"cfl_safety": 1.0}, {"t_end": 0.0},
        {"picard_iters": 6}, {"snapshot_factor": 1.0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            SolverConfig(**kw).validate()

    def test_threshold_vs_data(self):
        with pytest.raises(ValidationError):
            SolverConfig(blowup_threshold=10).validate(initial_sup=20)


class TestRun:
    def test_bounded_regime(self):
        grid = build_graded_grid(1.0, 128, 1.01)
        rep = run(grid, prototype_kinetics(2, 1), None, FieldState(bump(grid, 2, 0.3), np.zeros(128)),
                  SolverConfig(t_end=0.5, dt_init=1e-5), MonitorSpec(alphas=(1.0,)))
        assert rep.verdict is Verdict.COMPLETED
        sup = rep.column("sup_u")
        assert sup.max() < 10 * sup[0]
        assert np.all(np.diff(rep.column("t")) > 0)
        assert rep.stats["max_mass_drift"] < 1e-10

    def test_blowup_and_replay(self):
        grid = build_graded_grid(1.0, 512, 1.01)
        kin = prototype_kinetics(1, 1)
        init = FieldState(bump(grid, 10, 0.5), np.zeros(512))
        dts, states = [], []
        rep = run(grid, kin, None, init, SolverConfig(), observer=lambda s, dt: (dts.append(dt), states.append(s)))
        assert rep.verdict is Verdict.BLOWN_UP
        assert rep.final.sup >= 1e10
        assert rep.stats["max_mass_drift"] < 1e-10
        assert rep.stats["clipped_u"] < 1e-8 * rep.stats["initial_mass"]
        assert all(s.u.min() >= 0 and s.v.min() >= 0 for s in states)
        t_low, t_high = rep.bracket
        assert t_low < t_high
        again = replay(grid, kin, None, init, dts)
        np.testing.assert_array_equal(again.u, states[-1].u)

    def test_regularized_agreement(self):
        grid = build_graded_grid(1.0, 128, 1.01)
        kin = prototype_kinetics(1, 1)
        init = FieldState(bump(grid, 3, 0.3), np.zeros(128))
        cfg = SolverConfig(t_end=0.05)
        plain = run(grid, kin, None, init, cfg)
        reg = run(grid, kin, RegularizationParams(1 / (2 * plain.stats["max_sup"])), init, cfg)
        np.testing.assert_array_equal(plain.final.u, reg.final.u)

    def test_truncation_changes_dynamics(self):
        grid = build_graded_grid(1.0, 128, 1.01)
        kin = prototype_kinetics(1, 1)
        init = FieldState(bump(grid, 3, 0.3), np.zeros(128))
        cfg = SolverConfig(t_end=0.05)
        plain = run(grid, kin, None, init, cfg)
        reg = run(grid, kin, RegularizationParams(2 / plain.stats["max_sup"]), init, cfg)
        assert np.abs(plain.final.u - reg.final.u).max() > 1e-6


def synthetic_report(ts, dt_min=1e-16, verdict=Verdict.BLOWN_UP):
    ts = list(ts)
    return RunReport(verdict=verdict, reason="synthetic", grid=None, series={"t": ts}, snapshots=[],
                     dt_tail=list(np.diff(ts)), dt_min=dt_min)


class TestBracket:
    def test_synthetic_singularity(self):
        # sup = (1 - t)^-1 sampled at t_j = 1 - 2^-j until it exceeds 1e10
        j_max = math.ceil(math.log2(1e10))
        t_low, t_high = estimate_blowup_time(synthetic_report(1 - 2.0 ** -j for j in range(j_max + 1)))
        assert t_low < 1 <= t_high
        assert t_high - t_low < 1e-3

    def test_wrong_verdict(self):
        with pytest.raises(WrongVerdict):
            estimate_blowup_time(synthetic_report([0, 1], verdict=Verdict.COMPLETED))

    def test_stalled_tail(self):
        k, dt_min = 10, 1e-16
        ts = 0.5 + dt_min * np.arange(k + 1)
        t_low, t_high = estimate_blowup_time(synthetic_report(ts, dt_min))
        assert t_high - t_low >= k * dt_min * (1 - 1e-9)
