"""Integrator tests built on scheme-exact recurrences.

The semi-implicit kinetic step has closed forms for frozen drifts: those
are reproduced here by hand and compared digit for digit where the scheme
admits it.
"""

import math

import numpy as np
import pytest

from kineticmf.drift import kernel
from kineticmf.phase_space import LeaderState, ParticleEnsemble
from kineticmf.sde import (
    STREAM_BROWNIAN,
    STREAM_INITIAL,
    BrownianPaths,
    SimConfig,
    doob_bound,
    doob_check,
    generate_brownian,
    path_rng,
    simulate_frozen,
    simulate_interacting,
)


def _cfg(**kw):
    base = dict(T=1.0, n_steps=8, N=4, sigma=0.0, seed=7, d=1)
    base.update(kw)
    return SimConfig(**base)


def _point_init(N, d, x=0.0, v=0.0):
    return ParticleEnsemble(np.full((N, d), x), np.full((N, d), v))


class TestConfig:
    def test_dt_and_grid(self):
        cfg = _cfg(T=2.0, n_steps=4)
        assert cfg.dt == 0.5
        np.testing.assert_array_equal(cfg.grid(), [0.0, 0.5, 1.0, 1.5, 2.0])

    @pytest.mark.parametrize("kw", [dict(T=0.0), dict(n_steps=0), dict(N=0),
                                    dict(sigma=-0.1), dict(d=0)])
    def test_invalid_configs_rejected(self, kw):
        with pytest.raises(ValueError):
            _cfg(**kw)


class TestRandomness:
    def test_path_rng_reproducible(self):
        a = path_rng(3, STREAM_BROWNIAN, 0).standard_normal(5)
        b = path_rng(3, STREAM_BROWNIAN, 0).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_do_not_collide(self):
        a = path_rng(3, STREAM_BROWNIAN, 0).standard_normal(5)
        b = path_rng(3, STREAM_INITIAL, 0).standard_normal(5)
        assert not np.array_equal(a, b)

    def test_paths_do_not_collide(self):
        a = path_rng(3, STREAM_BROWNIAN, 0).standard_normal(5)
        b = path_rng(3, STREAM_BROWNIAN, 1).standard_normal(5)
        assert not np.array_equal(a, b)

    def test_prefix_stability_in_population_size(self):
        """Adding particles must not disturb the existing paths."""
        small = generate_brownian(_cfg(N=4, sigma=1.0))
        large = generate_brownian(_cfg(N=8, sigma=1.0))
        np.testing.assert_array_equal(large.increments[:, :4, :],
                                      small.increments)

    def test_increments_scaled_by_sqrt_dt(self):
        cfg = _cfg(N=2000, n_steps=2, sigma=1.0)
        inc = generate_brownian(cfg).increments
        # Var of one increment is dt; loose MC window, tight enough to
        # catch a missing or squared scale factor.
        assert np.var(inc) == pytest.approx(cfg.dt, rel=0.1)

    def test_cumulative_starts_at_zero_and_sums(self):
        cfg = _cfg(N=3, n_steps=5, sigma=1.0)
        paths = generate_brownian(cfg)
        B = paths.cumulative()
        np.testing.assert_array_equal(B[0], np.zeros((3, 1)))
        np.testing.assert_allclose(B[-1], paths.increments.sum(axis=0),
                                   rtol=0, atol=0)

    def test_increments_are_read_only(self):
        paths = generate_brownian(_cfg(sigma=1.0))
        with pytest.raises(ValueError):
            paths.increments[0, 0, 0] = 1.0

    def test_shape_guard(self):
        with pytest.raises(ValueError):
            BrownianPaths(increments=np.zeros((3, 4)), seed=0)


class TestFrozenDrift:
    def test_ballistic_transport_is_exact(self):
        cfg = _cfg(N=5, n_steps=64, sigma=0.0)
        rng = np.random.default_rng(1)
        init = ParticleEnsemble(rng.standard_normal((5, 1)),
                                rng.standard_normal((5, 1)))
        flow = simulate_frozen(lambda t, X, V: 0.0, init, cfg,
                               generate_brownian(cfg))
        for k, t in enumerate(flow.times):
            np.testing.assert_allclose(flow.snapshots[k].X,
                                       init.X + t * init.V, atol=1e-12)
            np.testing.assert_array_equal(flow.snapshots[k].V, init.V)

    def test_constant_drift_closed_form(self):
        """x_M = x0 + v0 T + a T^2/2 + a T dt/2 under the kinetic step."""
        a, x0, v0 = 0.7, -0.3, 1.1
        cfg = _cfg(N=1, n_steps=10, sigma=0.0)
        init = _point_init(1, 1, x=x0, v=v0)
        flow = simulate_frozen(lambda t, X, V: a, init, cfg,
                               generate_brownian(cfg))
        T, dt = cfg.T, cfg.dt
        want = x0 + v0 * T + 0.5 * a * T**2 + 0.5 * a * T * dt
        assert flow.snapshots[-1].X[0, 0] == pytest.approx(want, rel=1e-13)

    def test_constant_drift_error_halves_with_dt(self):
        a = 1.3
        exact = 0.5 * a  # x(T) with x0 = v0 = 0, T = 1
        errs = []
        for n in (16, 32):
            cfg = _cfg(N=1, n_steps=n, sigma=0.0)
            flow = simulate_frozen(lambda t, X, V: a, _point_init(1, 1), cfg,
                                   generate_brownian(cfg))
            errs.append(abs(flow.snapshots[-1].X[0, 0] - exact))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=1e-9)

    def test_velocity_accumulates_exactly_the_noise(self):
        cfg = _cfg(N=6, n_steps=12, sigma=0.4)
        paths = generate_brownian(cfg)
        init = _point_init(6, 1, v=0.25)
        flow = simulate_frozen(lambda t, X, V: 0.0, init, cfg, paths)
        expect = init.V.copy()
        noise = math.sqrt(2.0 * cfg.sigma)
        for k in range(cfg.n_steps):
            expect = expect + noise * paths.increments[k]
            np.testing.assert_array_equal(flow.snapshots[k + 1].V, expect)

    def test_nonfinite_drift_names_step_and_particle(self):
        cfg = _cfg(N=4, n_steps=6)

        def bad(t, X, V):
            out = np.zeros_like(X)
            if t >= 0.5:
                out[2] = np.inf
            return out

        with pytest.raises(FloatingPointError, match=r"step 3.*particle 2"):
            simulate_frozen(bad, _point_init(4, 1), cfg, generate_brownian(cfg))

    def test_init_and_path_guards(self):
        cfg = _cfg(N=4)
        paths = generate_brownian(cfg)
        with pytest.raises(ValueError, match="initial ensemble"):
            simulate_frozen(lambda t, X, V: 0.0, _point_init(3, 1), cfg, paths)
        with pytest.raises(ValueError, match="not shaped"):
            simulate_frozen(lambda t, X, V: 0.0, _point_init(4, 1),
                            _cfg(N=4, n_steps=9), paths)

    def test_reusing_larger_path_array_is_allowed(self):
        # Common random numbers across population sizes: a paths object
        # generated for N = 8 drives an N = 4 run via its first columns.
        big = generate_brownian(_cfg(N=8, sigma=0.3))
        cfg = _cfg(N=4, sigma=0.3)
        small = generate_brownian(cfg)
        f1 = simulate_frozen(lambda t, X, V: 0.0, _point_init(4, 1), cfg, big)
        f2 = simulate_frozen(lambda t, X, V: 0.0, _point_init(4, 1), cfg, small)
        np.testing.assert_array_equal(f1.snapshots[-1].V, f2.snapshots[-1].V)


class TestInteracting:
    def test_reduces_to_frozen_without_kernels(self):
        cfg = _cfg(N=5, n_steps=10, sigma=0.6)
        paths = generate_brownian(cfg)
        rng = np.random.default_rng(3)
        init = ParticleEnsemble(rng.standard_normal((5, 1)),
                                rng.standard_normal((5, 1)))
        flow_i, leaders = simulate_interacting({}, None, init,
                                               LeaderState.empty(1), cfg, paths)
        flow_f = simulate_frozen(lambda t, X, V: 0.0, init, cfg, paths)
        for a, b in zip(flow_i.snapshots, flow_f.snapshots):
            np.testing.assert_array_equal(a.X, b.X)
            np.testing.assert_array_equal(a.V, b.V)
        assert leaders.m == 0

    def test_permutation_equivariance(self):
        cfg = _cfg(N=6, n_steps=8, sigma=0.2)
        paths = generate_brownian(cfg)
        rng = np.random.default_rng(4)
        init = ParticleEnsemble(rng.standard_normal((6, 1)),
                                rng.standard_normal((6, 1)))
        perm = rng.permutation(6)
        permuted_paths = BrownianPaths(
            increments=paths.increments[:, perm, :].copy(), seed=cfg.seed)
        ks = {"K11": kernel("bounded_alignment", d=1)}
        base, _ = simulate_interacting(ks, None, init, LeaderState.empty(1),
                                       cfg, paths)
        swapped, _ = simulate_interacting(ks, None, init.permuted(perm),
                                          LeaderState.empty(1), cfg,
                                          permuted_paths)
        np.testing.assert_allclose(swapped.snapshots[-1].X,
                                   base.snapshots[-1].X[perm], atol=1e-13)

    def test_leaders_static_without_drive(self):
        cfg = _cfg(N=2, n_steps=4)
        flow, lp = simulate_interacting({}, None, _point_init(2, 1),
                                        LeaderState([[2.0]], [[0.0]]), cfg,
                                        generate_brownian(cfg))
        np.testing.assert_array_equal(lp.Y, np.full((5, 1, 1), 2.0))
        np.testing.assert_array_equal(lp.W, np.zeros((5, 1, 1)))

    def test_leader_coupling_single_step_hand_value(self):
        cfg = SimConfig(T=0.5, n_steps=1, N=1, sigma=0.0, seed=0, d=1)
        ks = {"K12": kernel("bounded_attraction_position")}
        init = _point_init(1, 1, x=1.0, v=0.0)
        flow, lp = simulate_interacting(ks, None, init,
                                        LeaderState([[2.0]], [[0.0]]), cfg,
                                        generate_brownian(cfg))
        # drift = K12(2 - 1) = 0.5; v1 = 0.25, x1 = 1 + 0.25 * 0.5.
        assert flow.snapshots[1].V[0, 0] == pytest.approx(0.25)
        assert flow.snapshots[1].X[0, 0] == pytest.approx(1.125)

    def test_constant_control_moves_leader_linearly(self):
        cfg = _cfg(N=2, n_steps=10)
        c = np.array([[0.8]])
        flow, lp = simulate_interacting({}, lambda t, pre: c, _point_init(2, 1),
                                        LeaderState([[0.0]], [[0.0]]), cfg,
                                        generate_brownian(cfg))
        np.testing.assert_allclose(lp.Y[:, 0, 0], 0.8 * lp.times, atol=1e-12)
        # W is the evaluated right-hand side at every node, endpoints too.
        np.testing.assert_array_equal(lp.W, np.full((11, 1, 1), 0.8))

    def test_control_sees_growing_prefix(self):
        cfg = _cfg(N=2, n_steps=5)
        seen = []

        def spy(t, prefix):
            seen.append((float(t), len(prefix)))
            return np.zeros((1, 1))

        simulate_interacting({}, spy, _point_init(2, 1),
                             LeaderState([[0.0]], [[0.0]]), cfg,
                             generate_brownian(cfg))
        # One call per step plus the final-node evaluation for W.
        assert len(seen) == 6
        assert seen[0] == (0.0, 1)
        assert seen[-1] == (1.0, 6)
        assert all(n == k + 1 for k, (_, n) in enumerate(seen))

    def test_followers_drag_leader_through_k21(self):
        cfg = SimConfig(T=0.5, n_steps=1, N=2, sigma=0.0, seed=0, d=1)
        ks = {"K21": kernel("bounded_attraction_position")}
        init = _point_init(2, 1, x=1.0)
        _, lp = simulate_interacting(ks, None, init,
                                     LeaderState([[0.0]], [[0.0]]), cfg,
                                     generate_brownian(cfg))
        # rhs = K21(1 - 0) = 0.5, one Euler step of size 0.5.
        assert lp.Y[1, 0, 0] == pytest.approx(0.25)
        assert lp.W[0, 0, 0] == pytest.approx(0.5)

    def test_nonfinite_leader_state_detected(self):
        cfg = _cfg(N=2, n_steps=3)
        bad = lambda t, pre: np.array([[np.inf]])
        with pytest.raises(FloatingPointError, match="non-finite state"):
            simulate_interacting({}, bad, _point_init(2, 1),
                                 LeaderState([[0.0]], [[0.0]]), cfg,
                                 generate_brownian(cfg))


class TestDoob:
    def test_bound_hand_values(self):
        assert doob_bound(2.0, 1.0) == pytest.approx(8.0, rel=1e-12)
        # The constant scales like T^{p/2}.
        assert doob_bound(2.0, 4.0) == pytest.approx(32.0, rel=1e-12)

    def test_bound_needs_p_above_one(self):
        with pytest.raises(ValueError):
            doob_bound(1.0, 1.0)

    def test_small_monte_carlo_run_passes(self):
        chk = doob_check(2.0, 1.0, n_paths=400, n_steps=50, seed=5)
        assert chk.passed
        assert chk.estimate <= chk.bound
        # E sup |B|^2 is at least E |B(T)|^2 = T; guards against a
        # degenerate estimator that returns 0.
        assert chk.estimate > 0.5

    def test_check_is_deterministic(self):
        a = doob_check(2.0, 1.0, n_paths=100, n_steps=20, seed=9)
        b = doob_check(2.0, 1.0, n_paths=100, n_steps=20, seed=9)
        assert a.estimate == b.estimate
