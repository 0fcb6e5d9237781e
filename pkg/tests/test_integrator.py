import numpy as np
import pytest

from tetherquad.errors import ControlError, NumericalError
from tetherquad.integrator import (Command, FullState, IntegratorConfig, Trajectory, simulate,
                                   simulate_batch, step, zero_controller)
from tetherquad.manifold import E3, unit
from tetherquad.model import BodyState, ChainState, ControlInput, SystemParams
from tetherquad.verify import constraint_drift, energy_audit


def swing(n, rng):
    q = unit(rng.normal(size=(n, 3)))
    w = np.cross(q, rng.normal(size=(n, 3)))
    return FullState(ChainState(q, w), BodyState(Om=[0.4, -0.1, 0.9]))


def final_vector(tr):
    return np.concatenate([tr.q[-1].ravel(), tr.w[-1].ravel(), tr.R[-1].ravel(), tr.Om[-1]])


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(h=0.0), dict(h=0.5), dict(scheme="leapfrog"),
                                        dict(renormalize_every=-1)])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            IntegratorConfig(**kwargs)


class TestAccuracy:
    @pytest.mark.parametrize("scheme,expected", [("rk4_manifold", 4.0), ("euler_manifold", 1.0)])
    def test_convergence_order(self, rng, scheme, expected):
        p = SystemParams.benchmark(2)
        s0 = swing(2, rng)
        finals = [final_vector(simulate(p, s0, zero_controller(), IntegratorConfig(h=h, scheme=scheme),
                                        1.0)) for h in (0.002, 0.001, 0.0005)]
        order = np.log2(np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2]))
        assert abs(order - expected) < 0.3

    def test_energy_and_constraints(self, rng):
        p = SystemParams.benchmark(3)
        tr = simulate(p, swing(3, rng), zero_controller(), IntegratorConfig(h=1e-3), 2.0)
        assert energy_audit(p, tr) < 1e-6
        assert constraint_drift(tr) < 1e-12

    def test_without_renormalization_drift_is_small(self, rng):
        p = SystemParams.benchmark(2)
        tr = simulate(p, swing(2, rng), zero_controller(),
                      IntegratorConfig(h=1e-3, renormalize_every=0), 1.0)
        assert constraint_drift(tr) < 1e-9

    def test_free_rigid_body_momentum(self, rng):
        p = SystemParams.benchmark(1)
        tr = simulate(p, swing(1, rng), zero_controller(), IntegratorConfig(h=1e-3), 2.0)
        # inertial angular momentum R J Om is constant without a moment
        L = np.einsum("kij,jl,kl->ki", tr.R, p.J, tr.Om)
        np.testing.assert_allclose(L, np.broadcast_to(L[0], L.shape), atol=1e-10)


class TestStepping:
    def test_step_matches_simulate(self, rng):
        p = SystemParams.benchmark(2)
        s0 = swing(2, rng)
        inp = ControlInput(12.0, [0.001, 0.0, -0.002])
        s1 = step(p, s0, inp, IntegratorConfig(h=1e-3))
        tr = simulate(p, s0, lambda t, s: Command(inp), IntegratorConfig(h=1e-3), 1e-3)
        np.testing.assert_array_equal(s1.chain.q, tr.q[-1])
        np.testing.assert_array_equal(s1.body.R, tr.R[-1])
        assert s1.t == pytest.approx(1e-3)

    def test_batch_matches_single(self, rng):
        p = SystemParams.benchmark(3)
        states = [swing(3, rng) for _ in range(3)]
        u = np.array([0.5, -0.3, -10.0])
        q0 = np.array([s.chain.q for s in states])
        w0 = np.array([s.chain.w for s in states])
        cfg = IntegratorConfig(h=2e-3)
        _, qs, ws, ok = simulate_batch(p, q0, w0, lambda t, q, w: np.tile(u, (3, 1)), cfg, 0.5)
        assert ok.all()
        for b, s in enumerate(states):
            s = FullState(s.chain)
            tr = simulate(p, s, lambda t, st: Command(u), cfg, 0.5)
            np.testing.assert_allclose(qs[-1, b], tr.q[-1], atol=1e-13)
            np.testing.assert_allclose(ws[-1, b], tr.w[-1], atol=1e-12)

    def test_batch_flags_divergence(self):
        p = SystemParams.benchmark(1)
        q0 = np.array([[[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]]])
        law = lambda t, q, w: np.array([[0.0, 0.0, 0.0], [1e7, 0.0, 0.0]])
        _, _, _, ok = simulate_batch(p, q0, np.zeros_like(q0), law, IntegratorConfig(h=1e-3), 0.5)
        np.testing.assert_array_equal(ok, [True, False])

    def test_simplified_input_records_thrust(self):
        p = SystemParams.benchmark(1)
        u = -p.m_T * p.g * E3
        tr = simulate(p, FullState(ChainState.hanging(1)), lambda t, s: Command(u),
                      IntegratorConfig(h=1e-3), 0.01)
        assert tr.is_simplified
        np.testing.assert_allclose(tr.u, np.tile(u, (len(tr), 1)))
        np.testing.assert_allclose(tr.q[-1, 0], -E3, atol=1e-14)


class TestFailures:
    def test_runaway_raises_with_time(self):
        p = SystemParams.benchmark(1)
        s0 = FullState(ChainState([[1.0, 0.0, 0.0]], [[0.0, 0.0, 0.0]]))
        with pytest.raises(NumericalError) as info:
            simulate(p, s0, lambda t, s: Command(np.array([0.0, 0.0, 1e7])),
                     IntegratorConfig(h=1e-3), 1.0)
        assert info.value.t is not None and info.value.t > 0

    def test_controller_errors_carry_time(self):
        p = SystemParams.benchmark(1)

        def bad(t, s):
            if t > 0.005:
                raise ValueError("boom")
            return Command(np.zeros(3))

        with pytest.raises(ControlError) as info:
            simulate(p, FullState(ChainState.hanging(1)), bad, IntegratorConfig(h=1e-3), 0.1)
        assert info.value.t == pytest.approx(0.006)

    def test_rejects_invalid_initial_state(self):
        p = SystemParams.benchmark(1)
        with pytest.raises(ValueError):
            simulate(p, FullState(ChainState([[2.0, 0.0, 0.0]], [[0.0, 0.0, 0.0]])),
                     None, IntegratorConfig(), 0.1)


class TestTrajectory:
    def test_select_window_subsample(self, rng):
        p = SystemParams.benchmark(1)
        tr = simulate(p, swing(1, rng), zero_controller(), IntegratorConfig(h=1e-3), 0.1)
        assert len(tr) == 101
        assert len(tr.subsample(10)) == 11
        w = tr.window(0.05)
        assert w.t[0] == pytest.approx(0.05) and len(w) == 51
        assert tr.step == pytest.approx(1e-3)
        assert isinstance(tr.select(tr.t < 0.01), Trajectory)
