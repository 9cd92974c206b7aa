import numpy as np
import pytest
from scipy.linalg import expm

from shsnet.markov import SwitchSignal
from shsnet.model import LinearSubsystem, MarkovChain, SwitchedNetwork, TopologySet, build_paper_example
from shsnet.refine import interface_concrete
from shsnet.rng import substream
from shsnet.sim import (LinearChannels, SimulationError, grid_steps, integrate, joint_channels,
                        sample_noise, sample_noise_bulk, simulate, simulate_coupled, simulate_coupled_batch,
                        stack_noise)


def scalar_net(a=0.0, g=0.0, r=0.0, lam=0.0):
    s = LinearSubsystem(A=[[a]], B=[[1.0]], D=[[1.0]], C1=[[1.0]], C2=[[1.0]],
                        diffusion=((np.array([[g]]),) if g else ()),
                        resets=((np.array([[r]]),) if lam else ()),
                        rates=np.array([lam]) if lam else np.zeros(0))
    return SwitchedNetwork([s], TopologySet((np.zeros((1, 1)),)), MarkovChain(np.zeros((1, 1))))


def test_grid_steps():
    assert grid_steps(1e-3, 5.0) == 5000
    assert grid_steps(0.1, 0.0) == 0
    with pytest.raises(ValueError):
        grid_steps(0.3, 1.0)


def test_constant_without_dynamics(rng):
    net = scalar_net()
    tr = simulate(net, None, [1.7], SwitchSignal.constant(1, 1.0), 0.01, 1.0, rng)
    np.testing.assert_array_equal(tr.states, 1.7)


def test_matrix_exponential_oracle():
    sc = build_paper_example(N=3, n_i=5)
    noiseless = SwitchedNetwork(
        [LinearSubsystem(np.zeros((5, 5)), np.eye(5), np.eye(5), s.C1, np.eye(5)) for s in sc.concrete.subsystems],
        sc.concrete.topology, sc.concrete.chain)
    a = np.linspace(-2, 3, 15)
    tr = simulate(noiseless, None, a, SwitchSignal.constant(1, 1.0), 1e-4, 1.0, np.random.default_rng(0))
    exact = expm(sc.concrete.topology[1]) @ a
    assert np.max(np.abs(tr.states[-1] - exact)) <= 1e-3


def test_diffusion_second_moment():
    varpi, runs = 0.3, 100_000
    ch = LinearChannels([np.array([[varpi]])], [], [])
    noise = sample_noise_bulk(1, np.zeros(0), 0.01, 100, runs, substream(3, "ito"))
    X = integrate(np.ones((runs, 1)), lambda X, m, U: np.zeros_like(X), ch, noise, 0.01, 100)
    x2 = X[:, -1, 0] ** 2
    assert abs(x2.mean() - np.exp(varpi ** 2)) <= 3 * x2.std() / np.sqrt(runs)


def test_jump_first_moment():
    tau, lam, runs = 0.03, 10.0, 50_000
    ch = LinearChannels([], [np.array([[tau]])], [lam])
    noise = sample_noise_bulk(0, np.array([lam]), 0.05, 20, runs, substream(4, "jumps"))
    X = integrate(np.ones((runs, 1)), lambda X, m, U: np.zeros_like(X), ch, noise, 0.05, 20)
    x = X[:, -1, 0]
    assert abs(x.mean() - np.exp(lam * tau)) <= 3 * x.std() / np.sqrt(runs)


def test_noise_record_structure():
    rec = sample_noise(2, np.array([5.0, 1.0]), 0.1, 30, np.random.default_rng(1))
    assert np.all(np.diff(rec.times) >= 0)
    np.testing.assert_allclose(rec.times[rec.grid_index], np.arange(31) * 0.1)
    for c in (0, 1):
        assert np.all(np.diff(rec.jump_times(c)) > 0)
    assert rec.dW.shape == (rec.times.size - 1, 2)


def test_guard_aborts():
    net = scalar_net(a=100.0)
    with pytest.raises(SimulationError) as exc:
        simulate(net, None, [1.0], SwitchSignal.constant(1, 1.0), 0.01, 1.0, np.random.default_rng(0))
    assert exc.value.step > 0


def test_outputs_follow_states(paper, rng):
    sig = SwitchSignal(1, np.array([0.05]), np.array([2]), 0.1)
    tr = simulate(paper.concrete, None, paper.simulation.a, sig, 1e-3, 0.1, rng, record_internal=True)
    np.testing.assert_array_equal(tr.outputs, tr.states @ paper.concrete.stacked("C1").T)
    np.testing.assert_array_equal(tr.internal, tr.states)
    assert tr.modes[0] == 1 and tr.modes[-1] == 2


def _example_interface(x, xh, uh):
    return interface_concrete(x, xh, uh, 1.0, [50, 50, 50])


def test_zero_error_coupling_frozen_mode(paper):
    ahat = paper.simulation.ahat
    a = np.repeat(ahat, 50)
    tr, trh = simulate_coupled(paper.concrete, paper.abstract, _example_interface, None, a, ahat,
                               SwitchSignal.constant(1, 1.0), 1e-3, 1.0, substream(0, "zero"))
    assert np.max(np.abs(tr.outputs - trh.outputs)) <= 1e-9


def test_interface_at_first_step(paper):
    x = np.arange(150.0)
    xh = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(_example_interface(x, xh, np.zeros(3)), -(x - np.repeat(xh, 50)))


def test_batch_matches_single(paper):
    sig = SwitchSignal(1, np.array([0.02]), np.array([2]), 0.05)
    ch = joint_channels(paper.concrete, paper.abstract)
    rec = sample_noise(ch.n_brownian, ch.rates, 1e-3, 50, substream(9, "b"))
    Y, Yh = simulate_coupled_batch(paper.concrete, paper.abstract, _example_interface, paper.simulation.a,
                                   paper.simulation.ahat, [sig], 1e-3, 0.05, stack_noise([rec]))
    tr, trh = simulate_coupled(paper.concrete, paper.abstract, _example_interface, None, paper.simulation.a,
                               paper.simulation.ahat, sig, 1e-3, 0.05, substream(9, "b"))
    np.testing.assert_allclose(Y[0], tr.outputs, atol=1e-12)
    np.testing.assert_allclose(Yh[0], trh.outputs, atol=1e-12)


def test_joint_channels_reject_mismatch():
    with pytest.raises(ValueError, match="share"):
        joint_channels(scalar_net(g=0.3, r=0.1, lam=2.0), scalar_net(g=0.3, r=0.1, lam=3.0))
    with pytest.raises(ValueError, match="share"):
        joint_channels(scalar_net(g=0.3), scalar_net())


def test_refinement_convergence():
    net = scalar_net(a=-1.0)

    def end(dt):
        return simulate(net, lambda t, x: np.array([np.sin(t)]), [1.0], SwitchSignal.constant(1, 1.0),
                        dt, 1.0, np.random.default_rng(0)).states[-1, 0]

    ref = end(0.25e-3)
    e1, e2 = abs(end(2e-3) - ref), abs(end(1e-3) - ref)
    # first-order scheme: error against the fine run scales like dt - dt_ref
    assert e2 < e1 and e1 / e2 == pytest.approx((2e-3 - 0.25e-3) / (1e-3 - 0.25e-3), rel=0.2)


def test_trajectory_csv(tmp_path, paper, rng):
    tr = simulate(paper.concrete, None, paper.simulation.a, SwitchSignal.constant(1, 0.01), 1e-3, 0.01, rng)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "time,mode,y1,y2,y3" and len(lines) == 12
