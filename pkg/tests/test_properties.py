import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from shsnet.bounds import bound_curve
from shsnet.certify import lgen_quadratic
from shsnet.markov import sample_switch_signal
from shsnet.model import MarkovChain, SimulationCertificate
from shsnet.refine import interface_concrete
from shsnet.synth import UniformGrid, build_symbolic_model

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec = lambda n: arrays(float, n, elements=finite)
fast = settings(max_examples=60, deadline=None)


@fast
@given(vec(6), vec(2), vec(2), vec(6), vec(2), vec(2), st.floats(0.1, 5))
def test_interface_is_affine(x1, xh1, uh1, x2, xh2, uh2, chi):
    sizes = [3, 3]
    lhs = interface_concrete(x1 + x2, xh1 + xh2, uh1 + uh2, chi, sizes)
    rhs = interface_concrete(x1, xh1, uh1, chi, sizes) + interface_concrete(x2, xh2, uh2, chi, sizes)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@fast
@given(vec((3, 3)), vec((3, 3)), vec(3), st.floats(-3, 3))
def test_generator_linear_in_weight(S1, S2, z, c):
    Q1, Q2 = S1 + S1.T, S2 + S2.T
    A, G, R = np.diag([-1.0, 0.5, 2.0]), [0.3 * np.eye(3)], [np.eye(3) + 0.1]
    g = lambda Q: lgen_quadratic(Q, A @ z, G, R, [2.0], z).value
    assert np.isclose(g(Q1 + c * Q2), g(Q1) + c * g(Q2), rtol=1e-9, atol=1e-6)


@fast
@given(vec(4), st.floats(0.01, 5), st.floats(0.1, 10), st.floats(0.1, 3))
def test_bound_monotone_and_scaling(e, kappa, alpha, s):
    Q = np.block([[np.eye(4), -np.eye(4)], [-np.eye(4), np.eye(4)]])
    cert = SimulationCertificate((Q,), kappa, alpha)
    t = np.linspace(0, 4, 30)
    b = bound_curve(cert, e, np.zeros(4), (1.0,), 0.0, t)
    assert np.all(np.diff(b.values) <= 0)
    bs = bound_curve(cert, np.sqrt(s) * e, np.zeros(4), (1.0,), 0.0, t)
    np.testing.assert_allclose(bs.values, s * b.values, rtol=1e-9, atol=1e-300)


@fast
@given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 20), st.integers(0, 2**32 - 1), st.integers(1, 2))
def test_switch_signal_invariants(q12, q21, horizon, seed, p0):
    chain = MarkovChain(np.array([[-q12, q12], [q21, -q21]]))
    sig = sample_switch_signal(chain, p0, horizon, np.random.default_rng(seed))
    assert np.all(np.diff(sig.times) > 0) and (sig.times.size == 0 or sig.times[-1] <= horizon)
    seq = np.concatenate([[sig.initial], sig.modes])
    assert np.all(seq[1:] != seq[:-1])
    assert np.isclose(sig.occupancy(1) + sig.occupancy(2), 1.0)


@fast
@given(arrays(float, 2, elements=st.floats(-1, 1)))
def test_grid_locate_center_roundtrip(x):
    grid = UniformGrid.from_bounds([(-1, 1), (-1, 1)], 0.25)
    k = grid.locate(x)
    assert 0 <= k < grid.size
    assert np.all(np.abs(grid.center(k) - x) <= grid.eta / 2 + 1e-12)
    assert grid.locate(grid.center(k)) == k


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 0.5), st.floats(-0.99, 0.99), st.integers(0, 4))
def test_1d_successor_box_contains_flow(m, frac, u):
    grid = UniformGrid.from_bounds([(-2, 2)], 0.5)
    model = build_symbolic_model([np.array([[m]])], grid, np.linspace(-1, 1, 5).reshape(-1, 1), 0.4)
    cell = grid.locate(np.array([0.3]))
    x0 = grid.center(cell) + frac * grid.eta / 2
    uu = model.inputs[u, 0]
    xt = np.exp(m * 0.4) * x0[0] + (uu * np.expm1(m * 0.4) / m if m != 0 else uu * 0.4)
    lo, hi = model.successor_box(cell, u, 1)
    assert lo[0] - 1e-9 <= xt <= hi[0] + 1e-9
