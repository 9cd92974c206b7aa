import numpy as np
import pytest

from shsnet.markov import SwitchSignal
from shsnet.model import MarkovChain, SwitchedNetwork, TopologySet, noise_free
from shsnet.refine import (InterfaceMap, interface_concrete, interface_reduced, make_refined_controller,
                           run_closed_loop)
from shsnet.rng import substream


def test_interface_concrete_substitution():
    u = interface_concrete([1.0, 3.0], [2.0], [0.5], 1.0, [2])
    np.testing.assert_allclose(u, [1.5, -0.5])


def test_interface_concrete_pure_lift(rng):
    xh, uh = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(interface_concrete(np.repeat(xh, 4), xh, uh, 2.0, [4] * 3), np.repeat(uh, 4))


def test_interface_concrete_unit_error():
    x = np.zeros(4)
    x[0] = 1.0
    np.testing.assert_allclose(interface_concrete(x, np.zeros(2), np.zeros(2), 0.7, [2, 2]), -0.7 * x)


def test_interface_reduced_examples():
    np.testing.assert_array_equal(interface_reduced([1.0, 2.0], [1.0, 2.0], [0.3, 0.4], 1.0), [0.3, 0.4])
    np.testing.assert_array_equal(interface_reduced([1.0, 0, 0], [0.0, 0, 0], [0.0, 0, 0], 1.0), [-1.0, 0, 0])


def test_chained_interfaces(rng):
    sizes, chi = [3, 2], 1.3
    H = np.zeros((5, 2))
    H[:3, 0] = H[3:, 1] = 1
    for _ in range(20):
        x, xh, xt, ut = rng.normal(size=5), rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
        u = interface_concrete(x, xh, interface_reduced(xh, xt, ut, chi), chi, sizes)
        np.testing.assert_allclose(u, -chi * (x - H @ xh) + H @ (-chi * (xh - xt) + ut), atol=1e-12)


def test_interface_mismatch():
    with pytest.raises(ValueError):
        interface_concrete(np.zeros(5), np.zeros(2), np.zeros(2), 1.0, [2, 2])
    with pytest.raises(ValueError):
        interface_reduced(np.zeros(2), np.zeros(3), np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        InterfaceMap(0.0)


class ConstantTable:
    tau_s = 0.3

    def __init__(self, u, limit=np.inf):
        self.u = np.asarray(u, float)
        self.limit = limit

    def step(self, xt, memory):
        if np.max(np.abs(xt)) > self.limit:
            raise KeyError("outside")
        return self.u, memory, None


def test_zero_input_consistent_states_give_zero():
    ctl = make_refined_controller(ConstantTable(np.zeros(2)), 1.0, [3, 3])
    xh = np.array([0.4, -1.0])
    u, uh, ut = ctl(0.0, np.repeat(xh, 3), xh, xh)
    assert not u.any() and not uh.any() and not ut.any()


def _frozen(paper, mode):
    chain = MarkovChain(np.zeros((1, 1)))
    return [SwitchedNetwork(n.subsystems, TopologySet((n.topology[mode],)), chain)
            for n in (paper.concrete, paper.abstract)]


def test_domain_exit_reported(paper):
    conc, abst = _frozen(paper, 1)
    ctl = make_refined_controller(ConstantTable(np.ones(3), limit=0.5), 1.0, [50] * 3)
    res = run_closed_loop(conc, abst, noise_free(abst), ctl, np.zeros(150), np.zeros(3), np.zeros(3),
                          SwitchSignal.constant(1, 2.0), 1e-3, 2.0, substream(0, "exit"))
    assert res.exit is not None and res.exit.t == pytest.approx(0.6)
    assert res.reduced.times[-1] == pytest.approx(0.6)
    assert np.max(np.abs(res.reduced.states[-2])) <= 0.6


def test_noiseless_tracking_error_contracts(paper):
    conc, abst = [noise_free(n) for n in _frozen(paper, 1)]
    ctl = make_refined_controller(ConstantTable(np.array([0.5, -0.5, 0.0])), 3.0, [50] * 3)
    a = np.linspace(-2, 2, 150)
    res = run_closed_loop(conc, abst, abst, ctl, a, np.zeros(3), np.zeros(3),
                          SwitchSignal.constant(1, 1.0), 1e-3, 1.0, substream(0, "contract"))
    H = paper.lift()
    err = np.linalg.norm(res.concrete.states - res.abstract.states @ H.T, axis=1)
    assert np.all(np.diff(err) < 0)
