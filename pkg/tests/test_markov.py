import numpy as np
import pytest

from shsnet.markov import SwitchSignal, mode_at, sample_switch_signal
from shsnet.model import MarkovChain
from shsnet.rng import substream

SYMMETRIC_Q = MarkovChain(np.array([[-0.5, 0.5], [0.5, -0.5]]))


def test_absorbing_chain_has_no_jumps():
    sig = sample_switch_signal(MarkovChain(np.zeros((2, 2))), 1, 10.0, np.random.default_rng(0))
    assert len(sig) == 0 and sig.occupancy(1) == 1.0


def test_mean_holding_time():
    sig = sample_switch_signal(SYMMETRIC_Q, 1, 2.2e4, substream(1, "holding"))
    h = sig.holding_times()
    assert h.size >= 10_000
    assert abs(h.mean() - 2.0) <= 0.05 * 2.0


def test_transition_probabilities_three_modes():
    Q = np.array([[-1.0, 0.25, 0.75], [0.5, -1.0, 0.5], [0.2, 0.8, -1.0]])
    sig = sample_switch_signal(MarkovChain(Q), 1, 3e4, substream(2, "embedded"))
    prev = np.concatenate([[sig.initial], sig.modes[:-1]])
    from_one = sig.modes[prev == 1]
    n = from_one.size
    p = 0.75
    k = np.sum(from_one == 3)
    assert abs(k - n * p) <= 3 * np.sqrt(n * p * (1 - p))


def test_reproducible():
    a = sample_switch_signal(SYMMETRIC_Q, 2, 100.0, substream(5, "x"))
    b = sample_switch_signal(SYMMETRIC_Q, 2, 100.0, substream(5, "x"))
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.modes, b.modes)


def test_mode_at_cadlag():
    sig = SwitchSignal(1, np.array([1.0, 2.5]), np.array([2, 1]), 5.0)
    assert mode_at(sig, 0.5) == 1
    assert mode_at(sig, 1.0) == 2
    assert mode_at(sig, 1.7) == 2
    assert mode_at(sig, 2.5) == 1
    with pytest.raises(ValueError):
        mode_at(sig, 5.1)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        sample_switch_signal(SYMMETRIC_Q, 3, 1.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_switch_signal(SYMMETRIC_Q, 1, 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError, match="row sum"):
        sample_switch_signal(MarkovChain(np.array([[-1.0, 0.5], [0.5, -0.5]])), 1, 1.0, np.random.default_rng(0))


def test_signal_validation():
    with pytest.raises(ValueError):
        SwitchSignal(1, np.array([2.0, 1.0]), np.array([2, 1]), 5.0)


def test_csv(tmp_path):
    sig = SwitchSignal(1, np.array([1.0]), np.array([2]), 3.0)
    sig.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "time,mode" and lines[2] == "1.0,2"
