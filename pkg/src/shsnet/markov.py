"""Exact sampling of the topology-switching process."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import MarkovChain

__all__ = ["SwitchSignal", "sample_switch_signal", "mode_at", "sample_initial_mode"]


@dataclass(frozen=True, eq=False)
class SwitchSignal:
    """Piecewise-constant, right-continuous mode signal on [0, horizon]."""

    initial: int
    times: np.ndarray
    modes: np.ndarray
    horizon: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        modes = np.asarray(self.modes, dtype=int)
        if times.shape != modes.shape:
            raise ValueError("need one new mode per jump time")
        if np.any(np.diff(times) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if times.size and (times[0] <= 0 or times[-1] > self.horizon):
            raise ValueError("jump times must lie in (0, horizon]")
        times.setflags(write=False)
        modes.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "modes", modes)

    @classmethod
    def constant(cls, mode: int, horizon: float) -> "SwitchSignal":
        return cls(mode, np.zeros(0), np.zeros(0, dtype=int), horizon)

    def __len__(self):
        return self.times.size

    def modes_on(self, t: np.ndarray) -> np.ndarray:
        """Vectorised cadlag lookup; no range check."""
        table = np.concatenate([[self.initial], self.modes])
        return table[np.searchsorted(self.times, t, side="right")]

    def occupancy(self, mode: int) -> float:
        """Fraction of [0, horizon] spent in ``mode``."""
        edges = np.concatenate([[0.0], self.times, [self.horizon]])
        labels = np.concatenate([[self.initial], self.modes])
        return float(np.sum(np.diff(edges)[labels == mode]) / self.horizon)

    def holding_times(self) -> np.ndarray:
        """Completed sojourn durations (the first and the censored last are dropped)."""
        return np.diff(self.times)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time", "mode"])
            wr.writerow([0.0, self.initial])
            for t, m in zip(self.times, self.modes):
                wr.writerow([repr(float(t)), int(m)])


def sample_switch_signal(chain: MarkovChain, p0: int, horizon: float,
                         rng: np.random.Generator) -> SwitchSignal:
    """Exact path of the chain on [0, horizon] started in mode ``p0``.

    Holding time in mode i ~ Exp(-q_ii); next mode j != i with probability
    q_ij / (-q_ii).  Absorbing modes end the path.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not 1 <= p0 <= chain.P:
        raise ValueError(f"initial mode {p0} outside 1..{chain.P}")
    bad = chain.problems()
    if bad:
        raise ValueError("invalid generator: " + "; ".join(bad))

    Q = chain.Q
    times, modes = [], []
    t, cur = 0.0, p0
    while True:
        rate = -Q[cur - 1, cur - 1]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t > horizon:
            break
        probs = Q[cur - 1].copy()
        probs[cur - 1] = 0.0
        cur = int(rng.choice(chain.P, p=probs / rate)) + 1
        times.append(t)
        modes.append(cur)
    return SwitchSignal(p0, np.array(times), np.array(modes, dtype=int), horizon)


def sample_initial_mode(p0: np.ndarray | tuple, rng: np.random.Generator) -> int:
    p0 = np.asarray(p0, dtype=float)
    return int(rng.choice(p0.size, p=p0 / p0.sum())) + 1


def mode_at(signal: SwitchSignal, t: float) -> int:
    """Mode at time ``t``; at a jump time the new mode is returned."""
    if not 0 <= t <= signal.horizon:
        raise ValueError(f"t={t} outside [0, {signal.horizon}]")
    return int(signal.modes_on(np.asarray(t)))
