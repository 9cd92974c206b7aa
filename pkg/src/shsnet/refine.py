"""Interface functions between abstraction layers and the refined closed loop.

Three layers are simulated together: the concrete network x, its abstraction
xh (one scalar per subsystem in the bundled example) and the deterministic
reduced system xt that the symbolic controller was synthesised for.  Inputs
flow downward: ut from the controller table, uh = -chi (xh - xt) + ut, and
u = -chi (x - H xh) + H uh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .markov import SwitchSignal
from .model import SwitchedNetwork
from .sim import (Trajectory, _drift_fn, _output_map, _signal_modes, grid_steps, integrate,
                  joint_channels, sample_noise, stack_noise)

__all__ = [
    "InterfaceMap",
    "interface_concrete",
    "interface_reduced",
    "DomainExit",
    "RefinedController",
    "make_refined_controller",
    "ClosedLoopResult",
    "run_closed_loop",
]


def _lift(xh: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    return np.repeat(xh, sizes, axis=-1)


def interface_concrete(x, xh, uh, chi: float, sizes: Sequence[int]) -> np.ndarray:
    """u_i = -chi (x_i - 1 xh_i) + 1 uh_i for every block; works on single points or batches."""
    x, xh, uh = np.asarray(x, float), np.asarray(xh, float), np.asarray(uh, float)
    if x.shape[-1] != sum(sizes) or xh.shape[-1] != len(sizes) or uh.shape[-1] != len(sizes):
        raise ValueError(
            f"dimension mismatch: x {x.shape}, xh {xh.shape}, uh {uh.shape} for blocks {list(sizes)}")
    return -chi * (x - _lift(xh, sizes)) + _lift(uh, sizes)


def interface_reduced(xh, xt, ut, chi: float) -> np.ndarray:
    """uh = -chi (xh - xt) + ut."""
    xh, xt, ut = np.asarray(xh, float), np.asarray(xt, float), np.asarray(ut, float)
    if not xh.shape == xt.shape == ut.shape:
        raise ValueError(f"dimension mismatch: xh {xh.shape}, xt {xt.shape}, ut {ut.shape}")
    return -chi * (xh - xt) + ut


@dataclass(frozen=True)
class InterfaceMap:
    """One refinement layer; ``sizes`` is None for the identity lift."""

    chi: float
    sizes: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.chi > 0:
            raise ValueError("interface gain must be positive")

    def __call__(self, x, xh, uh):
        if self.sizes is None:
            return interface_reduced(x, xh, uh, self.chi)
        return interface_concrete(x, xh, uh, self.chi, self.sizes)


class DomainExit(RuntimeError):
    def __init__(self, t: float, state):
        super().__init__(f"reduced state {np.round(state, 4).tolist()} left the winning domain at t={t:g}")
        self.t = t
        self.state = state


@dataclass
class RefinedController:
    """Stateful controller for one closed-loop run.

    ``table`` is a :class:`shsnet.synth.ControllerTable`; the reduced input is
    re-sampled every ``table.tau_s`` time units and held in between.
    """

    table: object
    chi: float
    sizes: tuple[int, ...]
    memory: int = 0
    held: np.ndarray | None = None
    next_sample: float = 0.0
    visits: list = field(default_factory=list)

    def reduced_input(self, t: float, xt: np.ndarray) -> np.ndarray:
        if self.held is None or t >= self.next_sample - 1e-12:
            try:
                ut, self.memory, visited = self.table.step(xt, self.memory)
            except KeyError:
                raise DomainExit(t, xt) from None
            if visited is not None:
                self.visits.append((t, visited))
            self.held = ut
            self.next_sample = t + self.table.tau_s
        return self.held

    def __call__(self, t, x, xh, xt):
        ut = self.reduced_input(t, xt)
        uh = interface_reduced(xh, xt, ut, self.chi)
        return interface_concrete(x, xh, uh, self.chi, self.sizes), uh, ut


def make_refined_controller(table, chi: float, sizes: Sequence[int]) -> RefinedController:
    return RefinedController(table=table, chi=chi, sizes=tuple(sizes))


@dataclass(frozen=True, eq=False)
class ClosedLoopResult:
    concrete: Trajectory
    abstract: Trajectory
    reduced: Trajectory
    visits: list
    exit: DomainExit | None = None


def run_closed_loop(concrete: SwitchedNetwork, abstract: SwitchedNetwork, reduced: SwitchedNetwork,
                    controller: RefinedController, a, ahat, atilde, signal: SwitchSignal,
                    dt: float, horizon: float, rng: np.random.Generator) -> ClosedLoopResult:
    """Jointly simulate the three layers under the refined controller.

    The concrete and abstract layers share every noise channel; the reduced
    layer is noise free.  A winning-domain exit ends the run early and is
    returned in ``exit`` together with the trajectories up to that time.
    """
    steps = grid_steps(dt, horizon)
    times = np.arange(steps + 1) * dt
    n, nh = concrete.n, abstract.n
    f, fh, ft = _drift_fn(concrete), _drift_fn(abstract), _drift_fn(reduced)
    chans = joint_channels(concrete, abstract, reduced.n)
    noise = stack_noise([sample_noise(chans.n_brownian, chans.rates, dt, steps, rng)])
    modes = _signal_modes([signal], times)
    failure: list[DomainExit] = []

    def ctrl(k, t, X, mk):
        x, xh, xt = X[0, :n], X[0, n:n + nh], X[0, n + nh:]
        u, uh, ut = controller(t, x, xh, xt)
        return u[None], uh[None], np.asarray(ut, float)[None]

    def drift(X, mk, U):
        return np.concatenate([f(X[:, :n], U[0], mk), fh(X[:, n:n + nh], U[1], mk),
                               ft(X[:, n + nh:], U[2], mk)], axis=1)

    x0 = np.concatenate([np.asarray(a, float), np.asarray(ahat, float), np.asarray(atilde, float)])[None]
    try:
        Z = integrate(x0, drift, chans, noise, dt, steps, modes, ctrl)[0]
    except DomainExit as exc:
        failure.append(exc)
        # replay up to the last completed grid step before the exit
        cut = int(np.floor(exc.t / dt + 1e-9))
        steps, times = cut, times[:cut + 1]
        controller.memory, controller.held, controller.next_sample = 0, None, 0.0
        controller.visits.clear()
        noise = _truncate(noise, cut)
        Z = integrate(x0, drift, chans, noise, dt, steps, modes[:, :cut + 1], ctrl)[0]
    X, Xh, Xt = Z[:, :n], Z[:, n:n + nh], Z[:, n + nh:]
    m1 = modes[0, : steps + 1] + 1
    return ClosedLoopResult(
        Trajectory(times, X, _output_map(concrete)(X), m1, signal=signal),
        Trajectory(times, Xh, _output_map(abstract)(Xh), m1, signal=signal),
        Trajectory(times, Xt, _output_map(reduced)(Xt), m1, signal=signal),
        list(controller.visits),
        failure[0] if failure else None,
    )


def _truncate(noise, cut: int):
    from .sim import BatchNoise

    end = noise.grid_index[0, cut] + 1
    return BatchNoise(noise.times[:, :end], noise.dW[:, :end - 1], noise.jump_channel[:, :end],
                      noise.grid_index[:, :cut + 1])
