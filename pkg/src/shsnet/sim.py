"""Euler-Maruyama integration of switched jump-diffusion networks.

Poisson jump times are sampled exactly up front and merged into the time
grid, so every reset happens at its true time; the Brownian increments live
on that refined grid.  Switching modes and controller values are held
constant over each grid step (zero-order hold).

All integrators work on batches of runs (state arrays of shape (R, n)); the
single-run entry points are thin wrappers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag

from .markov import SwitchSignal
from .model import CallbackSubsystem, SwitchedNetwork

__all__ = [
    "SimulationError",
    "NoiseRecord",
    "BatchNoise",
    "LinearChannels",
    "FunctionChannels",
    "Trajectory",
    "sample_noise",
    "sample_noise_bulk",
    "stack_noise",
    "network_channels",
    "joint_channels",
    "integrate",
    "simulate",
    "simulate_coupled",
    "simulate_coupled_batch",
    "grid_steps",
]

STATE_GUARD = 1e12


class SimulationError(RuntimeError):
    def __init__(self, step: int, run: int = 0, reason: str = "non-finite state"):
        super().__init__(f"simulation aborted at step {step} (run {run}): {reason}")
        self.step = step
        self.run = run


def grid_steps(dt: float, horizon: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of dt {dt}")
    return steps


@dataclass(frozen=True, eq=False)
class NoiseRecord:
    """Noise of one run.

    ``times`` is the refined grid (all k*dt plus every Poisson jump time),
    ``dW[i]`` the Brownian increment over ``times[i] .. times[i+1]``,
    ``jump_channel[i]`` the Poisson channel firing at ``times[i]`` (or -1),
    and ``grid_index[k]`` the position of k*dt inside ``times``.
    """

    times: np.ndarray
    dW: np.ndarray
    jump_channel: np.ndarray
    grid_index: np.ndarray

    def jump_times(self, channel: int) -> np.ndarray:
        return self.times[self.jump_channel == channel]


@dataclass(frozen=True, eq=False)
class BatchNoise:
    """Padded stack of per-run noise records (padding intervals have zero length)."""

    times: np.ndarray         # (R, L)
    dW: np.ndarray            # (R, L-1, p)
    jump_channel: np.ndarray  # (R, L)
    grid_index: np.ndarray    # (R, steps+1)

    @property
    def runs(self) -> int:
        return self.times.shape[0]

    def record(self, r: int) -> NoiseRecord:
        end = self.grid_index[r, -1] + 1
        return NoiseRecord(self.times[r, :end], self.dW[r, :end - 1],
                           self.jump_channel[r, :end], self.grid_index[r])


def _build_batch(jt: np.ndarray, jc: np.ndarray, n_brownian: int, dt: float, steps: int,
                 normals: Callable[[tuple], np.ndarray]) -> BatchNoise:
    runs = jt.shape[0]
    T = steps * dt
    grid = np.arange(steps + 1) * dt
    allt = np.concatenate([np.broadcast_to(grid, (runs, steps + 1)), jt], axis=1)
    allc = np.concatenate([np.full((runs, steps + 1), -1), jc], axis=1)
    order = np.argsort(allt, axis=1, kind="stable")
    times = np.take_along_axis(allt, order, axis=1)
    chan = np.take_along_axis(allc, order, axis=1)
    inv = np.argsort(order, axis=1)
    gidx = inv[:, : steps + 1]
    times = np.where(np.isinf(times), T, times)
    h = np.diff(times, axis=1)
    dW = normals((runs, times.shape[1] - 1, n_brownian)) * np.sqrt(h)[..., None]
    return BatchNoise(times, dW, chan, gidx)


def _jump_arrays(counts: np.ndarray, T: float, uniforms: Callable[[int], np.ndarray]):
    runs, nch = counts.shape
    maxj = int(counts.sum(axis=1).max()) if counts.size else 0
    jt = np.full((runs, maxj), np.inf)
    jc = np.full((runs, maxj), -1)
    total = int(counts.sum())
    if total:
        u = uniforms(total) * T
        pos = 0
        run_fill = np.zeros(runs, dtype=int)
        for c in range(nch):
            for r in np.nonzero(counts[:, c])[0]:
                k = counts[r, c]
                jt[r, run_fill[r]:run_fill[r] + k] = u[pos:pos + k]
                jc[r, run_fill[r]:run_fill[r] + k] = c
                run_fill[r] += k
                pos += k
    return jt, jc


def sample_noise(n_brownian: int, rates: np.ndarray, dt: float, steps: int,
                 rng: np.random.Generator) -> NoiseRecord:
    """Noise for a single run drawn from ``rng`` alone."""
    return sample_noise_bulk(n_brownian, rates, dt, steps, 1, rng).record(0)


def sample_noise_bulk(n_brownian: int, rates: np.ndarray, dt: float, steps: int, runs: int,
                      rng: np.random.Generator) -> BatchNoise:
    """Noise for ``runs`` runs drawn jointly from one generator.

    Jump counts are Poisson(rate * horizon) with uniform order statistics as
    jump times, which is the exact law of a Poisson process on the horizon.
    """
    rates = np.asarray(rates, dtype=float)
    T = steps * dt
    counts = rng.poisson(rates * T, size=(runs, rates.size)) if rates.size else np.zeros((runs, 0), int)
    jt, jc = _jump_arrays(counts, T, rng.random)
    return _build_batch(jt, jc, n_brownian, dt, steps, rng.standard_normal)


def stack_noise(records: Sequence[NoiseRecord]) -> BatchNoise:
    L = max(r.times.size for r in records)
    p = records[0].dW.shape[1]
    R = len(records)
    times = np.empty((R, L))
    dW = np.zeros((R, L - 1, p))
    chan = np.full((R, L), -1)
    gidx = np.stack([r.grid_index for r in records])
    for i, r in enumerate(records):
        k = r.times.size
        times[i, :k] = r.times
        times[i, k:] = r.times[-1]
        dW[i, : k - 1] = r.dW
        chan[i, :k] = r.jump_channel
    return BatchNoise(times, dW, chan, gidx)


class LinearChannels:
    """Multiplicative noise: diffusion column k is G_k x, reset k is R_k x."""

    def __init__(self, G: Sequence[np.ndarray], R: Sequence[np.ndarray], rates):
        self.G = [np.asarray(g, float) for g in G]
        self.R = [np.asarray(r, float) for r in R]
        self.rates = np.asarray(rates, dtype=float)
        if len(self.R) != self.rates.size:
            raise ValueError("need one rate per reset map")
        self._gdiag = None
        if self.G and all(np.count_nonzero(g - np.diag(np.diag(g))) == 0 for g in self.G):
            self._gdiag = np.stack([np.diag(g) for g in self.G])

    @property
    def n_brownian(self) -> int:
        return len(self.G)

    def noise(self, X: np.ndarray, dW: np.ndarray) -> np.ndarray:
        if not self.G:
            return 0.0
        if self._gdiag is not None:
            return X * (dW @ self._gdiag)
        return sum((X @ g.T) * dW[:, k:k + 1] for k, g in enumerate(self.G))

    def jump(self, X: np.ndarray, ch: np.ndarray) -> np.ndarray:
        out = np.empty_like(X)
        for c in np.unique(ch):
            sel = ch == c
            out[sel] = X[sel] @ self.R[c].T
        return out


class FunctionChannels:
    """Noise given by batch callbacks ``sigma(X) -> (R, n, p)``, ``rho(X) -> (R, n, r)``."""

    def __init__(self, n_brownian: int, rates, sigma=None, rho=None):
        self._p = n_brownian
        self.rates = np.asarray(rates, dtype=float)
        self.sigma = sigma
        self.rho = rho

    @property
    def n_brownian(self) -> int:
        return self._p

    def noise(self, X, dW):
        if not self._p:
            return 0.0
        return np.einsum("rnp,rp->rn", self.sigma(X), dW)

    def jump(self, X, ch):
        return self.rho(X)[np.arange(X.shape[0]), :, ch]


def network_channels(net: SwitchedNetwork):
    if net.is_linear:
        G, R, rates = net.channels()
        return LinearChannels(G, R, rates)
    off = net.offsets()
    subs = net.subsystems
    pb = np.concatenate([[0], np.cumsum([s.n_brownian for s in subs])])
    pr = np.concatenate([[0], np.cumsum([s.n_poisson for s in subs])])
    n = net.n

    def _blocks(X, fn_name, counts):
        out = np.zeros((X.shape[0], n, counts[-1]))
        for i, s in enumerate(subs):
            if counts[i + 1] == counts[i]:
                continue
            xi = X[:, off[i]:off[i + 1]]
            if isinstance(s, CallbackSubsystem):
                val = getattr(s, fn_name)(xi)
            else:
                mats = s.diffusion if fn_name == "sigma" else s.resets
                val = np.stack([xi @ g.T for g in mats], axis=-1)
            out[:, off[i]:off[i + 1], counts[i]:counts[i + 1]] = val
        return out

    rates = np.concatenate([np.asarray(s.rates, float) for s in subs])
    return FunctionChannels(int(pb[-1]), rates,
                            sigma=lambda X: _blocks(X, "sigma", pb),
                            rho=lambda X: _blocks(X, "rho", pr))


def joint_channels(*nets_or_dims) -> LinearChannels:
    """Channels of stacked linear networks that share every noise channel.

    Arguments are linear networks, or integers for noise-free layers of that
    dimension.  Sharing requires identical channel counts and rates.
    """
    nets = [x for x in nets_or_dims if isinstance(x, SwitchedNetwork)]
    ref = nets[0]
    parts = []
    for x in nets_or_dims:
        if isinstance(x, SwitchedNetwork):
            if not x.is_linear:
                raise TypeError("coupled simulation requires linear subsystems")
            if x.N != ref.N:
                raise ValueError("coupled networks need the same number of subsystems")
            for s, r in zip(x.subsystems, ref.subsystems):
                if s.n_brownian != r.n_brownian or s.n_poisson != r.n_poisson:
                    raise ValueError(
                        "coupled networks must share noise channels: per-subsystem Brownian and "
                        "Poisson channel counts differ")
                if not np.allclose(s.rates, r.rates):
                    raise ValueError("coupled networks must share Poisson channels: rates differ")
            parts.append(x.channels())
        else:
            parts.append(int(x))
    _, _, rates = ref.channels()
    nG = len(ref.channels()[0])

    def _stack(idx, k):
        return block_diag(*[p[idx][k] if isinstance(p, tuple) else np.zeros((p, p)) for p in parts])

    G = [_stack(0, k) for k in range(nG)]
    R = [_stack(1, k) for k in range(rates.size)]
    return LinearChannels(G, R, rates)


def _drift_fn(net: SwitchedNetwork):
    """Fast batch drift ``f(x, u, mode_idx)`` (mode_idx 0-based)."""
    if not net.is_linear:
        return net.drift
    F = [net.mode_matrix(j) for j in range(1, len(net.topology) + 1)]
    B = net.stacked("B")

    def f(x, u, mode_idx):
        out = u @ B.T
        if np.all(mode_idx == mode_idx[0]):
            return out + x @ F[mode_idx[0]].T
        for j, Fj in enumerate(F):
            sel = mode_idx == j
            if np.any(sel):
                out[sel] += x[sel] @ Fj.T
        return out

    return f


def integrate(x0: np.ndarray, drift: Callable, channels, noise: BatchNoise, dt: float, steps: int,
              modes: np.ndarray | None = None, controller: Callable | None = None,
              observe: Callable | None = None, guard: float = STATE_GUARD) -> np.ndarray:
    """Integrate a batch of runs; returns ``observe(X)`` at every grid point.

    ``drift(X, mode_idx, U)`` gives the drift of the batch, ``controller(k, t,
    X, mode_idx)`` the held input ``U`` over grid step k, and ``modes`` the
    0-based mode of each run at each grid point, shape (R, steps+1).
    """
    X = np.array(x0, dtype=float, copy=True)
    R = X.shape[0]
    if modes is None:
        modes = np.zeros((R, steps + 1), dtype=int)
    observe = observe or (lambda Z: Z.copy())
    first = np.asarray(observe(X))
    out = np.empty((steps + 1,) + first.shape)
    out[0] = first
    rows = np.arange(R)
    T, dWs, chans, gidx = noise.times, noise.dW, noise.jump_channel, noise.grid_index
    L = T.shape[1]
    for k in range(steps):
        mk = modes[:, k]
        U = controller(k, k * dt, X, mk) if controller is not None else None
        g0 = gidx[:, k]
        nsub = gidx[:, k + 1] - g0
        for s in range(int(nsub.max())):
            active = s < nsub
            idx = np.minimum(g0 + s, L - 2)
            h = np.where(active, T[rows, idx + 1] - T[rows, idx], 0.0)
            dW = dWs[rows, idx] * active[:, None]
            X = X + drift(X, mk, U) * h[:, None] + channels.noise(X, dW)
            ch = chans[rows, idx + 1]
            jumpers = active & (ch >= 0)
            if np.any(jumpers):
                X[jumpers] = X[jumpers] + channels.jump(X[jumpers], ch[jumpers])
        bad = ~np.all(np.isfinite(X), axis=1) | (np.linalg.norm(X, axis=1) > guard)
        if np.any(bad):
            r = int(np.nonzero(bad)[0][0])
            reason = "non-finite state" if not np.all(np.isfinite(X[r])) else f"|x| exceeded {guard:g}"
            raise SimulationError(k + 1, r, reason)
        out[k + 1] = observe(X)
    return np.moveaxis(out, 0, 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray | None
    outputs: np.ndarray
    modes: np.ndarray
    internal: np.ndarray | None = None
    signal: SwitchSignal | None = None

    def to_csv(self, path: str | Path, full_state: bool = False) -> None:
        q = self.outputs.shape[1]
        header = ["time", "mode"] + [f"y{i + 1}" for i in range(q)]
        if full_state and self.states is not None:
            header += [f"x{i + 1}" for i in range(self.states.shape[1])]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for k, t in enumerate(self.times):
                row = [repr(float(t)), int(self.modes[k])] + [repr(float(v)) for v in self.outputs[k]]
                if full_state and self.states is not None:
                    row += [repr(float(v)) for v in self.states[k]]
                wr.writerow(row)


def _output_map(net: SwitchedNetwork, which: str = "C1"):
    if net.is_linear:
        C = net.stacked(which)
        return lambda X: X @ C.T
    off = net.offsets()
    attr = "h1" if which == "C1" else "h2"

    def h(X):
        parts = []
        for i, s in enumerate(net.subsystems):
            xi = X[:, off[i]:off[i + 1]]
            parts.append(getattr(s, attr)(xi) if isinstance(s, CallbackSubsystem) else xi @ getattr(s, which).T)
        return np.concatenate(parts, axis=1)

    return h


def _signal_modes(signals: Sequence[SwitchSignal], times: np.ndarray) -> np.ndarray:
    for s in signals:
        if s.horizon < times[-1] - 1e-12:
            raise ValueError(f"switch signal horizon {s.horizon} shorter than simulation horizon {times[-1]}")
    return np.stack([s.modes_on(times) for s in signals]) - 1


def simulate(net: SwitchedNetwork, controller: Callable | None, a: np.ndarray, signal: SwitchSignal,
             dt: float, horizon: float, rng: np.random.Generator,
             record_internal: bool = False) -> Trajectory:
    """Single run of the interconnected network under ``u = controller(t, x)``."""
    steps = grid_steps(dt, horizon)
    times = np.arange(steps + 1) * dt
    chans = network_channels(net)
    noise = stack_noise([sample_noise(chans.n_brownian, chans.rates, dt, steps, rng)])
    modes = _signal_modes([signal], times)
    f = _drift_fn(net)
    m = net.m

    def drift(X, mk, U):
        return f(X, U, mk)

    def ctrl(k, t, X, mk):
        if controller is None:
            return np.zeros((X.shape[0], m))
        return np.atleast_2d(np.asarray(controller(t, X[0]), dtype=float))

    X = integrate(np.atleast_2d(np.asarray(a, float)), drift, chans, noise, dt, steps, modes, ctrl)[0]
    out = _output_map(net, "C1")(X)
    internal = _output_map(net, "C2")(X) if record_internal else None
    return Trajectory(times, X, out, modes[0] + 1, internal, signal)


def _coupled_parts(concrete: SwitchedNetwork, abstract: SwitchedNetwork):
    if len(concrete.topology) != len(abstract.topology):
        raise ValueError("concrete and abstract networks need the same mode set")
    return _drift_fn(concrete), _drift_fn(abstract), joint_channels(concrete, abstract)


def simulate_coupled(concrete: SwitchedNetwork, abstract: SwitchedNetwork, interface: Callable,
                     abstract_controller: Callable | None, a, ahat, signal: SwitchSignal, dt: float,
                     horizon: float, rng: np.random.Generator) -> tuple[Trajectory, Trajectory]:
    """Concrete and abstract networks driven by the same noise and switching signal.

    ``interface(x, xhat, uhat)`` refines the abstract input to the concrete one;
    ``abstract_controller(t, xhat)`` supplies uhat (zero when None).
    """
    steps = grid_steps(dt, horizon)
    times = np.arange(steps + 1) * dt
    n = concrete.n
    f, fh, chans = _coupled_parts(concrete, abstract)
    noise = stack_noise([sample_noise(chans.n_brownian, chans.rates, dt, steps, rng)])
    modes = _signal_modes([signal], times)
    mh = abstract.m

    def ctrl(k, t, X, mk):
        x, xh = X[0, :n], X[0, n:]
        uh = np.zeros(mh) if abstract_controller is None else np.asarray(abstract_controller(t, xh), float)
        return np.atleast_2d(interface(x, xh, uh)), uh[None]

    def drift(X, mk, U):
        return np.concatenate([f(X[:, :n], U[0], mk), fh(X[:, n:], U[1], mk)], axis=1)

    x0 = np.concatenate([np.asarray(a, float), np.asarray(ahat, float)])[None]
    Z = integrate(x0, drift, chans, noise, dt, steps, modes, ctrl)[0]
    X, Xh = Z[:, :n], Z[:, n:]
    m1 = modes[0] + 1
    return (Trajectory(times, X, _output_map(concrete)(X), m1, signal=signal),
            Trajectory(times, Xh, _output_map(abstract)(Xh), m1, signal=signal))


def simulate_coupled_batch(concrete: SwitchedNetwork, abstract: SwitchedNetwork, interface: Callable,
                           a, ahat, signals: Sequence[SwitchSignal], dt: float, horizon: float,
                           noises: BatchNoise, abstract_controller: Callable | None = None
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Batch of coupled runs; returns concrete and abstract outputs, each (R, steps+1, q).

    ``interface`` and ``abstract_controller`` act on batches here:
    ``interface(X, Xh, Uh)`` and ``abstract_controller(t, Xh)``.
    """
    steps = grid_steps(dt, horizon)
    times = np.arange(steps + 1) * dt
    n = concrete.n
    f, fh, chans = _coupled_parts(concrete, abstract)
    modes = _signal_modes(signals, times)
    h1, hh1 = _output_map(concrete), _output_map(abstract)
    q = concrete.q
    mh = abstract.m

    def ctrl(k, t, X, mk):
        xh = X[:, n:]
        uh = np.zeros((X.shape[0], mh)) if abstract_controller is None else abstract_controller(t, xh)
        return interface(X[:, :n], xh, uh), uh

    def drift(X, mk, U):
        return np.concatenate([f(X[:, :n], U[0], mk), fh(X[:, n:], U[1], mk)], axis=1)

    def observe(X):
        return np.concatenate([h1(X[:, :n]), hh1(X[:, n:])], axis=1)

    x0 = np.concatenate([np.atleast_2d(a), np.atleast_2d(ahat)], axis=1)
    x0 = np.broadcast_to(x0, (len(signals), x0.shape[1]))
    Y = integrate(x0, drift, chans, noises, dt, steps, modes, ctrl, observe)
    return Y[..., :q], Y[..., q:]
