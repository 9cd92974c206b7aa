"""Output-error bound of a simulation certificate and its Monte-Carlo check.

With linear alpha(r) = c r and decay rate kappa the certificate gives

    E|zeta(t) - zetah(t)|^2 <= (1/c) (exp(-kappa t) E[V(a, ah, pi(0))] + psi_ext(E|uh|^2_inf) / kappa).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .markov import sample_initial_mode, sample_switch_signal
from .model import Scenario, SimulationCertificate
from .rng import substream
from .sim import SimulationError, grid_steps, joint_channels, sample_noise, simulate_coupled_batch, stack_noise

__all__ = [
    "ErrorBoundCurve",
    "EmpiricalCurve",
    "ViolationReport",
    "expected_initial_value",
    "bound_curve",
    "scenario_interface",
    "monte_carlo_error",
    "compare",
    "write_curves_csv",
]


def _psi(name: str, r: float) -> float:
    if name != "zero":
        raise ValueError(f"unsupported psi_ext {name!r}")
    return 0.0


@dataclass(frozen=True, eq=False)
class ErrorBoundCurve:
    times: np.ndarray
    values: np.ndarray
    kappa: float
    alpha_coeff: float
    initial_value: float
    psi_ext: str = "zero"

    def beta(self, r, t):
        return np.asarray(r) * np.exp(-self.kappa * np.asarray(t)) / self.alpha_coeff


@dataclass(frozen=True, eq=False)
class EmpiricalCurve:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    runs: int


@dataclass
class ViolationReport:
    times: list[float] = field(default_factory=list)
    excess: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.times

    def __str__(self):
        if self.ok:
            return "empirical error consistent with the bound"
        worst = int(np.argmax(self.excess))
        return (f"{len(self.times)} grid times with mean - 2 SE above the bound; "
                f"first at t={self.times[0]:g}, worst excess {self.excess[worst]:.4g} at t={self.times[worst]:g}")


def expected_initial_value(cert: SimulationCertificate, a, ahat, p0: Sequence[float]) -> float:
    """E[V(a, ah, pi(0))] for deterministic initial states and an initial mode law."""
    p0 = np.asarray(p0, float)
    if p0.size != len(cert.Qs) or np.any(p0 < 0) or not np.isclose(p0.sum(), 1.0):
        raise ValueError(f"initial mode distribution {p0.tolist()} is not a law on {len(cert.Qs)} modes")
    return float(sum(p * cert.value(a, ahat, j)[0] for j, p in enumerate(p0, start=1)))


def bound_curve(cert: SimulationCertificate, a, ahat, p0: Sequence[float], uhat_bound: float,
                times) -> ErrorBoundCurve:
    if not cert.kappa > 0:
        raise ValueError(f"decay rate must be positive, got {cert.kappa}")
    times = np.asarray(times, float)
    ev = expected_initial_value(cert, a, ahat, p0)
    vals = (np.exp(-cert.kappa * times) * ev + _psi(cert.psi_ext, uhat_bound) / cert.kappa) / cert.alpha_coeff
    return ErrorBoundCurve(times, vals, cert.kappa, cert.alpha_coeff, ev, cert.psi_ext)


def scenario_interface(scenario: Scenario) -> Callable:
    """u = -chi (x - H xh) + H uh on row batches."""
    H, chi = scenario.lift(), scenario.chi

    def interface(X, Xh, Uh):
        return -chi * (X - Xh @ H.T) + Uh @ H.T

    return interface


def monte_carlo_error(scenario: Scenario, runs: int, seed: int = 0, dt: float | None = None,
                      horizon: float | None = None, abstract_controller: Callable | None = None,
                      interface: Callable | None = None, batch: int = 50) -> EmpiricalCurve:
    """Mean and standard error of |zeta(t) - zetah(t)|^2 over coupled runs.

    Run r draws its initial mode, switching path and noise from
    ``substream(seed, "mc", r)``, so a smaller run count reproduces a prefix.
    Without ``abstract_controller`` the abstract input is zero.
    """
    if runs < 2:
        raise ValueError("need at least two runs for a standard error")
    s = scenario.simulation
    dt = s.dt if dt is None else dt
    horizon = s.horizon if horizon is None else horizon
    if s.a is None or s.ahat is None:
        raise ValueError("scenario has no initial states")
    steps = grid_steps(dt, horizon)
    conc, abst = scenario.concrete, scenario.abstract
    chans = joint_channels(conc, abst)
    interface = interface or scenario_interface(scenario)
    sq = np.empty((runs, steps + 1))
    for start in range(0, runs, batch):
        idx = range(start, min(start + batch, runs))
        sig, nz = [], []
        for r in idx:
            g = substream(seed, "mc", r)
            sig.append(sample_switch_signal(conc.chain, sample_initial_mode(s.p0, g), horizon, g))
            nz.append(sample_noise(chans.n_brownian, chans.rates, dt, steps, g))
        try:
            Y, Yh = simulate_coupled_batch(conc, abst, interface, s.a, s.ahat, sig, dt, horizon,
                                           stack_noise(nz), abstract_controller)
        except SimulationError as exc:
            raise SimulationError(exc.step, start + exc.run, exc.reason) from exc
        sq[start:start + len(idx)] = np.sum((Y - Yh) ** 2, axis=-1)
    return EmpiricalCurve(np.arange(steps + 1) * dt, sq.mean(axis=0),
                          sq.std(axis=0, ddof=1) / np.sqrt(runs), runs)


def compare(empirical: EmpiricalCurve, bound: ErrorBoundCurve) -> ViolationReport:
    """Grid times where the empirical mean exceeds the bound by more than two standard errors."""
    if empirical.times.shape != bound.times.shape or not np.allclose(empirical.times, bound.times):
        raise ValueError("empirical curve and bound must share the time grid")
    excess = empirical.mean - 2 * empirical.stderr - bound.values
    bad = np.nonzero(excess > 0)[0]
    return ViolationReport([float(empirical.times[k]) for k in bad], [float(excess[k]) for k in bad])


def write_curves_csv(path: str | Path, empirical: EmpiricalCurve, bound: ErrorBoundCurve) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time", "mean", "se", "bound"])
        for row in zip(empirical.times, empirical.mean, empirical.stderr, bound.values):
            wr.writerow([repr(float(v)) for v in row])
