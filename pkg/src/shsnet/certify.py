"""Generator of quadratic functions along linear jump-diffusions and sampled
certificate checks.

For S(z) = z^T Q z and dz = f dt + sum_k G_k z dW^k + sum_k R_k z dP^k the
generator is

    LS(z) = 2 z^T Q f + sum_k (G_k z)^T Q (G_k z) + sum_k lam_k [S(z + R_k z) - S(z)].

The existential input of the dissipation inequality is always supplied by an
interface function; nothing here searches over inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag

from .model import LinearSubsystem, SimulationCertificate, StorageCertificate, SwitchedNetwork
from .sim import LinearChannels, integrate, sample_noise_bulk

__all__ = [
    "GeneratorResult",
    "JointDynamics",
    "CheckReport",
    "DynkinEstimate",
    "lgen_quadratic",
    "pair_dynamics",
    "network_pair_dynamics",
    "storage_margin",
    "check_storage_inequality",
    "check_alpha_bound",
    "check_simulation_inequality",
    "simulation_margin",
    "dynkin_oracle",
]


@dataclass(frozen=True)
class GeneratorResult:
    drift: np.ndarray | float
    diffusion: np.ndarray | float
    jump: np.ndarray | float

    @property
    def value(self):
        return self.drift + self.diffusion + self.jump


def _quad(Q, Z):
    return np.einsum("...i,ij,...j->...", Z, Q, Z)


def lgen_quadratic(Qs, drift, diffusion_maps: Sequence[np.ndarray], reset_maps: Sequence[np.ndarray],
                   rates, point) -> GeneratorResult:
    """Generator of z -> z^T Qs z at ``point`` (one point or a batch of rows).

    ``drift`` is the drift evaluated at the point(s) or a callable of them.
    """
    Q = np.asarray(Qs, float)
    Q = (Q + Q.T) / 2
    z = np.asarray(point, float)
    f = drift(z) if callable(drift) else np.asarray(drift, float)
    if f.shape != z.shape or Q.shape != (z.shape[-1],) * 2:
        raise ValueError(f"inconsistent shapes: Qs {Q.shape}, drift {f.shape}, point {z.shape}")
    d_term = 2 * np.einsum("...i,ij,...j->...", z, Q, f)
    s_term = sum((_quad(Q, z @ np.asarray(G, float).T) for G in diffusion_maps), np.zeros(z.shape[:-1]))
    S0 = _quad(Q, z)
    j_term = np.zeros(z.shape[:-1])
    for R, lam in zip(reset_maps, np.atleast_1d(rates)):
        j_term = j_term + lam * (_quad(Q, z + z @ np.asarray(R, float).T) - S0)
    if z.ndim == 1:
        return GeneratorResult(float(d_term), float(s_term), float(j_term))
    return GeneratorResult(d_term, s_term, j_term)


@dataclass(frozen=True, eq=False)
class JointDynamics:
    """Affine-drift jump-diffusion in the joint state z: drift(Z) on row batches."""

    drift: Callable
    G: tuple
    R: tuple
    rates: np.ndarray

    def generator(self, Qs, Z) -> GeneratorResult:
        return lgen_quadratic(Qs, self.drift, self.G, self.R, self.rates, Z)


def _shared_maps(sys_maps, abs_maps, nh, what, pad=False):
    """Joint channel maps; ``pad`` gives a noise-free abstraction zero blocks."""
    if pad:
        return [block_diag(g, np.zeros((nh, nh))) for g in sys_maps]
    if len(sys_maps) != len(abs_maps):
        raise ValueError(f"system and abstraction must share {what} channels "
                         f"({len(sys_maps)} vs {len(abs_maps)})")
    return [block_diag(g, gh) for g, gh in zip(sys_maps, abs_maps)]


def _shared_rates(r, rh, pad=False):
    if not pad and (len(r) != len(rh) or not np.allclose(r, rh)):
        raise ValueError("system and abstraction must share Poisson channels with equal rates")
    return np.asarray(r, float)


def pair_dynamics(concrete: LinearSubsystem, abstract: LinearSubsystem, interface: Callable,
                  uh, w, wh) -> JointDynamics:
    """Joint dynamics of a subsystem pair with the abstract input and both
    internal inputs frozen; the concrete input comes from ``interface``."""
    n = concrete.n
    uh, w, wh = (np.asarray(v, float) for v in (uh, w, wh))

    def drift(Z):
        x, xh = Z[..., :n], Z[..., n:]
        u = interface(x, xh, np.broadcast_to(uh, xh.shape[:-1] + uh.shape[-1:]))
        return np.concatenate([concrete.drift(x, u, np.broadcast_to(w, x.shape[:-1] + w.shape[-1:])),
                               abstract.drift(xh, np.broadcast_to(uh, xh.shape[:-1] + uh.shape[-1:]),
                                              np.broadcast_to(wh, xh.shape[:-1] + wh.shape[-1:]))],
                              axis=-1)

    pad = abstract.n_brownian == 0 and abstract.n_poisson == 0
    return JointDynamics(
        drift,
        tuple(_shared_maps(concrete.diffusion, abstract.diffusion, abstract.n, "Brownian", pad)),
        tuple(_shared_maps(concrete.resets, abstract.resets, abstract.n, "Poisson", pad)),
        _shared_rates(concrete.rates, abstract.rates, pad),
    )


def network_pair_dynamics(system: SwitchedNetwork, abstraction: SwitchedNetwork, interface: Callable,
                          mode: int, uh) -> JointDynamics:
    n = system.n
    F, B = system.mode_matrix(mode), system.stacked("B")
    Fh, Bh = abstraction.mode_matrix(mode), abstraction.stacked("B")
    uh = np.asarray(uh, float)

    def drift(Z):
        x, xh = Z[..., :n], Z[..., n:]
        U = np.broadcast_to(uh, xh.shape[:-1] + uh.shape[-1:])
        return np.concatenate([x @ F.T + interface(x, xh, U) @ B.T, xh @ Fh.T + U @ Bh.T], axis=-1)

    G, R, rates = system.channels()
    Gh, Rh, rh = abstraction.channels()
    pad = not Gh and not Rh
    return JointDynamics(drift,
                         tuple(_shared_maps(G, Gh, abstraction.n, "Brownian", pad)),
                         tuple(_shared_maps(R, Rh, abstraction.n, "Poisson", pad)),
                         _shared_rates(rates, rh, pad))


@dataclass
class CheckReport:
    name: str
    samples: int
    worst_margin: float
    worst_point: dict
    violations: int
    witnesses: list = field(default_factory=list)
    tol: float = 1e-9
    informational: bool = False
    notes: str = ""

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def __str__(self):
        status = "INFO" if self.informational else ("pass" if self.passed else "FAIL")
        lines = [f"[{status}] {self.name}: {self.samples} samples, {self.violations} violations, "
                 f"worst margin {self.worst_margin:.6e} (tol {self.tol:g})"]
        if self.notes:
            lines.append(f"    {self.notes}")
        for w in self.witnesses[:3]:
            parts = ", ".join(f"{k}={np.array2string(np.asarray(v), precision=4, threshold=8)}"
                              for k, v in w.items())
            lines.append(f"    witness: {parts}")
        return "\n".join(lines)


def _box(rng, radius, shape):
    return rng.uniform(-radius, radius, size=shape)


def _report(name, margins, slack, points: dict, tol, max_witnesses=5, **kw) -> CheckReport:
    bad = np.nonzero(margins < -(tol + slack))[0]
    k = int(np.argmin(margins))
    pick = lambda i: {key: v[i] for key, v in points.items()} | {"margin": margins[i]}
    return CheckReport(name, margins.size, float(margins[k]), pick(k), int(bad.size),
                       [pick(i) for i in bad[:max_witnesses]], tol, **kw)


def storage_margin(cert: StorageCertificate, concrete: LinearSubsystem, abstract: LinearSubsystem,
                   interface: Callable, x, xh, uh, w, wh):
    """RHS minus LHS of the dissipation inequality at row batches; >= 0 means satisfied.

    Also returns a rounding scale for the comparison.
    """
    Z = np.concatenate([x, xh], axis=1)
    dyn = pair_dynamics(concrete, abstract, interface, uh, w, wh)
    gen = dyn.generator(cert.Qs, Z)
    S = _quad(cert.Qs, Z)
    v = np.concatenate([w @ cert.W.T - wh @ cert.What.T,
                        x @ concrete.C2.T - (xh @ abstract.C2.T) @ cert.H.T], axis=1)
    supply = _quad(cert.X, v)
    margin = -cert.kappa * S + supply - gen.value
    scale = np.abs(gen.drift) + np.abs(gen.diffusion) + np.abs(gen.jump) + cert.kappa * S + np.abs(supply)
    return margin, scale


def check_storage_inequality(cert: StorageCertificate, concrete: LinearSubsystem,
                             abstract: LinearSubsystem, interface: Callable, samples: int = 10_000,
                             radius: float = 10.0, rng: np.random.Generator | None = None,
                             tol: float = 1e-9, rtol: float = 1e-13) -> CheckReport:
    """Sample (x, xh, uh, w, wh) uniformly in the box of half-width ``radius``
    and test LS <= -kappa S + psi_ext + supply at every sample.

    A sample violates when its margin is below ``-(tol + rtol * scale)`` where
    ``scale`` bounds the magnitude of the summed terms (floating-point slack).
    """
    rng = rng or np.random.default_rng(0)
    pts = {
        "x": _box(rng, radius, (samples, concrete.n)),
        "xh": _box(rng, radius, (samples, abstract.n)),
        "uh": _box(rng, radius, (samples, abstract.m)),
        "w": _box(rng, radius, (samples, concrete.p)),
        "wh": _box(rng, radius, (samples, abstract.p)),
    }
    margin, scale = storage_margin(cert, concrete, abstract, interface, **pts)
    return _report("storage inequality", margin, rtol * scale, pts, tol)


def check_alpha_bound(cert: StorageCertificate, concrete: LinearSubsystem, abstract: LinearSubsystem,
                      samples: int = 10_000, radius: float = 10.0,
                      rng: np.random.Generator | None = None, tol: float = 1e-9,
                      rtol: float = 1e-13) -> CheckReport:
    """Test alpha |C1 x - C1h xh|^2 <= S(x, xh) at uniform samples."""
    rng = rng or np.random.default_rng(0)
    pts = {"x": _box(rng, radius, (samples, concrete.n)), "xh": _box(rng, radius, (samples, abstract.n))}
    dy = pts["x"] @ concrete.C1.T - pts["xh"] @ abstract.C1.T
    lhs = cert.alpha_coeff * np.sum(dy ** 2, axis=1)
    S = _quad(cert.Qs, np.concatenate([pts["x"], pts["xh"]], axis=1))
    return _report("alpha bound", S - lhs, rtol * (np.abs(S) + lhs), pts, tol)


def check_simulation_inequality(cert: SimulationCertificate, system: SwitchedNetwork,
                                abstraction: SwitchedNetwork, interface: Callable,
                                samples: int = 10_000, radius: float = 10.0,
                                rng: np.random.Generator | None = None, modes: Sequence[int] | None = None,
                                tol: float = 1e-9, rtol: float = 1e-13,
                                informational: bool = False) -> list[CheckReport]:
    """Test LV(x, xh, j) <= -kappa V(x, xh, j) + psi_ext per mode at uniform samples.

    Internal inputs are eliminated by the topologies; ``interface(x, xh, uh)``
    supplies the concrete input.
    """
    rng = rng or np.random.default_rng(0)
    modes = modes or range(1, len(system.topology) + 1)
    out = []
    for j in modes:
        pts = {"x": _box(rng, radius, (samples, system.n)),
               "xh": _box(rng, radius, (samples, abstraction.n)),
               "uh": _box(rng, radius, (samples, abstraction.m))}
        margin, scale = simulation_margin(cert, system, abstraction, interface, j, **pts)
        out.append(_report(f"simulation inequality, mode {j}", margin, rtol * scale, pts, tol,
                           informational=informational))
    return out


def simulation_margin(cert: SimulationCertificate, system: SwitchedNetwork, abstraction: SwitchedNetwork,
                      interface: Callable, mode: int, x, xh, uh):
    """-kappa V - LV in ``mode`` at row batches, with a rounding scale."""
    Z = np.concatenate([np.atleast_2d(x), np.atleast_2d(xh)], axis=1)
    Q = cert.Qs[mode - 1]
    gen = network_pair_dynamics(system, abstraction, interface, mode, np.atleast_2d(uh)).generator(Q, Z)
    V = _quad(Q, Z)
    margin = -cert.kappa * V - gen.value
    return margin, np.abs(gen.drift) + np.abs(gen.diffusion) + np.abs(gen.jump) + cert.kappa * V


@dataclass(frozen=True)
class DynkinEstimate:
    mean: float
    stderr: float
    runs: int
    delta: float


def dynkin_oracle(Qs, dynamics: JointDynamics, point, delta: float = 1e-3, runs: int = 100_000,
                  rng: np.random.Generator | None = None, chunk: int = 50_000) -> DynkinEstimate:
    """Monte-Carlo estimate of the generator: (E[S(Z_delta)] - S(z)) / delta.

    Paths come from the jump-diffusion integrator over one step of length
    ``delta`` with exact jump times; the inputs are held at their values at z.
    """
    rng = rng or np.random.default_rng(0)
    Q = np.asarray(Qs, float)
    z = np.asarray(point, float)
    S0 = float(_quad(Q, z))
    chans = LinearChannels(dynamics.G, dynamics.R, dynamics.rates)
    diffs = []
    left = runs
    while left > 0:
        r = min(chunk, left)
        noise = sample_noise_bulk(chans.n_brownian, chans.rates, delta, 1, r, rng)
        Y = integrate(np.broadcast_to(z, (r, z.size)), lambda X, mk, U: dynamics.drift(X), chans, noise,
                      delta, 1, observe=lambda X: _quad(Q, X))
        diffs.append((Y[:, 1] - S0) / delta)
        left -= r
    d = np.concatenate(diffs)
    return DynkinEstimate(float(d.mean()), float(d.std(ddof=1) / np.sqrt(d.size)), d.size, delta)
