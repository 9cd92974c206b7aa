"""Domain types: subsystems, switching networks, certificates and scenarios.

Mode labels are 1-based throughout (``1 .. P``), matching how topologies are
usually written down; ``TopologySet.matrices[j - 1]`` is the matrix for mode j.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag

__all__ = [
    "LinearSubsystem",
    "CallbackSubsystem",
    "MarkovChain",
    "TopologySet",
    "SwitchedNetwork",
    "StorageCertificate",
    "SimulationCertificate",
    "SimulationSettings",
    "SynthesisSettings",
    "Scenario",
    "ValidationReport",
    "validate_network",
    "noise_free",
    "fully_connected_topology",
    "cyclic_topology",
    "lift_matrix",
    "tracking_gram",
    "paper_kappa",
    "build_paper_example",
    "PAPER_ZETA0",
    "PAPER_ZETAHAT0",
]


def _frozen(a, ndim: int = 2) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LinearSubsystem:
    """Linear jump-diffusion subsystem.

    dx = (A x + B u + D w) dt + sum_k G_k x dW^k + sum_k R_k x dP^k,
    external output C1 x, internal output C2 x.  ``rates[k]`` is the
    intensity of Poisson channel k.
    """

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    diffusion: tuple[np.ndarray, ...] = ()
    resets: tuple[np.ndarray, ...] = ()
    rates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("A", "B", "D", "C1", "C2"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "diffusion", tuple(_frozen(g) for g in self.diffusion))
        object.__setattr__(self, "resets", tuple(_frozen(r) for r in self.resets))
        object.__setattr__(self, "rates", _frozen(np.atleast_1d(self.rates), ndim=1))

        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n or self.D.shape[0] != n:
            raise ValueError(f"B and D need {n} rows, got {self.B.shape} and {self.D.shape}")
        if self.C1.shape[1] != n or self.C2.shape[1] != n:
            raise ValueError(f"C1 and C2 need {n} columns, got {self.C1.shape} and {self.C2.shape}")
        for k, g in enumerate(self.diffusion):
            if g.shape != (n, n):
                raise ValueError(f"diffusion channel {k} must be {n}x{n}, got {g.shape}")
        for k, r in enumerate(self.resets):
            if r.shape != (n, n):
                raise ValueError(f"reset channel {k} must be {n}x{n}, got {r.shape}")
        if self.rates.shape != (len(self.resets),):
            raise ValueError(f"need one rate per reset channel ({len(self.resets)}), got {self.rates.shape}")
        if np.any(self.rates < 0) or not np.all(np.isfinite(self.rates)):
            raise ValueError("jump rates must be finite and nonnegative")

    n = property(lambda self: self.A.shape[0])
    m = property(lambda self: self.B.shape[1])
    p = property(lambda self: self.D.shape[1])
    q1 = property(lambda self: self.C1.shape[0])
    q2 = property(lambda self: self.C2.shape[0])
    n_brownian = property(lambda self: len(self.diffusion))
    n_poisson = property(lambda self: len(self.resets))

    def drift(self, x, u, w):
        return x @ self.A.T + u @ self.B.T + w @ self.D.T

    @classmethod
    def paper(cls, n: int, varpi: float, tau: float, lam: float, C1=None) -> "LinearSubsystem":
        """f = w + u, sigma = varpi x, rho = tau x, h2 = x, one channel each."""
        eye = np.eye(n)
        if C1 is None:
            C1 = np.zeros((1, n))
            C1[0, 0] = 1.0
        return cls(A=np.zeros((n, n)), B=eye, D=eye, C1=C1, C2=eye,
                   diffusion=(varpi * eye,), resets=(tau * eye,), rates=np.array([lam]))


@dataclass(frozen=True, eq=False)
class CallbackSubsystem:
    """Simulation-only subsystem with user callbacks.

    Callbacks act on batches: ``f(x, u, w)`` with arrays of shape (R, n) etc.
    returns (R, n); ``sigma(x)`` returns (R, n, n_brownian); ``rho(x)``
    returns (R, n, n_poisson).  Certificates cannot be checked against this
    type because its generator has no closed form.
    """

    n: int
    m: int
    p: int
    q1: int
    q2: int
    f: Callable
    h1: Callable
    h2: Callable
    sigma: Callable | None = None
    rho: Callable | None = None
    n_brownian: int = 0
    rates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "rates", _frozen(np.atleast_1d(self.rates), ndim=1))
        if np.any(self.rates < 0):
            raise ValueError("jump rates must be nonnegative")

    n_poisson = property(lambda self: len(self.rates))

    def drift(self, x, u, w):
        return self.f(x, u, w)


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Continuous-time Markov chain on modes 1..P with generator ``Q``."""

    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", _frozen(self.Q))

    @property
    def P(self) -> int:
        return self.Q.shape[0]

    def problems(self, tol: float = 1e-12) -> list[str]:
        Q = self.Q
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            return [f"generator must be square, got shape {Q.shape}"]
        out = []
        off = Q - np.diag(np.diag(Q))
        for i, j in zip(*np.nonzero(off < 0)):
            out.append(f"generator off-diagonal entry ({i + 1},{j + 1}) is negative: {Q[i, j]}")
        for i, s in enumerate(Q.sum(axis=1)):
            if abs(s) > tol:
                out.append(f"generator row sum of row {i + 1} is {s}, expected 0")
        return out

    def exit_rate(self, mode: int) -> float:
        return -float(self.Q[mode - 1, mode - 1])

    @classmethod
    def symmetric(cls, rate: float, P: int = 2) -> "MarkovChain":
        Q = np.full((P, P), rate / (P - 1))
        np.fill_diagonal(Q, -rate)
        return cls(Q)


@dataclass(frozen=True, eq=False)
class TopologySet:
    matrices: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "matrices", tuple(_frozen(M) for M in self.matrices))

    def __len__(self):
        return len(self.matrices)

    def __getitem__(self, mode: int) -> np.ndarray:
        """Matrix of mode ``mode`` (1-based)."""
        if not 1 <= mode <= len(self.matrices):
            raise IndexError(f"mode {mode} outside 1..{len(self.matrices)}")
        return self.matrices[mode - 1]


@dataclass(frozen=True, eq=False)
class SwitchedNetwork:
    """N subsystems coupled by w = M_{pi(t)} [h2_1(x_1); ...; h2_N(x_N)]."""

    subsystems: tuple
    topology: TopologySet
    chain: MarkovChain

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        if not isinstance(self.topology, TopologySet):
            object.__setattr__(self, "topology", TopologySet(tuple(self.topology)))

    @property
    def N(self) -> int:
        return len(self.subsystems)

    @property
    def sizes(self) -> list[int]:
        return [s.n for s in self.subsystems]

    n = property(lambda self: sum(s.n for s in self.subsystems))
    m = property(lambda self: sum(s.m for s in self.subsystems))
    p = property(lambda self: sum(s.p for s in self.subsystems))
    q = property(lambda self: sum(s.q1 for s in self.subsystems))
    q2 = property(lambda self: sum(s.q2 for s in self.subsystems))

    @property
    def is_linear(self) -> bool:
        return all(isinstance(s, LinearSubsystem) for s in self.subsystems)

    def offsets(self, attr: str = "n") -> np.ndarray:
        return np.concatenate([[0], np.cumsum([getattr(s, attr) for s in self.subsystems])])

    def _need_linear(self):
        if not self.is_linear:
            raise TypeError("operation requires every subsystem to be a LinearSubsystem")

    def stacked(self, name: str) -> np.ndarray:
        """Block-diagonal stack of a subsystem matrix (A, B, D, C1 or C2)."""
        self._need_linear()
        return block_diag(*[getattr(s, name) for s in self.subsystems])

    def mode_matrix(self, mode: int) -> np.ndarray:
        """Closed drift matrix A + D M_j C2 of the interconnection in ``mode``."""
        return self.stacked("A") + self.stacked("D") @ self.topology[mode] @ self.stacked("C2")

    def channels(self) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Network-level diffusion maps, reset maps and rates.

        Channels of subsystem i act on the block of x_i only; channel order
        is subsystem-major.
        """
        self._need_linear()
        off = self.offsets()
        n = self.n
        G, R, rates = [], [], []
        for i, s in enumerate(self.subsystems):
            sl = slice(off[i], off[i + 1])
            for g in s.diffusion:
                full = np.zeros((n, n))
                full[sl, sl] = g
                G.append(full)
            for r, lam in zip(s.resets, s.rates):
                full = np.zeros((n, n))
                full[sl, sl] = r
                R.append(full)
                rates.append(lam)
        return G, R, np.array(rates, dtype=float)

    def drift(self, x, u, mode_idx):
        """Batch drift for states ``x`` (R, n), inputs ``u`` (R, m) and 0-based mode indices."""
        xoff, uoff, woff = self.offsets("n"), self.offsets("m"), self.offsets("p")
        h2 = np.concatenate(
            [s.h2(x[:, xoff[i]:xoff[i + 1]]) if isinstance(s, CallbackSubsystem)
             else x[:, xoff[i]:xoff[i + 1]] @ s.C2.T for i, s in enumerate(self.subsystems)],
            axis=1,
        )
        w = np.empty((x.shape[0], self.p))
        for j, M in enumerate(self.topology.matrices):
            sel = mode_idx == j
            if np.any(sel):
                w[sel] = h2[sel] @ M.T
        return np.concatenate(
            [s.drift(x[:, xoff[i]:xoff[i + 1]], u[:, uoff[i]:uoff[i + 1]], w[:, woff[i]:woff[i + 1]])
             for i, s in enumerate(self.subsystems)],
            axis=1,
        )


@dataclass(frozen=True, eq=False)
class StorageCertificate:
    """Quadratic storage function S(x, xh) = z^T Qs z, z = [x; xh], with its supply data.

    Only the zero external-gain function is supported (``psi_ext == "zero"``)
    and alpha is linear, alpha(r) = alpha_coeff * r.
    """

    Qs: np.ndarray
    kappa: float
    alpha_coeff: float
    W: np.ndarray
    What: np.ndarray
    H: np.ndarray
    X11: np.ndarray
    X12: np.ndarray
    X21: np.ndarray
    X22: np.ndarray
    psi_ext: str = "zero"

    def __post_init__(self):
        for name in ("Qs", "W", "What", "H", "X11", "X12", "X21", "X22"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.psi_ext != "zero":
            raise ValueError("only psi_ext = 'zero' is supported")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.alpha_coeff > 0:
            raise ValueError(f"alpha coefficient must be positive, got {self.alpha_coeff}")
        Qs = self.Qs
        if Qs.shape[0] != Qs.shape[1] or not np.allclose(Qs, Qs.T, atol=1e-12):
            raise ValueError("Qs must be square and symmetric")
        if np.linalg.eigvalsh(Qs).min() < -1e-9 * max(1.0, np.abs(Qs).max()):
            raise ValueError("Qs must be positive semidefinite")
        X = self.X
        if not np.allclose(X, X.T, atol=1e-12):
            raise ValueError("supply matrix [X11 X12; X21 X22] must be symmetric")

    @property
    def X(self) -> np.ndarray:
        return np.block([[self.X11, self.X12], [self.X21, self.X22]])

    def value(self, x, xh):
        z = np.concatenate([np.atleast_2d(x), np.atleast_2d(xh)], axis=-1)
        return np.einsum("ri,ij,rj->r", z, self.Qs, z)


@dataclass(frozen=True, eq=False)
class SimulationCertificate:
    """Mode-indexed quadratic V(x, xh, j) = z^T Qs[j-1] z with z = [x; xh]."""

    Qs: tuple[np.ndarray, ...]
    kappa: float
    alpha_coeff: float
    psi_ext: str = "zero"

    def __post_init__(self):
        object.__setattr__(self, "Qs", tuple(_frozen(Q) for Q in self.Qs))
        if self.psi_ext != "zero":
            raise ValueError("only psi_ext = 'zero' is supported")

    def value(self, x, xh, mode: int):
        z = np.concatenate([np.atleast_2d(x), np.atleast_2d(xh)], axis=-1)
        return np.einsum("ri,ij,rj->r", z, self.Qs[mode - 1], z)


@dataclass(frozen=True)
class SimulationSettings:
    dt: float = 1e-3
    horizon: float = 5.0
    runs: int = 100
    seed: int = 0
    a: np.ndarray | None = None
    ahat: np.ndarray | None = None
    atilde: np.ndarray | None = None
    p0: tuple[float, ...] = (0.5, 0.5)


@dataclass(frozen=True)
class SynthesisSettings:
    safe: tuple[tuple[float, float], ...] = ((-5.0, 5.0),) * 3
    targets: tuple[tuple[tuple[float, float], ...], ...] = (((1.6, 2.4),) * 3, ((-2.4, -1.6),) * 3)
    eta: float = 0.2
    tau_s: float = 0.3
    input_lower: float = -3.0
    input_upper: float = 3.0
    input_step: float = 0.5
    horizon: float = 60.0


@dataclass(frozen=True, eq=False)
class Scenario:
    concrete: SwitchedNetwork
    abstract: SwitchedNetwork
    certificates: tuple[StorageCertificate, ...]
    weights: np.ndarray
    chi: float
    simulation: SimulationSettings = SimulationSettings()
    synthesis: SynthesisSettings = SynthesisSettings()
    explicit_abstract: bool = False

    def lift(self) -> np.ndarray:
        """Block-diagonal H = diag(H_1, ..., H_N)."""
        return block_diag(*[c.H for c in self.certificates])


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __str__(self):
        if self.ok:
            return "network valid"
        return "\n".join(f"- {p}" for p in self.problems)


def validate_network(net: SwitchedNetwork) -> ValidationReport:
    """Collect every dimension mismatch and generator violation of ``net``."""
    rep = ValidationReport()
    rep.problems.extend(net.chain.problems())
    if len(net.topology) != net.chain.P:
        rep.problems.append(
            f"topology count {len(net.topology)} does not match chain mode count {net.chain.P}")
    expected = (net.p, net.q2)
    for j, M in enumerate(net.topology.matrices, start=1):
        if M.shape != expected:
            rep.problems.append(f"topology mode {j}: matrix shape {M.shape}, expected {expected}")
    return rep


def noise_free(net: SwitchedNetwork) -> SwitchedNetwork:
    """Same network with every diffusion and reset channel removed."""
    net._need_linear()
    subs = [LinearSubsystem(s.A, s.B, s.D, s.C1, s.C2) for s in net.subsystems]
    return SwitchedNetwork(subs, net.topology, net.chain)


def fully_connected_topology(n: int) -> np.ndarray:
    """-(1/n)(n I - 1 1^T): every node pulled toward the network average."""
    return -(n * np.eye(n) - np.ones((n, n))) / n


def cyclic_topology(n: int) -> np.ndarray:
    """Ring Laplacian: -2 on the diagonal, 1 to both ring neighbours."""
    eye = np.eye(n)
    return -2 * eye + np.roll(eye, 1, axis=1) + np.roll(eye, -1, axis=1)


def lift_matrix(sizes: Sequence[int]) -> np.ndarray:
    return block_diag(*[np.ones((k, 1)) for k in sizes])


def tracking_gram(H: np.ndarray) -> np.ndarray:
    """Qs such that z^T Qs z = |x - H xh|^2 for z = [x; xh]."""
    E = np.hstack([np.eye(H.shape[0]), -H])
    return E.T @ E


def paper_kappa(chi: float, lam: float, tau: float, varpi: float) -> float:
    return 2 * chi - 2 * lam * tau - varpi ** 2 - lam * tau ** 2


PAPER_ZETA0 = np.array([-1.99, 4.00, 1.00])
PAPER_ZETAHAT0 = np.array([-1.89, 4.10, 1.10])
PAPER_MHAT = (
    np.array([[-100.0, 50, 50], [50, -100, 50], [50, 50, -100]]) / 150,
    np.array([[-2.0, 1, 1], [1, -2, 1], [1, 1, -2]]),
)


def build_paper_example(N: int = 3, n_i: int = 50, varpi: float = 0.3, tau: float = 0.03,
                        chi: float = 1.0, lam: float = 10.0, switch_rate: float = 0.5,
                        abstract_topology: str = "least_squares") -> Scenario:
    """Network of N identical multiplicative-noise subsystems with scalar abstractions.

    ``abstract_topology`` is ``"least_squares"`` (abstract matrices solved from
    W M_j H = What Mhat_j) or ``"paper"`` (the fixed 3x3 consensus matrices,
    only for N = 3).
    """
    if N < 2:
        raise ValueError("need N >= 2 subsystems")
    for name, val in (("n_i", n_i), ("varpi", varpi), ("tau", tau), ("chi", chi), ("lam", lam)):
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    threshold = lam * tau + varpi ** 2 / 2 + lam * tau ** 2 / 2
    kappa = paper_kappa(chi, lam, tau, varpi)
    if chi <= threshold or kappa <= 0:
        raise ValueError(
            f"interface gain chi={chi} must exceed lam*tau + varpi^2/2 + lam*tau^2/2 = {threshold} "
            f"(kappa would be {kappa})")

    n = N * n_i
    chain = MarkovChain.symmetric(switch_rate)
    topo = TopologySet((fully_connected_topology(n), cyclic_topology(n)))
    conc = SwitchedNetwork([LinearSubsystem.paper(n_i, varpi, tau, lam) for _ in range(N)], topo, chain)

    ones = np.ones((n_i, 1))
    C1 = conc.subsystems[0].C1
    abst_subs = [LinearSubsystem.paper(1, varpi, tau, lam, C1=C1 @ ones) for _ in range(N)]
    cert = StorageCertificate(
        Qs=tracking_gram(ones), kappa=kappa,
        alpha_coeff=1.0 / np.linalg.eigvalsh(C1.T @ C1).max(),
        W=np.eye(n_i), What=ones, H=ones,
        X11=np.zeros((n_i, n_i)), X12=np.eye(n_i), X21=np.eye(n_i), X22=np.zeros((n_i, n_i)),
    )
    certs = (cert,) * N

    if abstract_topology == "paper":
        if N != 3:
            raise ValueError("the fixed abstract matrices exist only for N = 3")
        mhats = PAPER_MHAT
    elif abstract_topology == "least_squares":
        from .compose import compute_Mhat

        W, H, What = block_diag(*[c.W for c in certs]), lift_matrix([n_i] * N), block_diag(*[c.What for c in certs])
        mhats = tuple(compute_Mhat(W, M, H, What).Mhat for M in topo.matrices)
    else:
        raise ValueError(f"unknown abstract_topology {abstract_topology!r}")
    abst = SwitchedNetwork(abst_subs, TopologySet(mhats), chain)

    a = np.repeat(PAPER_ZETA0, n_i) if N == 3 else None
    ahat = PAPER_ZETAHAT0.copy() if N == 3 else None
    sim = SimulationSettings(a=a, ahat=ahat, atilde=None if ahat is None else ahat.copy())
    return Scenario(concrete=conc, abstract=abst, certificates=certs,
                    weights=np.ones((N, chain.P)), chi=chi, simulation=sim,
                    explicit_abstract=abstract_topology == "paper")
