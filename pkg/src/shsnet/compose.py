"""Compositional conditions for a network of storage certificates.

For every mode j the composition needs a negative-semidefinite congruence
product of the interleaved supply matrix (``check_condition_13``) and an
abstract topology matching W M_j H = What Mhat_j (``compute_Mhat``).  When
both hold, the weighted sum of the storage functions is a simulation
function for the whole network (``compose_ssf``).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import block_diag

from .model import SimulationCertificate, StorageCertificate

__all__ = [
    "DEFAULT_TOL",
    "CompositionWeights",
    "ModeCheck",
    "CompositionReport",
    "MhatResult",
    "assemble_X",
    "check_condition_13",
    "compute_Mhat",
    "check_composition",
    "compose_ssf",
    "composed_alpha",
]

DEFAULT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CompositionWeights:
    """Weights mu[i, j] > 0 for subsystem i (0-based) and mode j+1."""

    mu: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        if mu.ndim != 2:
            raise ValueError("weights must be an N x P array")
        if np.any(mu <= 0):
            raise ValueError("composition weights must be strictly positive")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def uniform(cls, N: int, P: int, value: float = 1.0) -> "CompositionWeights":
        return cls(np.full((N, P), value))

    def mode(self, j: int) -> np.ndarray:
        return self.mu[:, j - 1]


def assemble_X(weights: Sequence[float], certs: Sequence[StorageCertificate]) -> np.ndarray:
    """Interleave the weighted supply blocks of all subsystems.

    [[diag(mu_i X11_i), diag(mu_i X12_i)], [diag(mu_i X21_i), diag(mu_i X22_i)]]
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(certs),):
        raise ValueError(f"need one weight per certificate, got {weights.shape} for {len(certs)}")
    for c in certs:
        if c.X11.shape[0] != c.X12.shape[0] or c.X22.shape[0] != c.X12.shape[1] or \
                c.X21.shape != c.X12.shape[::-1]:
            raise ValueError("supply blocks X11, X12, X21, X22 are not conformal")
    blk = {name: block_diag(*[w * getattr(c, name) for w, c in zip(weights, certs)])
           for name in ("X11", "X12", "X21", "X22")}
    return np.block([[blk["X11"], blk["X12"]], [blk["X21"], blk["X22"]]])


def check_condition_13(W: np.ndarray, Mj: np.ndarray, X: np.ndarray,
                       tol: float = DEFAULT_TOL) -> tuple[float, bool]:
    """Largest eigenvalue of [W Mj; I]^T X [W Mj; I] and whether it is <= tol."""
    q = Mj.shape[1]
    L = np.vstack([W @ Mj, np.eye(q)])
    if X.shape != (L.shape[0], L.shape[0]):
        raise ValueError(f"X has shape {X.shape}, expected {(L.shape[0],) * 2}")
    prod = L.T @ X @ L
    prod = (prod + prod.T) / 2
    lam = float(np.linalg.eigvalsh(prod)[-1])
    return lam, lam <= tol


class MhatResult(NamedTuple):
    Mhat: np.ndarray
    residual: float


def compute_Mhat(W: np.ndarray, Mj: np.ndarray, H: np.ndarray, What: np.ndarray) -> MhatResult:
    """Least-squares Mhat_j for W Mj H = What Mhat_j and the Frobenius residual."""
    target = W @ Mj @ H
    if np.linalg.matrix_rank(What) < What.shape[1]:
        raise ValueError(f"What ({What.shape}) is rank deficient; Mhat is not unique")
    Mhat = np.linalg.lstsq(What, target, rcond=None)[0]
    return MhatResult(Mhat, float(np.linalg.norm(target - What @ Mhat)))


def composed_alpha(weights: CompositionWeights, certs: Sequence[StorageCertificate]) -> float:
    """Coefficient of the network-level linear alpha.

    For linear alpha_i(r) = c_i r the worst-case split of V over subsystems
    gives alpha_bar_j(s) = s max_i 1/(c_i mu_ij); alpha is the inverse of the
    largest of these over modes.
    """
    c = np.array([cert.alpha_coeff for cert in certs])
    return float(np.min(c[:, None] * weights.mu))


@dataclass
class ModeCheck:
    mode: int
    max_eigenvalue: float
    eig_pass: bool
    residual: float
    residual_pass: bool
    Mhat: np.ndarray
    supplied: bool = False

    @property
    def passed(self) -> bool:
        return self.eig_pass and self.residual_pass


@dataclass
class CompositionReport:
    modes: list[ModeCheck] = field(default_factory=list)
    kappa: float = float("nan")
    alpha_coeff: float = float("nan")
    tol: float = DEFAULT_TOL

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.modes)

    def __str__(self):
        lines = [f"composition: kappa={self.kappa:.6g} alpha={self.alpha_coeff:.6g} tol={self.tol:g}"]
        for m in self.modes:
            src = "supplied" if m.supplied else "least-squares"
            lines.append(
                f"  mode {m.mode}: max eig {m.max_eigenvalue:.3e} [{'pass' if m.eig_pass else 'FAIL'}], "
                f"matching residual ({src}) {m.residual:.6g} [{'pass' if m.residual_pass else 'FAIL'}]")
        return "\n".join(lines)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["mode", "max_eigenvalue", "eig_pass", "residual", "residual_pass"])
            for m in self.modes:
                wr.writerow([m.mode, repr(m.max_eigenvalue), int(m.eig_pass), repr(m.residual),
                             int(m.residual_pass)])


def check_composition(weights: CompositionWeights, certs: Sequence[StorageCertificate],
                      topology: Sequence[np.ndarray], Mhats: Sequence[np.ndarray] | None = None,
                      tol: float = DEFAULT_TOL) -> CompositionReport:
    """Run both matrix conditions for every mode.

    With ``Mhats`` given the supplied abstract matrices are validated instead
    of solved for.
    """
    W = block_diag(*[c.W for c in certs])
    What = block_diag(*[c.What for c in certs])
    H = block_diag(*[c.H for c in certs])
    rep = CompositionReport(kappa=min(c.kappa for c in certs),
                            alpha_coeff=composed_alpha(weights, certs), tol=tol)
    for j, Mj in enumerate(topology, start=1):
        X = assemble_X(weights.mode(j), certs)
        lam, ok = check_condition_13(W, Mj, X, tol)
        if Mhats is None:
            Mhat, res = compute_Mhat(W, Mj, H, What)
        else:
            Mhat = np.asarray(Mhats[j - 1], float)
            res = float(np.linalg.norm(W @ Mj @ H - What @ Mhat))
        rep.modes.append(ModeCheck(j, lam, ok, res, res <= tol, Mhat, supplied=Mhats is not None))
    return rep


def _pair_indices(certs: Sequence[StorageCertificate]):
    n = [c.H.shape[0] for c in certs]
    nh = [c.H.shape[1] for c in certs]
    xo = np.concatenate([[0], np.cumsum(n)])
    ho = np.concatenate([[0], np.cumsum(nh)]) + xo[-1]
    return [np.r_[xo[i]:xo[i + 1], ho[i]:ho[i + 1]] for i in range(len(certs))], int(xo[-1] + sum(nh))


def compose_ssf(weights: CompositionWeights, certs: Sequence[StorageCertificate],
                report: CompositionReport | None = None,
                allow_failed: bool = False) -> SimulationCertificate:
    """V(x, xh, j) = sum_i mu_ij S_i(x_i, xh_i) as a quadratic form in [x; xh].

    Refuses a failed ``report`` unless ``allow_failed``, in which case the
    result is returned with a warning.
    """
    if report is not None and not report.passed:
        bad = [m.mode for m in report.modes if not m.passed]
        msg = f"composition conditions fail in modes {bad}"
        if not allow_failed:
            raise ValueError(msg)
        warnings.warn(msg + "; composing anyway", stacklevel=2)
    idx, dim = _pair_indices(certs)
    Qs = []
    for j in range(weights.mu.shape[1]):
        Q = np.zeros((dim, dim))
        for i, c in enumerate(certs):
            Q[np.ix_(idx[i], idx[i])] += weights.mu[i, j] * c.Qs
        Qs.append(Q)
    return SimulationCertificate(tuple(Qs), kappa=min(c.kappa for c in certs),
                                 alpha_coeff=composed_alpha(weights, certs))
