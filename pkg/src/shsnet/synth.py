"""Grid-based symbolic controller synthesis for the reduced switching system.

The reduced system x' = M_j x + B u (mode j chosen by an adversary) is
sampled every ``tau_s`` with piecewise-constant inputs from a finite grid.
A cell/input pair is over-approximated by propagating the cell centre with the
exact flow and the cell radius with the growth bound expm(|M_j| tau_s) r; the
successors are the cells whose interior meets the resulting box, united over
all modes.  The transition map is never stored: the fixpoint kernels recompute
the boxes on the fly and test inclusion with a summed-area table.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from scipy.linalg import expm

from .model import Scenario, noise_free

__all__ = [
    "UniformGrid",
    "SymbolicModel",
    "ReachStay",
    "ControllerTable",
    "input_grid",
    "build_symbolic_model",
    "synthesize_reach_stay",
    "build_recurrence_supervisor",
    "synthesize_scenario",
]

# cell-index slack, in units of one cell width, for boxes that land on cell faces
_EPS = 1e-9
_MAX_DIM = 3


@dataclass(frozen=True, eq=False)
class UniformGrid:
    """Corner-aligned grid of equal cells covering the box [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        lo, hi = np.atleast_1d(np.asarray(self.lower, float)), np.atleast_1d(np.asarray(self.upper, float))
        eta = np.broadcast_to(np.asarray(self.eta, float), lo.shape).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper corners must be vectors of equal length")
        if np.any(eta <= 0) or np.any(hi <= lo):
            raise ValueError("cell widths must be positive and upper > lower")
        counts = np.rint((hi - lo) / eta).astype(np.int64)
        if np.any(np.abs(counts * eta - (hi - lo)) > 1e-9 * np.maximum(1.0, np.abs(hi - lo))):
            raise ValueError(f"widths {eta.tolist()} do not tile [{lo.tolist()}, {hi.tolist()}]")
        for name, v in (("lower", lo), ("upper", hi), ("eta", eta), ("counts", counts)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def from_bounds(cls, bounds: Sequence[tuple[float, float]], eta) -> "UniformGrid":
        b = np.asarray(bounds, float)
        return cls(b[:, 0], b[:, 1], eta)

    dim = property(lambda self: self.lower.size)
    size = property(lambda self: int(np.prod(self.counts)))

    def unravel(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), tuple(self.counts)), axis=-1)

    def ravel(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), tuple(self.counts))

    def center(self, flat) -> np.ndarray:
        return self.lower + (self.unravel(flat) + 0.5) * self.eta

    def locate(self, x) -> int:
        """Flat index of the cell containing ``x`` (upper faces belong to the last cell), -1 outside."""
        x = np.asarray(x, float)
        if x.shape != (self.dim,) or np.any(x < self.lower) or np.any(x > self.upper):
            return -1
        idx = np.minimum(np.floor((x - self.lower) / self.eta).astype(np.int64), self.counts - 1)
        return int(self.ravel(idx))

    def index_range(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        """Per-dimension index range of the cells whose interior meets [lo, hi] (unclipped)."""
        a = np.floor((np.asarray(lo) - self.lower) / self.eta + _EPS).astype(np.int64)
        b = np.ceil((np.asarray(hi) - self.lower) / self.eta - _EPS).astype(np.int64) - 1
        return a, b

    def cells_inside(self, box: Sequence[tuple[float, float]]) -> np.ndarray:
        """Boolean mask of cells contained in the closed box."""
        box = np.asarray(box, float)
        idx = self.unravel(np.arange(self.size))
        lo = self.lower + idx * self.eta
        hi = lo + self.eta
        tol = 1e-9 * self.eta
        return np.all((lo >= box[:, 0] - tol) & (hi <= box[:, 1] + tol), axis=1)

    def mask(self, flats) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        m[np.asarray(flats, dtype=np.int64)] = True
        return m


def input_grid(lower, upper, step, dim: int) -> np.ndarray:
    """Cartesian product of ``lower:step:upper`` in every dimension."""
    k = int(np.rint((upper - lower) / step))
    if k < 0 or abs(k * step - (upper - lower)) > 1e-9 * max(1.0, abs(upper - lower)):
        raise ValueError(f"input step {step} does not tile [{lower}, {upper}]")
    axis = lower + step * np.arange(k + 1)
    return np.array(list(itertools.product(axis, repeat=dim)))


@dataclass(frozen=True, eq=False)
class SymbolicModel:
    grid: UniformGrid
    inputs: np.ndarray
    tau_s: float
    modes: tuple
    Phi: np.ndarray
    Gamma: np.ndarray
    radius: np.ndarray

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[0]

    def successor_box(self, cell: int, u: int, mode: int) -> tuple[np.ndarray, np.ndarray]:
        """Over-approximating box of the states reachable from ``cell`` under input ``u`` in ``mode`` (1-based)."""
        j = mode - 1
        c = self.Phi[j] @ self.grid.center(cell) + self.Gamma[j] @ self.inputs[u]
        return c - self.radius[j], c + self.radius[j]

    def successors(self, cell: int, u: int) -> tuple[bool, np.ndarray]:
        """(blocked, successor cells) united over all modes; a box leaving the grid blocks the pair."""
        out = set()
        for mode in range(1, len(self.modes) + 1):
            a, b = self.grid.index_range(*self.successor_box(cell, u, mode))
            if np.any(a < 0) or np.any(b >= self.grid.counts):
                return True, np.zeros(0, dtype=np.int64)
            rng = [np.arange(lo, hi + 1) for lo, hi in zip(a, b)]
            idx = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, self.grid.dim)
            out.update(self.grid.ravel(idx).tolist())
        return False, np.array(sorted(out), dtype=np.int64)

    def _padded(self):
        """Kernel arrays with the state padded to three dimensions."""
        d, P = self.grid.dim, len(self.modes)
        if d > _MAX_DIM:
            raise NotImplementedError(f"kernels support up to {_MAX_DIM} state dimensions, got {d}")
        L, eta, cnt = np.zeros(3), np.ones(3), np.ones(3, dtype=np.int64)
        L[:d], eta[:d], cnt[:d] = self.grid.lower, self.grid.eta, self.grid.counts
        Phi = np.tile(np.eye(3), (P, 1, 1))
        Phi[:, :d, :d] = self.Phi
        GU = np.zeros((P, self.n_inputs, 3))
        GU[:, :, :d] = np.einsum("jab,ub->jua", self.Gamma, self.inputs)
        rad = np.zeros((P, 3))
        rad[:, :d] = self.radius
        return L, eta, cnt, Phi, GU, rad


def _flow_matrices(M: np.ndarray, B: np.ndarray, tau: float):
    """expm(M tau) and the integral of expm(M s) B over [0, tau]."""
    n, m = B.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n], aug[:n, n:] = M, B
    E = expm(aug * tau)
    return E[:n, :n], E[:n, n:]


def build_symbolic_model(mode_matrices: Sequence[np.ndarray], grid: UniformGrid, inputs: np.ndarray,
                         tau_s: float, B: np.ndarray | None = None) -> SymbolicModel:
    """Symbolic abstraction of x' = M_j x + B u sampled with period ``tau_s``."""
    if not tau_s > 0:
        raise ValueError("sampling period must be positive")
    d = grid.dim
    B = np.eye(d) if B is None else np.asarray(B, float)
    inputs = np.atleast_2d(np.asarray(inputs, float))
    if B.shape[0] != d or inputs.shape[1] != B.shape[1]:
        raise ValueError(f"input matrix {B.shape} and inputs {inputs.shape} do not fit a {d}-dimensional grid")
    mats = tuple(np.asarray(M, float) for M in mode_matrices)
    if not mats or any(M.shape != (d, d) for M in mats):
        raise ValueError(f"need at least one {d}x{d} mode matrix")
    flows = [_flow_matrices(M, B, tau_s) for M in mats]
    Phi = np.array([f[0] for f in flows])
    Gamma = np.array([f[1] for f in flows])
    radius = np.array([expm(np.abs(M) * tau_s) @ (grid.eta / 2) for M in mats])
    return SymbolicModel(grid, inputs, float(tau_s), mats, Phi, Gamma, radius)


def _sat(mask3: np.ndarray) -> np.ndarray:
    s = np.zeros(tuple(np.array(mask3.shape) + 1), dtype=np.int64)
    s[1:, 1:, 1:] = mask3.cumsum(0).cumsum(1).cumsum(2)
    return s


@numba.njit(cache=True)
def _box_all_in(sat, a0, a1, a2, b0, b1, b2):
    tot = (sat[b0 + 1, b1 + 1, b2 + 1] - sat[a0, b1 + 1, b2 + 1] - sat[b0 + 1, a1, b2 + 1]
           - sat[b0 + 1, b1 + 1, a2] + sat[a0, a1, b2 + 1] + sat[a0, b1 + 1, a2]
           + sat[b0 + 1, a1, a2] - sat[a0, a1, a2])
    return tot == (b0 - a0 + 1) * (b1 - a1 + 1) * (b2 - a2 + 1)


@numba.njit(cache=True)
def _find_inputs(candidates, sat, L, eta, cnt, Phi, GU, rad, eps, choice):
    """choice[c] = first input whose successors in every mode lie in the set encoded by ``sat``."""
    P, nU = GU.shape[0], GU.shape[1]
    n1, n2 = cnt[1], cnt[2]
    pc = np.empty((P, 3))
    a = np.empty(3, dtype=np.int64)
    b = np.empty(3, dtype=np.int64)
    found = 0
    for flat in range(candidates.size):
        choice[flat] = -1
        if not candidates[flat]:
            continue
        i0 = flat // (n1 * n2)
        i1 = (flat // n2) % n1
        i2 = flat % n2
        c0 = L[0] + (i0 + 0.5) * eta[0]
        c1 = L[1] + (i1 + 0.5) * eta[1]
        c2 = L[2] + (i2 + 0.5) * eta[2]
        for j in range(P):
            for r in range(3):
                pc[j, r] = Phi[j, r, 0] * c0 + Phi[j, r, 1] * c1 + Phi[j, r, 2] * c2
        for u in range(nU):
            good = True
            for j in range(P):
                for r in range(3):
                    ctr = pc[j, r] + GU[j, u, r]
                    a[r] = np.int64(np.floor((ctr - rad[j, r] - L[r]) / eta[r] + eps))
                    b[r] = np.int64(np.ceil((ctr + rad[j, r] - L[r]) / eta[r] - eps)) - 1
                    if a[r] < 0 or b[r] >= cnt[r]:
                        good = False
                        break
                if not good or not _box_all_in(sat, a[0], a[1], a[2], b[0], b[1], b[2]):
                    good = False
                    break
            if good:
                choice[flat] = u
                found += 1
                break
    return found


@dataclass(frozen=True, eq=False)
class ReachStay:
    """Reach-while-stay controller: winning cells, their fixpoint level and a chosen input index.

    Level-0 cells are the target; there the input (if any) keeps the successors winning.
    """

    model: SymbolicModel
    target: np.ndarray
    safe: np.ndarray
    winning: np.ndarray
    level: np.ndarray
    input_index: np.ndarray
    iterations: int

    @property
    def size(self) -> int:
        return int(self.winning.sum())

    @property
    def empty(self) -> bool:
        return self.size == 0

    def input_for(self, cell: int) -> np.ndarray:
        if cell < 0 or not self.winning[cell] or self.input_index[cell] < 0:
            raise KeyError(cell)
        return self.model.inputs[self.input_index[cell]]


class _Kernel:
    def __init__(self, model: SymbolicModel):
        self.model = model
        self.args = model._padded()
        self.shape = tuple(self.args[2])

    def run(self, candidates: np.ndarray, member: np.ndarray) -> np.ndarray:
        choice = np.empty(candidates.size, dtype=np.int64)
        L, eta, cnt, Phi, GU, rad = self.args
        _find_inputs(candidates, _sat(member.reshape(self.shape)), L, eta, cnt, Phi, GU, rad, _EPS, choice)
        return choice


def synthesize_reach_stay(model: SymbolicModel, target: np.ndarray, safe: np.ndarray | None = None,
                          max_iter: int | None = None) -> ReachStay:
    """Least fixpoint W_{k+1} = W_k | {safe cells with an input whose successors all lie in W_k}."""
    n = model.grid.size
    target = np.asarray(target, bool)
    safe = np.ones(n, bool) if safe is None else np.asarray(safe, bool)
    if target.shape != (n,) or safe.shape != (n,):
        raise ValueError(f"target and safe masks need {n} entries")
    if np.any(target & ~safe):
        raise ValueError("target must lie inside the safe set")
    kern = _Kernel(model)
    win = target.copy()
    level = np.where(target, 0, -1).astype(np.int64)
    inp = np.full(n, -1, dtype=np.int64)
    k = 0
    while max_iter is None or k < max_iter:
        k += 1
        if not win.any():
            break
        choice = kern.run(safe & ~win, win)
        new = choice >= 0
        if not new.any():
            break
        inp[new] = choice[new]
        level[new] = k
        win |= new
    if win.any():
        stay = kern.run(target, win)
        inp[target] = stay[target]
    return ReachStay(model, target, safe, win, level, inp, k)


class ControllerTable:
    """Two reach-while-stay controllers and a memory bit selecting the active target.

    The bit starts at 0 (target 1) and flips whenever the active target is
    entered, so the two targets are visited alternately.
    """

    def __init__(self, first: ReachStay, second: ReachStay):
        if first.model is not second.model:
            raise ValueError("both controllers must share one symbolic model")
        self.model = first.model
        self.controllers = (first, second)

    @property
    def tau_s(self) -> float:
        return self.model.tau_s

    def step(self, xt, memory: int) -> tuple[np.ndarray, int, int | None]:
        """Input for state ``xt``, updated memory and the target entered (1 or 2) if any.

        Raises KeyError when ``xt`` is outside the active winning set.
        """
        cell = self.model.grid.locate(xt)
        if cell < 0:
            raise KeyError("outside the grid")
        visited = None
        if self.controllers[memory].target[cell]:
            visited = memory + 1
            memory = 1 - memory
        return self.controllers[memory].input_for(cell), memory, visited

    def to_csv(self, path: str | Path) -> None:
        d = self.model.inputs.shape[1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["cell", "memory", "level"] + [f"u{k + 1}" for k in range(d)])
            for mem, ctl in enumerate(self.controllers):
                for cell in np.nonzero(ctl.winning & (ctl.input_index >= 0))[0]:
                    wr.writerow([int(cell), mem, int(ctl.level[cell])]
                                + [repr(float(v)) for v in self.model.inputs[ctl.input_index[cell]]])

    def winning_csv(self, path: str | Path) -> None:
        g = self.model.grid
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["cell"] + [f"x{k + 1}" for k in range(g.dim)] + ["win1", "win2", "target1", "target2"])
            both = self.controllers[0].winning | self.controllers[1].winning
            for cell in np.nonzero(both)[0]:
                wr.writerow([int(cell)] + [repr(float(v)) for v in g.center(cell)]
                            + [int(c.winning[cell]) for c in self.controllers]
                            + [int(c.target[cell]) for c in self.controllers])


def build_recurrence_supervisor(first: ReachStay, second: ReachStay) -> ControllerTable:
    """Alternate between two reach-while-stay controllers.

    Requires each target to be winning for the other controller.
    """
    for name, tgt, ctl in (("target 2", second.target, first), ("target 1", first.target, second)):
        miss = np.nonzero(tgt & ~ctl.winning)[0]
        if miss.size:
            raise ValueError(f"{name} has {miss.size} cells outside the other controller's winning set, "
                             f"e.g. {miss[:5].tolist()}")
    return ControllerTable(first, second)


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    model: SymbolicModel
    first: ReachStay
    second: ReachStay
    table: ControllerTable | None
    error: str | None = None

    def summary(self) -> str:
        g = self.model.grid
        lines = [f"grid {g.counts.tolist()} ({g.size} cells), {self.model.n_inputs} inputs, tau_s={self.model.tau_s}",
                 f"target 1: {int(self.first.target.sum())} cells, winning {self.first.size} "
                 f"after {self.first.iterations} sweeps",
                 f"target 2: {int(self.second.target.sum())} cells, winning {self.second.size} "
                 f"after {self.second.iterations} sweeps"]
        if self.error:
            lines.append(f"supervisor: {self.error}")
        return "\n".join(lines)


def synthesize_scenario(scenario: Scenario) -> SynthesisResult:
    """Synthesise the alternating-target controller for the noise-free abstract network."""
    st = scenario.synthesis
    reduced = noise_free(scenario.abstract)
    grid = UniformGrid.from_bounds(st.safe, st.eta)
    B = reduced.stacked("B")
    inputs = input_grid(st.input_lower, st.input_upper, st.input_step, B.shape[1])
    model = build_symbolic_model([reduced.mode_matrix(j) for j in range(1, len(reduced.topology) + 1)],
                                 grid, inputs, st.tau_s, B)
    ctl = [synthesize_reach_stay(model, grid.cells_inside(t)) for t in st.targets]
    try:
        table = build_recurrence_supervisor(*ctl)
        err = None
    except ValueError as exc:
        table, err = None, str(exc)
    return SynthesisResult(model, ctl[0], ctl[1], table, err)
