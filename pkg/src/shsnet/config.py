"""YAML scenario files.

Top-level sections: ``subsystems``, ``topology``, ``chain``, ``certificates``,
``interface``, ``simulation`` and ``synthesis``.  Every matrix entry accepts
an inline nested list, a scalar, or a one-key generator mapping::

    {identity: 50}            {zeros: [50, 50]}        {ones: [50, 1]}
    {fully_connected: 150}    {cyclic: 150}            {block_ones: [50, 50, 50]}
    {tracking_gram: 50}       {unit_row: [50, 0]}      {csv: relative/path.csv}

Any generator mapping may carry ``scale: <float>``.  Vectors accept inline
lists, ``{repeat: [[v1, v2, ...], k]}`` (each entry repeated k times) or
``{csv: path}``.  See docs/scenario.md for the full schema.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from scipy.linalg import block_diag

from .compose import compute_Mhat
from .model import (LinearSubsystem, MarkovChain, Scenario, SimulationSettings, StorageCertificate,
                    SwitchedNetwork, SynthesisSettings, TopologySet, cyclic_topology,
                    fully_connected_topology, lift_matrix, tracking_gram, validate_network)

__all__ = ["ScenarioError", "load_scenario", "paper_scenario_path", "SECTIONS"]

SECTIONS = ("subsystems", "topology", "chain", "certificates", "interface", "simulation", "synthesis")


class ScenarioError(ValueError):
    def __init__(self, section: str, message: str):
        super().__init__(f"section '{section}': {message}")
        self.section = section


def paper_scenario_path() -> Path:
    return Path(str(resources.files("shsnet") / "data" / "paper.yaml"))


class _Reader:
    def __init__(self, base: Path):
        self.base = base

    def matrix(self, spec: Any) -> np.ndarray:
        if isinstance(spec, (int, float)):
            return np.array([[float(spec)]])
        if isinstance(spec, list):
            arr = np.array(spec, dtype=float)
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            if arr.ndim != 2:
                raise ValueError(f"inline matrix must be 2-D, got shape {arr.shape}")
            return arr
        if not isinstance(spec, dict):
            raise ValueError(f"cannot read a matrix from {spec!r}")
        spec = dict(spec)
        scale = float(spec.pop("scale", 1.0))
        if len(spec) != 1:
            raise ValueError(f"matrix generator needs exactly one key, got {sorted(spec)}")
        (kind, arg), = spec.items()
        builders = {
            "identity": lambda a: np.eye(int(a)),
            "zeros": lambda a: np.zeros(tuple(int(v) for v in a)),
            "ones": lambda a: np.ones(tuple(int(v) for v in a)),
            "fully_connected": lambda a: fully_connected_topology(int(a)),
            "cyclic": lambda a: cyclic_topology(int(a)),
            "block_ones": lambda a: lift_matrix([int(v) for v in a]),
            "tracking_gram": lambda a: tracking_gram(np.ones((int(a), 1))),
            "unit_row": lambda a: np.eye(int(a[0]))[[int(a[1])]],
            "csv": lambda a: np.atleast_2d(np.loadtxt(self.base / a, delimiter=",", ndmin=2)),
        }
        if kind not in builders:
            raise ValueError(f"unknown matrix generator {kind!r}")
        return scale * builders[kind](arg)

    def vector(self, spec: Any) -> np.ndarray:
        if isinstance(spec, dict) and "repeat" in spec:
            vals, k = spec["repeat"]
            return np.repeat(np.asarray(vals, float), int(k))
        if isinstance(spec, dict) and "csv" in spec:
            return np.loadtxt(self.base / spec["csv"], delimiter=",", ndmin=1).ravel()
        return np.atleast_1d(np.asarray(spec, dtype=float))


def _section(doc: dict, name: str):
    if name not in doc or doc[name] is None:
        raise ScenarioError(name, f"missing section '{name}'")
    return doc[name]


def _expand(entries: list, section: str) -> list:
    if not isinstance(entries, list) or not entries:
        raise ScenarioError(section, "expected a non-empty list")
    out = []
    for e in entries:
        e = dict(e)
        out.extend([e] * int(e.pop("count", 1)))
    return out


def _subsystem(rd: _Reader, e: dict) -> LinearSubsystem:
    return LinearSubsystem(
        A=rd.matrix(e["A"]), B=rd.matrix(e["B"]), D=rd.matrix(e["D"]),
        C1=rd.matrix(e["C1"]), C2=rd.matrix(e["C2"]),
        diffusion=tuple(rd.matrix(g) for g in e.get("diffusion", [])),
        resets=tuple(rd.matrix(r) for r in e.get("resets", [])),
        rates=np.asarray(e.get("rates", []), dtype=float),
    )


def _guard(section: str, fn, *args):
    try:
        return fn(*args)
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        msg = f"missing key {exc}" if isinstance(exc, KeyError) else str(exc)
        raise ScenarioError(section, msg) from exc


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file; errors name the offending section."""
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ScenarioError("<root>", "scenario file must be a mapping")
    rd = _Reader(path.parent)

    sub = _section(doc, "subsystems")
    conc_subs = _guard("subsystems", lambda: [_subsystem(rd, e) for e in _expand(sub["concrete"], "subsystems")])
    abst_subs = _guard("subsystems", lambda: [_subsystem(rd, e) for e in _expand(sub["abstract"], "subsystems")])
    if len(conc_subs) != len(abst_subs):
        raise ScenarioError("subsystems", f"{len(conc_subs)} concrete but {len(abst_subs)} abstract subsystems")

    itf = _section(doc, "interface")
    noise = itf.get("noise", "common")
    if noise != "common":
        raise ScenarioError("interface", f"noise coupling {noise!r} is not supported; use 'common'")
    for i, (s, sh) in enumerate(zip(conc_subs, abst_subs)):
        if s.n_brownian != sh.n_brownian or s.n_poisson != sh.n_poisson or not np.allclose(s.rates, sh.rates):
            raise ScenarioError("subsystems", f"subsystem {i + 1} and its abstraction do not share noise channels")
    chi = _guard("interface", lambda: float(itf["chi"]))

    chain_doc = _section(doc, "chain")
    chain = _guard("chain", lambda: MarkovChain(rd.matrix(chain_doc["Q"])))

    cdoc = _section(doc, "certificates")

    def certs_from():
        out = []
        for e in _expand(cdoc["storage"], "certificates"):
            out.append(StorageCertificate(
                Qs=rd.matrix(e["Qs"]), kappa=float(e["kappa"]), alpha_coeff=float(e["alpha"]),
                W=rd.matrix(e["W"]), What=rd.matrix(e["What"]), H=rd.matrix(e["H"]),
                X11=rd.matrix(e["X11"]), X12=rd.matrix(e["X12"]), X21=rd.matrix(e["X21"]),
                X22=rd.matrix(e["X22"]), psi_ext=e.get("psi_ext", "zero")))
        return tuple(out)

    certs = _guard("certificates", certs_from)
    if len(certs) != len(conc_subs):
        raise ScenarioError("certificates", f"need {len(conc_subs)} storage certificates, got {len(certs)}")
    weights = _guard("certificates", lambda: rd.matrix(cdoc.get("weights", np.ones((len(certs), chain.P)).tolist())))
    if weights.shape != (len(certs), chain.P):
        raise ScenarioError("certificates", f"weights must be {len(certs)}x{chain.P}, got {weights.shape}")

    tdoc = _section(doc, "topology")
    concrete_M = _guard("topology", lambda: tuple(rd.matrix(m) for m in tdoc["concrete"]))
    conc = SwitchedNetwork(conc_subs, TopologySet(concrete_M), chain)
    rep = validate_network(conc)
    if not rep.ok:
        raise ScenarioError("topology", "; ".join(rep.problems))
    abst_spec = tdoc.get("abstract", "least_squares")
    explicit = abst_spec != "least_squares"
    if explicit:
        mhats = _guard("topology", lambda: tuple(rd.matrix(m) for m in abst_spec))
    else:
        W, H = block_diag(*[c.W for c in certs]), block_diag(*[c.H for c in certs])
        What = block_diag(*[c.What for c in certs])
        mhats = _guard("topology", lambda: tuple(compute_Mhat(W, M, H, What).Mhat for M in concrete_M))
    abst = SwitchedNetwork(abst_subs, TopologySet(mhats), chain)
    rep = validate_network(abst)
    if not rep.ok:
        raise ScenarioError("topology", "abstract: " + "; ".join(rep.problems))

    sdoc = _section(doc, "simulation")

    def sim_from():
        kw = {k: sdoc[k] for k in ("dt", "horizon", "runs", "seed") if k in sdoc}
        for k in ("a", "ahat", "atilde"):
            if k in sdoc:
                kw[k] = rd.vector(sdoc[k])
        if "p0" in sdoc:
            kw["p0"] = tuple(float(v) for v in sdoc["p0"])
        return SimulationSettings(**kw)

    sim = _guard("simulation", sim_from)
    if sim.a is not None and sim.a.size != conc.n:
        raise ScenarioError("simulation", f"initial state a has {sim.a.size} entries, expected {conc.n}")
    if sim.ahat is not None and sim.ahat.size != abst.n:
        raise ScenarioError("simulation", f"initial state ahat has {sim.ahat.size} entries, expected {abst.n}")

    ydoc = _section(doc, "synthesis")

    def syn_from():
        kw = dict(ydoc)
        if "safe" in kw:
            kw["safe"] = tuple(tuple(map(float, b)) for b in kw["safe"])
        if "targets" in kw:
            kw["targets"] = tuple(tuple(tuple(map(float, b)) for b in t) for t in kw["targets"])
        return SynthesisSettings(**kw)

    syn = _guard("synthesis", syn_from)
    return Scenario(conc, abst, certs, weights, chi, sim, syn, explicit_abstract=explicit)
