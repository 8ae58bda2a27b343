"""Domain types for hybrid range/bearing network localization.

Node and anchor ids are 1-based everywhere they are user visible (types,
files, CLI). The cached array views used by the numerical code are 0-based.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Optional, Sequence

import numpy as np
import scipy.sparse as sp

UNIT_TOL = 1e-12

Vector = tuple[float, ...]


class ParseError(ValueError):
    """Raised when an instance document cannot be read."""


def _vec(v: Sequence[float]) -> Vector:
    return tuple(float(c) for c in v)


@dataclass(frozen=True)
class EdgeMeasurement:
    """Range (and optionally bearing) between agents ``i`` and ``j``.

    ``u`` measures the direction of ``x_i - x_j``.
    """

    i: int
    j: int
    d: float
    sigma: float
    u: Optional[Vector] = None
    kappa: Optional[float] = None

    @property
    def has_bearing(self) -> bool:
        return self.u is not None


@dataclass(frozen=True)
class AnchorMeasurement:
    """Range (and optionally bearing) between agent ``i`` and anchor ``k``.

    ``v`` measures the direction of ``x_i - a_k``.
    """

    i: int
    k: int
    r: float
    varsigma: float
    v: Optional[Vector] = None
    varkappa: Optional[float] = None

    @property
    def has_bearing(self) -> bool:
        return self.v is not None


@dataclass(frozen=True)
class GroundTruth:
    positions: tuple[Vector, ...]

    @classmethod
    def from_array(cls, x: np.ndarray) -> "GroundTruth":
        return cls(tuple(_vec(row) for row in np.asarray(x, dtype=float)))

    @cached_property
    def array(self) -> np.ndarray:
        return _frozen(np.array(self.positions, dtype=float))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProblemInstance:
    """Measurement graph over ``n`` agents and a set of anchors.

    Construction does not validate; call :func:`validate_instance` (parsing
    does this automatically).
    """

    dim: int
    n: int
    anchors: tuple[Vector, ...]
    edges: tuple[EdgeMeasurement, ...] = ()
    anchor_links: tuple[AnchorMeasurement, ...] = ()

    @classmethod
    def build(cls, dim, n, anchors, edges=(), anchor_links=()) -> "ProblemInstance":
        """Convenience constructor accepting arrays and lists."""
        anchors = tuple(_vec(a) for a in np.asarray(anchors, dtype=float).reshape(-1, dim))
        edges = tuple(
            e if isinstance(e, EdgeMeasurement) else EdgeMeasurement(**e) for e in edges
        )
        links = tuple(
            a if isinstance(a, AnchorMeasurement) else AnchorMeasurement(**a)
            for a in anchor_links
        )
        edges = tuple(
            EdgeMeasurement(e.i, e.j, float(e.d), float(e.sigma),
                            None if e.u is None else _vec(e.u),
                            None if e.kappa is None else float(e.kappa))
            for e in edges
        )
        links = tuple(
            AnchorMeasurement(a.i, a.k, float(a.r), float(a.varsigma),
                              None if a.v is None else _vec(a.v),
                              None if a.varkappa is None else float(a.varkappa))
            for a in links
        )
        return cls(int(dim), int(n), anchors, edges, links)

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_links(self) -> int:
        return len(self.anchor_links)

    # --- 0-based array views used by the numerical modules -----------------

    @cached_property
    def anchor_array(self) -> np.ndarray:
        return _frozen(np.array(self.anchors, dtype=float).reshape(-1, self.dim))

    @cached_property
    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        i = np.array([e.i - 1 for e in self.edges], dtype=np.intp)
        j = np.array([e.j - 1 for e in self.edges], dtype=np.intp)
        return _frozen(i), _frozen(j)

    @cached_property
    def link_index(self) -> tuple[np.ndarray, np.ndarray]:
        i = np.array([a.i - 1 for a in self.anchor_links], dtype=np.intp)
        k = np.array([a.k - 1 for a in self.anchor_links], dtype=np.intp)
        return _frozen(i), _frozen(k)

    @cached_property
    def d(self) -> np.ndarray:
        return _frozen(np.array([e.d for e in self.edges], dtype=float))

    @cached_property
    def sigma(self) -> np.ndarray:
        return _frozen(np.array([e.sigma for e in self.edges], dtype=float))

    @cached_property
    def r(self) -> np.ndarray:
        return _frozen(np.array([a.r for a in self.anchor_links], dtype=float))

    @cached_property
    def varsigma(self) -> np.ndarray:
        return _frozen(np.array([a.varsigma for a in self.anchor_links], dtype=float))

    @cached_property
    def u(self) -> np.ndarray:
        """Edge bearings, zero rows where absent."""
        out = np.zeros((self.num_edges, self.dim))
        for row, e in enumerate(self.edges):
            if e.u is not None:
                out[row] = e.u
        return _frozen(out)

    @cached_property
    def kappa(self) -> np.ndarray:
        """Edge concentrations, zero where no bearing is measured."""
        return _frozen(np.array([e.kappa if e.u is not None else 0.0 for e in self.edges],
                                dtype=float))

    @cached_property
    def v(self) -> np.ndarray:
        out = np.zeros((self.num_links, self.dim))
        for row, a in enumerate(self.anchor_links):
            if a.v is not None:
                out[row] = a.v
        return _frozen(out)

    @cached_property
    def varkappa(self) -> np.ndarray:
        return _frozen(np.array(
            [a.varkappa if a.v is not None else 0.0 for a in self.anchor_links], dtype=float))

    @cached_property
    def edge_has_bearing(self) -> np.ndarray:
        return _frozen(np.array([e.u is not None for e in self.edges], dtype=bool))

    @cached_property
    def link_has_bearing(self) -> np.ndarray:
        return _frozen(np.array([a.v is not None for a in self.anchor_links], dtype=bool))

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Signed edge-node incidence: row e maps x to x_i - x_j."""
        i, j = self.edge_index
        m = self.num_edges
        rows = np.concatenate([np.arange(m), np.arange(m)])
        cols = np.concatenate([i, j])
        vals = np.concatenate([np.ones(m), -np.ones(m)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, self.n))

    @cached_property
    def link_selector(self) -> sp.csr_matrix:
        """Row l maps x to x_i for the agent of anchor link l."""
        i, _ = self.link_index
        m = self.num_links
        return sp.csr_matrix((np.ones(m), (np.arange(m), i)), shape=(m, self.n))

    @cached_property
    def scale(self) -> float:
        """Problem length scale used to normalize tolerances."""
        return float(max(1.0, self.d.max(initial=0.0), self.r.max(initial=0.0)))


# --- validation -------------------------------------------------------------

def _connected(n_nodes: int, pairs: list[tuple[int, int]]) -> bool:
    if n_nodes <= 1:
        return True
    parent = list(range(n_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    root = find(0)
    return all(find(a) == root for a in range(n_nodes))


def _check_bearing(vec, conc, dim, where, out):
    if vec is None:
        if conc is not None:
            out.append(f"{where}: concentration given without bearing")
        return
    if len(vec) != dim:
        out.append(f"{where}: bearing has {len(vec)} components, expected {dim}")
        return
    if not np.all(np.isfinite(vec)) or abs(np.linalg.norm(vec) - 1.0) > UNIT_TOL:
        out.append(f"{where}: non-unit bearing")
    if conc is None or not conc > 0:
        out.append(f"{where}: bearing concentration must be > 0")


def validate_instance(inst: ProblemInstance) -> list[str]:
    """Return the list of violated invariants; an empty list means valid."""
    out: list[str] = []
    if inst.dim < 2:
        out.append(f"dim: must be >= 2, got {inst.dim}")
    if inst.n < 1:
        out.append(f"n: must be >= 1, got {inst.n}")
    for k, a in enumerate(inst.anchors, start=1):
        if len(a) != inst.dim:
            out.append(f"anchors[{k}]: has {len(a)} components, expected {inst.dim}")
    n_anchors = inst.num_anchors

    seen: set[frozenset] = set()
    for idx, e in enumerate(inst.edges):
        where = f"edges[{idx}]"
        if e.i == e.j:
            out.append(f"{where}: self-loop at node {e.i}")
        for name, node in (("i", e.i), ("j", e.j)):
            if not 1 <= node <= inst.n:
                out.append(f"{where}: node id {name}={node} out of range [1, {inst.n}]")
        if not (np.isfinite(e.d) and e.d > 0):
            out.append(f"{where}: range d must be > 0, got {e.d}")
        if not (np.isfinite(e.sigma) and e.sigma > 0):
            out.append(f"{where}: sigma must be > 0, got {e.sigma}")
        _check_bearing(e.u, e.kappa, inst.dim, where, out)
        key = frozenset((e.i, e.j))
        if key in seen:
            out.append(f"{where}: duplicate edge {{{e.i}, {e.j}}}")
        seen.add(key)

    seen_links: set[tuple[int, int]] = set()
    for idx, a in enumerate(inst.anchor_links):
        where = f"anchor_links[{idx}]"
        if not 1 <= a.i <= inst.n:
            out.append(f"{where}: node id i={a.i} out of range [1, {inst.n}]")
        if not 1 <= a.k <= n_anchors:
            out.append(f"{where}: anchor id k={a.k} out of range [1, {n_anchors}]")
        if not (np.isfinite(a.r) and a.r > 0):
            out.append(f"{where}: range r must be > 0, got {a.r}")
        if not (np.isfinite(a.varsigma) and a.varsigma > 0):
            out.append(f"{where}: varsigma must be > 0, got {a.varsigma}")
        _check_bearing(a.v, a.varkappa, inst.dim, where, out)
        if (a.i, a.k) in seen_links:
            out.append(f"{where}: duplicate anchor link ({a.i}, {a.k})")
        seen_links.add((a.i, a.k))

    if out:
        return out
    # agents are 0..n-1, anchors n..n+K-1
    pairs = [(e.i - 1, e.j - 1) for e in inst.edges]
    pairs += [(a.i - 1, inst.n + a.k - 1) for a in inst.anchor_links]
    pairs += [(inst.n, inst.n + k) for k in range(1, n_anchors)]
    if not _connected(inst.n + n_anchors, pairs):
        out.append("graph: disconnected graph over agents and anchors")
    return out


# --- serialization ----------------------------------------------------------

def _edge_doc(e: EdgeMeasurement) -> dict:
    doc: dict[str, Any] = {"i": e.i, "j": e.j, "d": e.d, "sigma": e.sigma}
    if e.u is not None:
        doc["u"] = list(e.u)
        doc["kappa"] = e.kappa
    return doc


def _link_doc(a: AnchorMeasurement) -> dict:
    doc: dict[str, Any] = {"i": a.i, "k": a.k, "r": a.r, "varsigma": a.varsigma}
    if a.v is not None:
        doc["v"] = list(a.v)
        doc["varkappa"] = a.varkappa
    return doc


def instance_to_dict(inst: ProblemInstance, truth: Optional[GroundTruth] = None) -> dict:
    doc: dict[str, Any] = {
        "dim": inst.dim,
        "n": inst.n,
        "anchors": [list(a) for a in inst.anchors],
        "edges": [_edge_doc(e) for e in inst.edges],
        "anchor_links": [_link_doc(a) for a in inst.anchor_links],
    }
    if truth is not None:
        doc["truth"] = [list(x) for x in truth.positions]
    return doc


def serialize(inst: ProblemInstance, truth: Optional[GroundTruth] = None) -> str:
    """JSON text; floats are written with their shortest exact repr."""
    return json.dumps(instance_to_dict(inst, truth), indent=1)


class _Reader:
    def take(self, doc, key, kind, where, optional=False):
        if key not in doc:
            if optional:
                return None
            raise ParseError(f"{where}: missing field {key!r}")
        val = doc[key]
        try:
            if kind is int:
                if isinstance(val, bool) or not isinstance(val, int):
                    raise TypeError
                return val
            if kind is float:
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise TypeError
                return float(val)
            if kind is list:
                if not isinstance(val, list):
                    raise TypeError
                return val
        except TypeError:
            raise ParseError(f"{where}.{key}: expected {kind.__name__}, got {val!r}") from None
        return val

    def vector(self, val, where):
        if not isinstance(val, list) or not all(
                isinstance(c, (int, float)) and not isinstance(c, bool) for c in val):
            raise ParseError(f"{where}: expected a numeric array, got {val!r}")
        return _vec(val)


def instance_from_dict(doc: Any) -> tuple[ProblemInstance, Optional[GroundTruth]]:
    rd = _Reader()
    if not isinstance(doc, dict):
        raise ParseError("document: expected a JSON object at top level")
    dim = rd.take(doc, "dim", int, "document")
    n = rd.take(doc, "n", int, "document")
    anchors = tuple(rd.vector(a, f"anchors[{k}]")
                    for k, a in enumerate(rd.take(doc, "anchors", list, "document")))
    edges = []
    for idx, e in enumerate(rd.take(doc, "edges", list, "document")):
        where = f"edges[{idx}]"
        if not isinstance(e, dict):
            raise ParseError(f"{where}: expected an object")
        u = e.get("u")
        edges.append(EdgeMeasurement(
            i=rd.take(e, "i", int, where), j=rd.take(e, "j", int, where),
            d=rd.take(e, "d", float, where), sigma=rd.take(e, "sigma", float, where),
            u=None if u is None else rd.vector(u, f"{where}.u"),
            kappa=rd.take(e, "kappa", float, where, optional=True),
        ))
    links = []
    for idx, a in enumerate(rd.take(doc, "anchor_links", list, "document")):
        where = f"anchor_links[{idx}]"
        if not isinstance(a, dict):
            raise ParseError(f"{where}: expected an object")
        v = a.get("v")
        links.append(AnchorMeasurement(
            i=rd.take(a, "i", int, where), k=rd.take(a, "k", int, where),
            r=rd.take(a, "r", float, where), varsigma=rd.take(a, "varsigma", float, where),
            v=None if v is None else rd.vector(v, f"{where}.v"),
            varkappa=rd.take(a, "varkappa", float, where, optional=True),
        ))
    inst = ProblemInstance(dim, n, anchors, tuple(edges), tuple(links))
    problems = validate_instance(inst)
    if problems:
        raise ParseError("invalid instance: " + "; ".join(problems))
    truth = None
    if doc.get("truth") is not None:
        pos = tuple(rd.vector(x, f"truth[{k}]") for k, x in enumerate(doc["truth"]))
        if len(pos) != n or any(len(x) != dim for x in pos):
            raise ParseError(f"truth: expected {n} vectors of length {dim}")
        truth = GroundTruth(pos)
    return inst, truth


def parse(text: str) -> tuple[ProblemInstance, Optional[GroundTruth]]:
    """Parse an instance document, raising :class:`ParseError` with context."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return instance_from_dict(doc)
