"""Random geometric networks with noisy range and vMF bearing measurements."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import AnchorMeasurement, EdgeMeasurement, GroundTruth, ProblemInstance
from .rigidity import grounded_edges, is_generically_globally_rigid
from .vmf import sample_bearing_vmf, sample_vmf

log = logging.getLogger(__name__)

__all__ = [
    "GenConfig", "GenerationError", "Graph", "bearing_kappa", "build_geometric_graph",
    "calibrate_comm_radius", "check_localizability", "gen_positions", "make_instance",
    "sample_bearing_vmf", "sample_range",
]


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenConfig:
    """Network and noise settings. Defaults follow the n=10 desk campaign.

    ``comm_radius=None`` means "calibrate": see :func:`calibrate_comm_radius`.
    """

    dim: int = 2
    n: int = 10
    num_anchors: int = 3
    region_side: float = 7.0
    comm_radius: Optional[float] = None
    bearing_edge_fraction: float = 1.0
    bearing_anchor_fraction: float = 1.0
    sigma: float = 0.5
    bearing_sigma_deg: float = 2.0
    seed: int = 0
    max_attempts: int = 1000
    rigidity_repeats: int = 2

    def __post_init__(self):
        problems = []
        if self.dim < 2:
            problems.append(f"dim must be >= 2, got {self.dim}")
        if self.n < 1:
            problems.append(f"n must be >= 1, got {self.n}")
        if self.num_anchors < 1:
            problems.append(f"num_anchors must be >= 1, got {self.num_anchors}")
        if not self.region_side > 0:
            problems.append(f"region_side must be > 0, got {self.region_side}")
        if self.comm_radius is not None and not self.comm_radius > 0:
            problems.append(f"comm_radius must be > 0, got {self.comm_radius}")
        for name in ("bearing_edge_fraction", "bearing_anchor_fraction"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                problems.append(f"{name} must lie in [0, 1], got {val}")
        if not self.sigma > 0:
            problems.append(f"sigma must be > 0, got {self.sigma}")
        if not self.bearing_sigma_deg > 0:
            problems.append(f"bearing_sigma_deg must be > 0, got {self.bearing_sigma_deg}")
        if self.max_attempts < 1:
            problems.append(f"max_attempts must be >= 1, got {self.max_attempts}")
        if problems:
            raise ValueError("; ".join(problems))

    def replace(self, **changes) -> "GenConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Graph:
    """0-based pairs plus bearing flags."""

    edges: np.ndarray            # (E, 2) agent pairs, i < j
    links: np.ndarray            # (K, 2) (agent, anchor) pairs
    edge_bearing: np.ndarray     # (E,) bool
    link_bearing: np.ndarray     # (K,) bool


def bearing_kappa(bearing_sigma_deg: float) -> float:
    """Concentration as the inverse of the angular variance in radians."""
    return 1.0 / np.deg2rad(bearing_sigma_deg) ** 2


def gen_positions(cfg: GenConfig, rng: np.random.Generator) -> tuple[GroundTruth, np.ndarray]:
    pts = rng.uniform(0.0, cfg.region_side, size=(cfg.n + cfg.num_anchors, cfg.dim))
    return GroundTruth.from_array(pts[:cfg.n]), pts[cfg.n:]


def _pick(count: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    flags = np.zeros(count, dtype=bool)
    k = int(round(fraction * count))
    if k:
        flags[rng.choice(count, size=k, replace=False)] = True
    return flags


def build_geometric_graph(truth: GroundTruth, anchors: np.ndarray, cfg: GenConfig,
                          rng: np.random.Generator, comm_radius: Optional[float] = None) -> Graph:
    """Disk graph: a pair is measured iff its true distance is within range."""
    radius = cfg.comm_radius if comm_radius is None else comm_radius
    if radius is None:
        raise ValueError("comm_radius must be set (or calibrated) before building a graph")
    x = truth.array
    dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    ii, jj = np.nonzero(np.triu(dist <= radius, k=1))
    edges = np.column_stack([ii, jj]).astype(np.intp)
    dist_a = np.linalg.norm(x[:, None, :] - anchors[None, :, :], axis=-1)
    li, lk = np.nonzero(dist_a <= radius)
    links = np.column_stack([li, lk]).astype(np.intp)
    return Graph(
        edges=edges.reshape(-1, 2),
        links=links.reshape(-1, 2),
        edge_bearing=_pick(len(edges), cfg.bearing_edge_fraction, rng),
        link_bearing=_pick(len(links), cfg.bearing_anchor_fraction, rng),
    )


def check_localizability(n: int, num_anchors: int, edges, links, dim: int,
                         rng: np.random.Generator, repeats: int = 2) -> bool:
    """Range-only unique localizability of agents given anchors (0-based ids).

    Requires at least ``dim + 1`` anchors to pin a global frame.
    """
    if num_anchors < dim + 1:
        return False
    m = n + num_anchors
    return is_generically_globally_rigid(
        m, grounded_edges(n, num_anchors, edges, links), dim, rng, repeats=repeats)


def sample_range(true_dist, sigma, rng: np.random.Generator):
    """Gaussian range around the truth, redrawn until positive."""
    true_dist = np.asarray(true_dist, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), true_dist.shape)
    out = true_dist + sigma * rng.standard_normal(true_dist.shape)
    bad = out <= 0
    while np.any(bad):
        out[bad] = true_dist[bad] + sigma[bad] * rng.standard_normal(int(bad.sum()))
        bad = out <= 0
    return out if out.ndim else float(out)


def _unit_rows(diff: np.ndarray) -> np.ndarray:
    return diff / np.linalg.norm(diff, axis=1, keepdims=True)


def _random_graph(cfg, radius, rng):
    truth, anchors = gen_positions(cfg, rng)
    graph = build_geometric_graph(truth, anchors, cfg, rng, comm_radius=radius)
    ok = check_localizability(cfg.n, cfg.num_anchors, graph.edges, graph.links, cfg.dim,
                              rng, repeats=cfg.rigidity_repeats)
    return truth, anchors, graph, ok


def make_instance(cfg: GenConfig, rng: Optional[np.random.Generator] = None,
                  comm_radius: Optional[float] = None
                  ) -> tuple[ProblemInstance, GroundTruth, int]:
    """Generate a localizable instance; returns ``(instance, truth, attempts)``."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    radius = comm_radius if comm_radius is not None else cfg.comm_radius
    if radius is None:
        radius = calibrate_comm_radius(cfg)
    for attempt in range(1, cfg.max_attempts + 1):
        truth, anchors, graph, ok = _random_graph(cfg, radius, rng)
        if ok:
            break
    else:
        raise GenerationError(
            f"no localizable network after {cfg.max_attempts} attempts "
            f"(n={cfg.n}, anchors={cfg.num_anchors}, comm_radius={radius})")

    x = truth.array
    kappa = bearing_kappa(cfg.bearing_sigma_deg)
    ei, ej = graph.edges[:, 0], graph.edges[:, 1]
    li, lk = graph.links[:, 0], graph.links[:, 1]
    d = np.atleast_1d(sample_range(np.linalg.norm(x[ei] - x[ej], axis=1), cfg.sigma, rng))
    r = np.atleast_1d(sample_range(np.linalg.norm(x[li] - anchors[lk], axis=1), cfg.sigma, rng))
    u = np.zeros((len(ei), cfg.dim))
    if graph.edge_bearing.any():
        sel = graph.edge_bearing
        u[sel] = sample_vmf(_unit_rows(x[ei[sel]] - x[ej[sel]]), kappa, rng)
    v = np.zeros((len(li), cfg.dim))
    if graph.link_bearing.any():
        sel = graph.link_bearing
        v[sel] = sample_vmf(_unit_rows(x[li[sel]] - anchors[lk[sel]]), kappa, rng)
    # renormalize so stored bearings are unit to the last bit
    u[graph.edge_bearing] = _unit_rows(u[graph.edge_bearing])
    v[graph.link_bearing] = _unit_rows(v[graph.link_bearing])

    edges = tuple(
        EdgeMeasurement(int(ei[e]) + 1, int(ej[e]) + 1, float(d[e]), float(cfg.sigma),
                        tuple(map(float, u[e])) if graph.edge_bearing[e] else None,
                        float(kappa) if graph.edge_bearing[e] else None)
        for e in range(len(ei))
    )
    links = tuple(
        AnchorMeasurement(int(li[a]) + 1, int(lk[a]) + 1, float(r[a]), float(cfg.sigma),
                          tuple(map(float, v[a])) if graph.link_bearing[a] else None,
                          float(kappa) if graph.link_bearing[a] else None)
        for a in range(len(li))
    )
    inst = ProblemInstance(cfg.dim, cfg.n, tuple(tuple(map(float, a)) for a in anchors),
                           edges, links)
    return inst, truth, attempt


def calibrate_comm_radius(cfg: GenConfig, probes: int = 40, target: float = 0.95,
                          step: float = 0.5, seed: int = 20200101) -> float:
    """Smallest radius on a ``step`` grid where ``target`` of random networks localize.

    Uses its own seed so the chosen radius depends only on the network
    geometry settings, never on a campaign seed.
    """
    diag = cfg.region_side * np.sqrt(cfg.dim)
    radius = step
    while True:
        rng = np.random.default_rng([seed, cfg.n, cfg.num_anchors, cfg.dim])
        passed = sum(_random_graph(cfg, radius, rng)[3] for _ in range(probes))
        if passed >= target * probes or radius >= diag:
            log.info("calibrated comm_radius=%.2f (%d/%d localizable)", radius, passed, probes)
            return float(radius)
        radius += step
