"""Randomized generic global rigidity test for localizability.

A network with anchors is uniquely localizable (generically) when the
grounded graph, agents plus anchors with every anchor pair joined, is
generically globally rigid. Both checks below are one-sided in exact
arithmetic: a random configuration can only lose rank, never gain it.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

RANK_RTOL = 1e-9


def rigidity_matrix(points: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Jacobian of squared edge lengths / 2, shape ``(|E|, m*p)``."""
    m, p = points.shape
    a, b = edges[:, 0], edges[:, 1]
    diff = points[a] - points[b]
    R = np.zeros((len(edges), m, p))
    rows = np.arange(len(edges))
    R[rows, a] = diff
    R[rows, b] = -diff
    return R.reshape(len(edges), m * p)


def numerical_rank(mat: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def stress_matrix(m: int, edges: np.ndarray, omega: np.ndarray) -> np.ndarray:
    omega_mat = np.zeros((m, m))
    a, b = edges[:, 0], edges[:, 1]
    np.add.at(omega_mat, (a, b), -omega)
    np.add.at(omega_mat, (b, a), -omega)
    omega_mat[np.diag_indices(m)] = -omega_mat.sum(axis=1)
    return omega_mat


def _one_trial(m: int, edges: np.ndarray, p: int, rng: np.random.Generator) -> bool:
    points = rng.standard_normal((m, p))
    R = rigidity_matrix(points, edges)
    if numerical_rank(R) < p * m - p * (p + 1) // 2:
        return False
    # random equilibrium stress: project a Gaussian vector onto null(R^T)
    g = rng.standard_normal(len(edges))
    coef, *_ = np.linalg.lstsq(R, g, rcond=None)
    omega = g - R @ coef
    if not np.any(np.abs(omega) > 1e-12 * np.abs(g).max()):
        return False
    return numerical_rank(stress_matrix(m, edges, omega)) == m - p - 1


def is_generically_globally_rigid(m: int, edges: Iterable[tuple[int, int]], p: int,
                                  rng: np.random.Generator, repeats: int = 2) -> bool:
    """Randomized test on a simple graph with vertices ``0..m-1``.

    Every one of ``repeats`` independent random configurations must pass, so
    a numerically spurious accept has to recur on fresh randomness.
    """
    edge_set = {tuple(sorted(e)) for e in edges if e[0] != e[1]}
    if m <= p + 1:
        return len(edge_set) == m * (m - 1) // 2
    edge_arr = np.array(sorted(edge_set), dtype=np.intp).reshape(-1, 2)
    if len(edge_arr) < p * m - p * (p + 1) // 2:
        return False
    return all(_one_trial(m, edge_arr, p, rng) for _ in range(repeats))


def grounded_edges(n: int, num_anchors: int, edges, anchor_links) -> list[tuple[int, int]]:
    """Vertex ids: agents ``0..n-1``, anchors ``n..n+K-1`` (all input ids 0-based)."""
    out = [(int(i), int(j)) for i, j in edges]
    out += [(int(i), n + int(k)) for i, k in anchor_links]
    out += [(n + a, n + b) for a in range(num_anchors) for b in range(a + 1, num_anchors)]
    return out
