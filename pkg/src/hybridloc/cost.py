"""Nonconvex ML objective, its convex relaxation, and closed-form gradients.

Sign convention: the negative log-likelihood *subtracts* the vMF alignment
``kappa * u . (x_i - x_j) / |x_i - x_j|``.

Quadratic weights depend on :class:`WeightMode`:

* ``UNIT``: unit weights on every range term, linear coefficients
  ``kappa / d``. Matches the relaxed program as usually written.
* ``FULL_ML``: weights ``1 / sigma**2`` on range terms, same linear
  coefficients.

In either mode ``relaxed_cost`` evaluated at ``y = d * (x_i - x_j)/|x_i - x_j|``
equals ``ml_cost`` in the same mode.
"""
from __future__ import annotations

import enum

import numpy as np

from .model import ProblemInstance

EPS_DIV = 1e-12


class WeightMode(enum.Enum):
    UNIT = "unit"
    FULL_ML = "full-ml"


class CoincidentPointsError(ValueError):
    pass


def range_weights(inst: ProblemInstance, mode: WeightMode) -> tuple[np.ndarray, np.ndarray]:
    if mode is WeightMode.FULL_ML:
        return 1.0 / inst.sigma**2, 1.0 / inst.varsigma**2
    return np.ones(inst.num_edges), np.ones(inst.num_links)


def scaled_bearings(inst: ProblemInstance) -> tuple[np.ndarray, np.ndarray]:
    """``utilde = (kappa/d) u`` per edge and ``vtilde = (varkappa/r) v`` per link."""
    ut = (inst.kappa / inst.d)[:, None] * inst.u if inst.num_edges else np.zeros((0, inst.dim))
    vt = (inst.varkappa / inst.r)[:, None] * inst.v if inst.num_links else np.zeros((0, inst.dim))
    return ut, vt


def _diffs(x: np.ndarray, inst: ProblemInstance) -> tuple[np.ndarray, np.ndarray]:
    i, j = inst.edge_index
    li, lk = inst.link_index
    return x[i] - x[j], x[li] - inst.anchor_array[lk]


def _norms_checked(diff: np.ndarray, mask: np.ndarray, what: str, ids) -> np.ndarray:
    nrm = np.linalg.norm(diff, axis=1)
    bad = np.nonzero(mask & (nrm < EPS_DIV))[0]
    if bad.size:
        a, b = ids[0][bad[0]] + 1, ids[1][bad[0]] + 1
        raise CoincidentPointsError(f"coincident points on {what} ({a}, {b})")
    return nrm


def _checked(x, inst, bearing_only: bool):
    de, da = _diffs(x, inst)
    me = inst.edge_has_bearing if bearing_only else np.ones(inst.num_edges, dtype=bool)
    ma = inst.link_has_bearing if bearing_only else np.ones(inst.num_links, dtype=bool)
    ne = _norms_checked(de, me, "edge", inst.edge_index)
    na = _norms_checked(da, ma, "anchor link", inst.link_index)
    return de, da, ne, na


def ml_cost(x: np.ndarray, inst: ProblemInstance, mode: WeightMode = WeightMode.FULL_ML) -> float:
    """Negative log-likelihood (up to constants) of positions ``x`` (n, p)."""
    x = np.asarray(x, dtype=float)
    de, da, ne, na = _checked(x, inst, bearing_only=True)
    qe, qa = range_weights(inst, mode)
    val = np.sum(qe * (ne - inst.d) ** 2) + np.sum(qa * (na - inst.r) ** 2)
    be, ba = inst.edge_has_bearing, inst.link_has_bearing
    val -= np.sum(inst.kappa[be] * np.einsum("ij,ij->i", inst.u[be], de[be]) / ne[be])
    val -= np.sum(inst.varkappa[ba] * np.einsum("ij,ij->i", inst.v[ba], da[ba]) / na[ba])
    return float(val)


def _bearing_grad(diff, nrm, dirs, conc):
    # d/dz [u . z/|z|] = (I - z z^T/|z|^2) u / |z|
    unit = diff / nrm[:, None]
    along = np.einsum("ij,ij->i", unit, dirs)
    return -conc[:, None] * (dirs - along[:, None] * unit) / nrm[:, None]


def ml_gradient(x: np.ndarray, inst: ProblemInstance,
                mode: WeightMode = WeightMode.FULL_ML) -> np.ndarray:
    """Gradient of :func:`ml_cost`, same shape as ``x``."""
    x = np.asarray(x, dtype=float)
    de, da, ne, na = _checked(x, inst, bearing_only=False)
    qe, qa = range_weights(inst, mode)
    ge = (2 * qe * (ne - inst.d) / ne)[:, None] * de
    ga = (2 * qa * (na - inst.r) / na)[:, None] * da
    be, ba = inst.edge_has_bearing, inst.link_has_bearing
    ge[be] += _bearing_grad(de[be], ne[be], inst.u[be], inst.kappa[be])
    ga[ba] += _bearing_grad(da[ba], na[ba], inst.v[ba], inst.varkappa[ba])
    i, j = inst.edge_index
    li, _ = inst.link_index
    return (_scatter(i, ge, inst.n) - _scatter(j, ge, inst.n) + _scatter(li, ga, inst.n))


def _scatter(idx, rows, n):
    """Sum ``rows`` into ``n`` buckets by index (column-wise bincount)."""
    return np.stack([np.bincount(idx, weights=rows[:, c], minlength=n)
                     for c in range(rows.shape[1])], axis=1)


def _check_sizes(x, y, w, inst):
    if x.shape != (inst.n, inst.dim):
        raise ValueError(f"x has shape {x.shape}, expected {(inst.n, inst.dim)}")
    if y.shape != (inst.num_edges, inst.dim):
        raise ValueError(f"y has shape {y.shape}, expected {(inst.num_edges, inst.dim)}")
    if w.shape != (inst.num_links, inst.dim):
        raise ValueError(f"w has shape {w.shape}, expected {(inst.num_links, inst.dim)}")


def relaxed_residuals(x, y, w, inst):
    """``x_i - x_j - y_ij`` and ``x_i - a_k - w_ik``."""
    de, da = _diffs(x, inst)
    return de - y, da - w


def relaxed_cost(x, y, w, inst: ProblemInstance, mode: WeightMode = WeightMode.UNIT) -> float:
    x, y, w = (np.asarray(a, dtype=float) for a in (x, y, w))
    _check_sizes(x, y, w, inst)
    qe, qa = range_weights(inst, mode)
    ut, vt = scaled_bearings(inst)
    re, ra = relaxed_residuals(x, y, w, inst)
    return float(np.sum(qe * np.einsum("ij,ij->i", re, re)) - np.sum(ut * y)
                 + np.sum(qa * np.einsum("ij,ij->i", ra, ra)) - np.sum(vt * w))


def relaxed_gradient(x, y, w, inst: ProblemInstance, mode: WeightMode = WeightMode.UNIT):
    """Gradient of :func:`relaxed_cost` as ``(gx, gy, gw)``."""
    x, y, w = (np.asarray(a, dtype=float) for a in (x, y, w))
    _check_sizes(x, y, w, inst)
    qe, qa = range_weights(inst, mode)
    ut, vt = scaled_bearings(inst)
    re, ra = relaxed_residuals(x, y, w, inst)
    re = 2 * qe[:, None] * re
    ra = 2 * qa[:, None] * ra
    gx = inst.incidence.T @ re + inst.link_selector.T @ ra
    return np.asarray(gx), -re - ut, -ra - vt


def eval_variational(z, d: float) -> float:
    """``min_{|y| = d} |z - y|^2``, attained at ``y = d z/|z|``."""
    if not d > 0:
        raise ValueError("d must be > 0")
    return float((np.linalg.norm(z) - d) ** 2)
