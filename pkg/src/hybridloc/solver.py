"""Solvers for the ball-constrained relaxation and a local nonconvex refiner.

The relaxed objective over the stacked variable ``z = [x; y; w]`` (one row
per agent, edge and anchor link) is

    sum_rows q_r |(A z)_r - c_r|^2 - <g, z>

with ``A`` the sparse operator producing ``x_i - x_j - y_ij`` and
``x_i - w_ik``, ``c`` the anchor offsets and ``g`` the scaled bearings. The
Hessian ``2 A^T Q A`` is constant and acts identically on every coordinate.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .cost import (
    CoincidentPointsError, WeightMode, ml_cost, ml_gradient, range_weights, scaled_bearings,
)
from .model import ProblemInstance


class Init(enum.Enum):
    ZEROS = "zeros"
    ANCHOR_CENTROID = "anchor-centroid"
    GIVEN = "given"


class SingularSystemError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol_pg: float = 1e-9
    max_iters: int = 100_000
    use_acceleration: bool = True
    init: Init = Init.ANCHOR_CENTROID
    check_every: int = 5

    def __post_init__(self):
        if not self.tol_pg > 0:
            raise ValueError(f"tol_pg must be > 0, got {self.tol_pg}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if isinstance(self.init, str):
            object.__setattr__(self, "init", Init(self.init))

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Solution:
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    objective: float
    iterations: int
    converged: bool
    pg_residual: float
    mode: WeightMode = WeightMode.UNIT
    history: list = field(default_factory=list, repr=False)


# --- elementary blocks -------------------------------------------------------

def project_ball(v, radius):
    """Project row vectors ``v`` onto balls of the given radii."""
    v = np.asarray(v, dtype=float)
    radius = np.asarray(radius, dtype=float)
    if np.any(radius <= 0):
        raise ValueError("radius must be > 0")
    nrm = np.linalg.norm(v, axis=-1)
    factor = np.where(nrm > radius, radius / np.where(nrm > 0, nrm, 1.0), 1.0)
    return v * factor[..., None] if v.ndim > 1 else v * float(factor)


def y_update(x_i, x_j, utilde, d, weight: float = 1.0):
    """Minimize ``weight*|z - y|^2 - utilde.y`` over ``|y| <= d`` with ``z = x_i - x_j``."""
    z = np.asarray(x_i, dtype=float) - np.asarray(x_j, dtype=float)
    weight = np.asarray(weight, dtype=float)
    if weight.ndim:
        weight = weight[:, None]
    return project_ball(z + np.asarray(utilde) / (2 * weight), d)


class RelaxedProblem:
    """Stacked-variable view of the relaxed program for one instance and mode."""

    def __init__(self, inst: ProblemInstance, mode: WeightMode = WeightMode.UNIT):
        self.inst = inst
        self.mode = mode
        n, ne, nl = inst.n, inst.num_edges, inst.num_links
        self.n, self.ne, self.nl = n, ne, nl
        self.qe, self.qa = range_weights(inst, mode)
        self.q = np.concatenate([self.qe, self.qa])
        ut, vt = scaled_bearings(inst)
        self.lin = np.vstack([np.zeros((n, inst.dim)), ut, vt])
        _, lk = inst.link_index
        self.offset = np.vstack([np.zeros((ne, inst.dim)), inst.anchor_array[lk]])
        self.A = sp.vstack([
            sp.hstack([inst.incidence, -sp.identity(ne), sp.csr_matrix((ne, nl))]),
            sp.hstack([inst.link_selector, sp.csr_matrix((nl, ne)), -sp.identity(nl)]),
        ]).tocsr() if ne + nl else sp.csr_matrix((0, n))
        self.At = self.A.T.tocsr()
        self.radii = np.concatenate([inst.d, inst.r])

    def split(self, z):
        return z[:self.n], z[self.n:self.n + self.ne], z[self.n + self.ne:]

    def stack(self, x, y, w):
        return np.vstack([x, y, w])

    def value(self, z) -> float:
        res = self.A @ z - self.offset
        return float(np.sum(self.q * np.einsum("ij,ij->i", res, res)) - np.sum(self.lin * z))

    def grad(self, z) -> np.ndarray:
        res = self.A @ z - self.offset
        return self.At @ (2 * self.q[:, None] * res) - self.lin

    def value_grad(self, z):
        res = self.A @ z - self.offset
        val = float(np.sum(self.q * np.einsum("ij,ij->i", res, res)) - np.sum(self.lin * z))
        return val, self.At @ (2 * self.q[:, None] * res) - self.lin

    def project(self, z) -> np.ndarray:
        out = z.copy()
        if self.ne + self.nl:
            out[self.n:] = project_ball(z[self.n:], self.radii)
        return out

    def hess_apply(self, v: np.ndarray) -> np.ndarray:
        """Scalar (single-coordinate) Hessian-vector product."""
        return self.At @ (2 * self.q * (self.A @ v))

    def hessian_dense(self) -> np.ndarray:
        return (2 * self.At @ sp.diags(self.q) @ self.A).toarray()

    def pg_residual(self, z, L: float, g: Optional[np.ndarray] = None) -> float:
        if g is None:
            g = self.grad(z)
        return float(L * np.linalg.norm(z - self.project(z - g / L)))

    @cached_property
    def normal_factor(self):
        """Cholesky factor of the x-block Hessian / 2 (weighted Laplacian + anchor diagonal)."""
        inst = self.inst
        B, S = inst.incidence, inst.link_selector
        M = (B.T @ sp.diags(self.qe) @ B + S.T @ sp.diags(self.qa) @ S).toarray()
        try:
            return scipy.linalg.cho_factor(M)
        except np.linalg.LinAlgError:
            raise SingularSystemError(
                "x-update system is singular: some component with no anchor path") from None


def lipschitz_estimate(inst: ProblemInstance, mode: WeightMode = WeightMode.UNIT,
                       rtol: float = 1e-6, max_iter: int = 20000,
                       problem: Optional[RelaxedProblem] = None) -> float:
    """Largest Hessian eigenvalue by power iteration, times a 1.01 safety factor."""
    prob = problem or RelaxedProblem(inst, mode)
    size = prob.n + prob.ne + prob.nl
    if prob.ne + prob.nl == 0:
        return 0.0
    v = 1.0 + np.arange(size) / size
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        hv = prob.hess_apply(v)
        new = float(v @ hv)
        nrm = np.linalg.norm(hv)
        if nrm == 0:
            return 0.0
        v = hv / nrm
        if abs(new - lam) <= rtol * abs(new):
            lam = new
            break
        lam = new
    return 1.01 * lam


def x_update(y, w, inst: ProblemInstance, mode: WeightMode = WeightMode.UNIT,
             problem: Optional[RelaxedProblem] = None) -> np.ndarray:
    """Exact minimizer over positions with ``y`` and ``w`` fixed."""
    prob = problem or RelaxedProblem(inst, mode)
    _, lk = inst.link_index
    rhs = (inst.incidence.T @ (prob.qe[:, None] * np.asarray(y))
           + inst.link_selector.T @ (prob.qa[:, None] * (inst.anchor_array[lk] + np.asarray(w))))
    return scipy.linalg.cho_solve(prob.normal_factor, np.asarray(rhs))


def initial_point(inst: ProblemInstance, cfg: SolverConfig, x0=None) -> np.ndarray:
    if cfg.init is Init.GIVEN:
        if x0 is None:
            raise ValueError("init=given requires x0")
        return np.array(x0, dtype=float)
    x = np.zeros((inst.n, inst.dim))
    if cfg.init is Init.ANCHOR_CENTROID and inst.num_anchors:
        x += inst.anchor_array.mean(axis=0)
        x += 1e-6 * np.arange(1, inst.n + 1)[:, None]
    return x


def solve_convex(inst: ProblemInstance, cfg: SolverConfig = SolverConfig(),
                 mode: WeightMode = WeightMode.UNIT, x0=None,
                 record_history: bool = False) -> Solution:
    """Accelerated projected gradient with function-value restart."""
    prob = RelaxedProblem(inst, mode)
    x_init = initial_point(inst, cfg, x0)
    z = prob.stack(x_init, np.zeros((prob.ne, inst.dim)), np.zeros((prob.nl, inst.dim)))
    L = lipschitz_estimate(inst, mode, problem=prob)
    if L == 0.0:
        return Solution(*prob.split(z), objective=prob.value(z), iterations=0,
                        converged=True, pg_residual=0.0, mode=mode)

    tol = cfg.tol_pg * inst.scale
    f = prob.value(z)
    history = [f] if record_history else []
    v, t = z, 1.0
    pg = np.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        z_new = prob.project(v - prob.grad(v) / L)
        f_new = prob.value(z_new)
        if f_new > f and v is not z:
            # momentum overshot: restart from the last accepted iterate
            v, t = z, 1.0
            z_new = prob.project(z - prob.grad(z) / L)
            f_new = prob.value(z_new)
        if cfg.use_acceleration:
            t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            v = z_new + ((t - 1) / t_new) * (z_new - z)
            t = t_new
        else:
            v = z_new
        z, f = z_new, f_new
        if record_history:
            history.append(f)
        if it % cfg.check_every == 0 or it == cfg.max_iters:
            pg = prob.pg_residual(z, L)
            if pg <= tol:
                converged = True
                break
    if not converged:
        pg = prob.pg_residual(z, L)
        converged = pg <= tol
    x, y, w = prob.split(z)
    return Solution(x.copy(), y.copy(), w.copy(), objective=f, iterations=it,
                    converged=converged, pg_residual=pg, mode=mode, history=history)


def solve_alternating(inst: ProblemInstance, cfg: SolverConfig = SolverConfig(),
                      mode: WeightMode = WeightMode.UNIT, x0=None, rel_tol: float = 1e-12,
                      record_history: bool = False) -> Solution:
    """Exact block-coordinate descent: x by a linear solve, y and w in closed form."""
    prob = RelaxedProblem(inst, mode)
    x = initial_point(inst, cfg, x0)
    y = np.zeros((prob.ne, inst.dim))
    w = np.zeros((prob.nl, inst.dim))
    if prob.ne + prob.nl == 0:
        z = prob.stack(x, y, w)
        return Solution(x, y, w, objective=prob.value(z), iterations=0, converged=True,
                        pg_residual=0.0, mode=mode)
    ut, vt = scaled_bearings(inst)
    i, j = inst.edge_index
    li, lk = inst.link_index
    anchors = inst.anchor_array
    f = prob.value(prob.stack(x, y, w))
    history = [f] if record_history else []
    converged = False
    sweeps = 0
    for sweeps in range(1, cfg.max_iters + 1):
        y = y_update(x[i], x[j], ut, inst.d, prob.qe)
        w = y_update(x[li], anchors[lk], vt, inst.r, prob.qa)
        if record_history:
            history.append(prob.value(prob.stack(x, y, w)))
        x = x_update(y, w, inst, mode, problem=prob)
        f_new = prob.value(prob.stack(x, y, w))
        if record_history:
            history.append(f_new)
        change = abs(f - f_new)
        f = f_new
        if change <= rel_tol * max(1.0, abs(f)):
            converged = True
            break
    L = lipschitz_estimate(inst, mode, problem=prob)
    z = prob.stack(x, y, w)
    return Solution(x, y, w, objective=f, iterations=sweeps, converged=converged,
                    pg_residual=prob.pg_residual(z, L), mode=mode, history=history)


# --- nonconvex refinement ----------------------------------------------------

@dataclass
class RefineResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    line_search_failed: bool = False
    grad_norm: float = np.nan


def refine_nonconvex(x0, inst: ProblemInstance, mode: WeightMode = WeightMode.FULL_ML,
                     gtol: float = 1e-8, max_iters: int = 10_000,
                     armijo_c: float = 1e-4, shrink: float = 0.5,
                     cost_rtol: float = 1e-12) -> RefineResult:
    """Gradient descent with Armijo backtracking on :func:`ml_cost`.

    Trial steps use the Barzilai-Borwein length. Close to a minimizer the
    Armijo decrease drops below the rounding error of the cost, so a step is
    also accepted under the approximate Wolfe test of Hager and Zhang: cost
    not above ``f + cost_rtol*|f|`` and directional slope at the trial point
    no steeper than ``(1 - 2c)`` times the initial slope.
    """
    x = np.array(x0, dtype=float)
    tol = gtol * inst.scale
    f = ml_cost(x, inst, mode)
    g = ml_gradient(x, inst, mode)
    step = 1.0 / max(1.0, np.linalg.norm(g))
    x_prev = g_prev = None
    for it in range(max_iters + 1):
        gn2 = float(np.sum(g * g))
        if np.sqrt(gn2) <= tol:
            return RefineResult(x, f, it, True, grad_norm=np.sqrt(gn2))
        if it == max_iters:
            break
        if x_prev is not None:
            s, dg = x - x_prev, g - g_prev
            sy = float(np.sum(s * dg))
            if sy > 0:
                step = float(np.sum(s * s)) / sy
        alpha = step
        while True:
            cand = x - alpha * g
            try:
                f_c = ml_cost(cand, inst, mode)
                g_c = ml_gradient(cand, inst, mode)
            except CoincidentPointsError:
                f_c, g_c = np.inf, None
            if f_c <= f - armijo_c * alpha * gn2:
                break
            if (g_c is not None and f_c <= f + cost_rtol * abs(f)
                    and float(np.sum(g_c * g)) >= -(1 - 2 * armijo_c) * gn2):
                break
            alpha *= shrink
            if alpha * np.sqrt(gn2) < 1e-16 * max(1.0, np.abs(x).max()):
                return RefineResult(x, f, it, False, line_search_failed=True,
                                    grad_norm=np.sqrt(gn2))
        x_prev, g_prev = x, g
        x, f, g = cand, f_c, g_c
    return RefineResult(x, f, max_iters, False, grad_norm=float(np.linalg.norm(g)))
