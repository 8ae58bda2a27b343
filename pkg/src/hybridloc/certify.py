"""Suboptimality certificates for relaxed solutions and error metrics.

E1 measures how far the auxiliaries are from ``d * (x_i - x_j)/|x_i - x_j|``,
E2 how far their norms are from the measured ranges. Both use the printed
normalization by default: the edge term is averaged over all edges, the
anchor term is the sum over agents of per-agent averages over their links.
``normalization="measurement"`` instead averages every term over the total
number of measurements.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .cost import EPS_DIV, CoincidentPointsError
from .model import GroundTruth, ProblemInstance

log = logging.getLogger(__name__)

NORMALIZATIONS = ("printed", "measurement")


@dataclass
class CertificateReport:
    E1: float
    E2: float
    thetas: np.ndarray
    betas: np.ndarray
    E1_per_measurement: float = np.nan
    E2_per_measurement: float = np.nan
    loc_error: Optional[float] = None
    loc_error_max: Optional[float] = None
    undefined_angles: int = 0

    @property
    def angles(self) -> np.ndarray:
        """Pooled edge and anchor angles, undefined ones dropped."""
        a = np.concatenate([self.thetas, self.betas])
        return a[np.isfinite(a)]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["thetas"] = [None if not np.isfinite(t) else float(t) for t in self.thetas]
        out["betas"] = [None if not np.isfinite(t) else float(t) for t in self.betas]
        return out


def _differences(x, inst):
    x = np.asarray(x, dtype=float)
    i, j = inst.edge_index
    li, lk = inst.link_index
    return x[i] - x[j], x[li] - inst.anchor_array[lk]


def _combine(edge_terms, link_terms, inst: ProblemInstance, normalization: str) -> float:
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    if normalization == "measurement":
        total = edge_terms.size + link_terms.size
        return float((edge_terms.sum() + link_terms.sum()) / total) if total else 0.0
    edge_part = float(edge_terms.mean()) if edge_terms.size else 0.0
    li, _ = inst.link_index
    if not link_terms.size:
        return edge_part
    counts = np.bincount(li, minlength=inst.n)
    sums = np.bincount(li, weights=link_terms, minlength=inst.n)
    linked = counts > 0
    return edge_part + float(np.sum(sums[linked] / counts[linked]))


def p1_residual_terms(x, y, w, inst: ProblemInstance):
    """Per-term ``|y_ij - d_ij e_ij|`` and ``|w_ik - r_ik e_ik|``."""
    de, da = _differences(x, inst)
    ne, na = np.linalg.norm(de, axis=1), np.linalg.norm(da, axis=1)
    for nrm, idx, what in ((ne, inst.edge_index, "edge"), (na, inst.link_index, "anchor link")):
        bad = np.nonzero(nrm < EPS_DIV)[0]
        if bad.size:
            raise CoincidentPointsError(
                f"coincident estimate on {what} ({idx[0][bad[0]] + 1}, {idx[1][bad[0]] + 1})")
    te = np.linalg.norm(np.asarray(y) - inst.d[:, None] * de / ne[:, None], axis=1)
    ta = np.linalg.norm(np.asarray(w) - inst.r[:, None] * da / na[:, None], axis=1)
    return te, ta


def p2_residual_terms(y, w, inst: ProblemInstance):
    te = np.abs(np.linalg.norm(np.asarray(y).reshape(-1, inst.dim), axis=1) - inst.d)
    ta = np.abs(np.linalg.norm(np.asarray(w).reshape(-1, inst.dim), axis=1) - inst.r)
    return te, ta


def residual_E1(sol, inst: ProblemInstance, normalization: str = "printed") -> float:
    return _combine(*p1_residual_terms(sol.x, sol.y, sol.w, inst), inst, normalization)


def residual_E2(sol, inst: ProblemInstance, normalization: str = "printed") -> float:
    return _combine(*p2_residual_terms(sol.y, sol.w, inst), inst, normalization)


def _angles(aux, diff) -> tuple[np.ndarray, int]:
    na = np.linalg.norm(aux, axis=1)
    nd = np.linalg.norm(diff, axis=1)
    ok = (na > 0) & (nd > 0)
    out = np.full(len(aux), np.nan)
    if ok.any():
        cos = np.einsum("ij,ij->i", aux[ok], diff[ok]) / (na[ok] * nd[ok])
        overshoot = np.abs(cos) - 1
        if np.any(overshoot > 1e-12):
            log.warning("clamped %d cosines exceeding 1 by more than 1e-12",
                        int(np.sum(overshoot > 1e-12)))
        out[ok] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return out, int(np.sum(~ok))


def suboptimality_angles(sol, inst: ProblemInstance) -> tuple[np.ndarray, np.ndarray, int]:
    """Angles (degrees) between each auxiliary and its estimated displacement.

    Undefined angles (a zero vector) come back as NaN; the third element is
    their count.
    """
    de, da = _differences(sol.x, inst)
    thetas, bad_e = _angles(np.asarray(sol.y).reshape(-1, inst.dim), de)
    betas, bad_a = _angles(np.asarray(sol.w).reshape(-1, inst.dim), da)
    return thetas, betas, bad_e + bad_a


def localization_error(x_hat, truth) -> tuple[float, float, np.ndarray]:
    """Mean, max and per-node distance between estimate and truth."""
    ref = truth.array if isinstance(truth, GroundTruth) else np.asarray(truth, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.shape != ref.shape:
        raise ValueError(f"shape mismatch: estimate {x_hat.shape} vs truth {ref.shape}")
    per_node = np.linalg.norm(x_hat - ref, axis=1)
    if per_node.size == 0:
        return 0.0, 0.0, per_node
    return float(per_node.mean()), float(per_node.max()), per_node


def certify(sol, inst: ProblemInstance, truth: Optional[GroundTruth] = None) -> CertificateReport:
    thetas, betas, bad = suboptimality_angles(sol, inst)
    p1 = p1_residual_terms(sol.x, sol.y, sol.w, inst)
    p2 = p2_residual_terms(sol.y, sol.w, inst)
    rep = CertificateReport(
        E1=_combine(*p1, inst, "printed"),
        E2=_combine(*p2, inst, "printed"),
        thetas=thetas, betas=betas,
        E1_per_measurement=_combine(*p1, inst, "measurement"),
        E2_per_measurement=_combine(*p2, inst, "measurement"),
        undefined_angles=bad,
    )
    if truth is not None:
        rep.loc_error, rep.loc_error_max, _ = localization_error(sol.x, truth)
    return rep
