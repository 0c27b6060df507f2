"""Sequence evaluation metrics: RMSE, Hausdorff distance, and the
spatio-temporal edge difference (STED).

All distances are reported in meters. STED combines, in quadrature, the
RMS relative edge-length error over frames (spatial term) with the RMS
relative difference of per-vertex displacement magnitudes between
consecutive frames (temporal term, ground-truth displacements below a
small floor excluded).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import directed_hausdorff

__all__ = ["rmse", "hausdorff", "sted", "MetricReport", "evaluate_sequences"]


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"sequence shapes differ: {pred.shape} vs {truth.shape}")
    return pred, truth


def rmse(pred, truth):
    """Root mean squared vertex error over all frames and vertices."""
    pred, truth = _check_pair(pred, truth)
    sq = ((pred - truth) ** 2).sum(axis=-1)
    return float(np.sqrt(sq.mean()))


def hausdorff(pred_frame, truth_frame):
    """Symmetric point-set Hausdorff distance between two vertex sets."""
    a = np.asarray(pred_frame, dtype=np.float64)
    b = np.asarray(truth_frame, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("hausdorff: empty point set")
    d_ab = directed_hausdorff(a, b)[0]
    d_ba = directed_hausdorff(b, a)[0]
    return float(max(d_ab, d_ba))


def sequence_hausdorff(pred, truth):
    """Mean per-frame Hausdorff distance over a sequence."""
    pred, truth = _check_pair(pred, truth)
    return float(np.mean([hausdorff(p, t) for p, t in zip(pred, truth)]))


def sted(pred, truth, edges, temporal_weight=1.0, displacement_floor=1e-6):
    """Spatio-temporal edge difference between two sequences.

    Parameters
    ----------
    pred, truth : (frames, n, 3) arrays, frames >= 2.
    edges : (e, 2) int vertex pairs of the mesh.
    temporal_weight : weight of the temporal term in the quadrature sum.
    displacement_floor : ground-truth displacement magnitudes below this
        are excluded from the temporal term (meters).
    """
    pred, truth = _check_pair(pred, truth)
    if pred.shape[0] < 2:
        raise ValueError("sted requires at least 2 frames")
    edges = np.asarray(edges, dtype=np.int64)

    lp = np.linalg.norm(pred[:, edges[:, 0]] - pred[:, edges[:, 1]], axis=-1)
    lt = np.linalg.norm(truth[:, edges[:, 0]] - truth[:, edges[:, 1]], axis=-1)
    valid = lt > 0
    if not valid.all():
        warnings.warn(
            f"sted: excluding {int((~valid).sum())} zero-length ground-truth edge samples"
        )
    rel = (lp[valid] - lt[valid]) / lt[valid]
    sted_s = float(np.sqrt((rel**2).mean())) if rel.size else 0.0

    dp = np.linalg.norm(np.diff(pred, axis=0), axis=-1)
    dt = np.linalg.norm(np.diff(truth, axis=0), axis=-1)
    moving = dt >= displacement_floor
    if moving.any():
        rel_t = (dp[moving] - dt[moving]) / dt[moving]
        sted_t = float(np.sqrt((rel_t**2).mean()))
    else:
        sted_t = 0.0
    return float(np.sqrt(sted_s**2 + (temporal_weight * sted_t) ** 2))


@dataclass
class MetricReport:
    """Per-sequence and aggregate metric values (meters; STED dimensionless)."""

    per_sequence: list = field(default_factory=list)  # (name, rmse, hausdorff, sted)

    def add(self, name, rmse_value, hausdorff_value, sted_value):
        self.per_sequence.append((name, float(rmse_value), float(hausdorff_value), float(sted_value)))

    def aggregate(self):
        if not self.per_sequence:
            raise ValueError("empty report")
        arr = np.array([[r, h, s] for _, r, h, s in self.per_sequence])
        return tuple(float(x) for x in arr.mean(axis=0))

    def to_text(self):
        lines = ["sequence rmse_m hausdorff_m sted"]
        for name, r, h, s in self.per_sequence:
            lines.append(f"{name} {r:.9e} {h:.9e} {s:.9e}")
        ar, ah, asd = self.aggregate()
        lines.append(f"AGGREGATE {ar:.9e} {ah:.9e} {asd:.9e}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        lines = ["sequence,rmse_m,hausdorff_m,sted"]
        for name, r, h, s in self.per_sequence:
            lines.append(f"{name},{r:.9e},{h:.9e},{s:.9e}")
        ar, ah, asd = self.aggregate()
        lines.append(f"AGGREGATE,{ar:.9e},{ah:.9e},{asd:.9e}")
        return "\n".join(lines) + "\n"


def evaluate_sequences(named_pairs, edges, temporal_weight=1.0, displacement_floor=1e-6):
    """Build a MetricReport over (name, pred, truth) sequence triples."""
    report = MetricReport()
    for name, pred, truth in named_pairs:
        report.add(
            name,
            rmse(pred, truth),
            sequence_hausdorff(pred, truth),
            sted(pred, truth, edges, temporal_weight, displacement_floor),
        )
    return report
