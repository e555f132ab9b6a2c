"""Heatmap peak extraction and center selection.

Already-placed centers are suppressed by subtracting filled discs (clamped at
zero so the sampling distribution stays well-defined), then candidate centers
are the local maxima of the scale-normalized Laplacian-of-Gaussian response,
scored and ranked by suppressed-heatmap value.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage

from . import geometry as geo
from .rasters import placed_disc_union
from .synthdata import BAL

log = logging.getLogger(__name__)

LOG_SIGMAS = (2.0, 3.0, 4.0, 5.0)
LOG_THRESHOLD = 1e-4
HEAT_FLOOR = 0.05
SUPPRESS_RADIUS = 5.0
BALCONY_BOUNDARY_PX = 10.0
_NMS_RADIUS = 3.0


class NoFeasiblePlacement(RuntimeError):
    pass


def suppress_placed(heatmap: np.ndarray, placed) -> np.ndarray:
    """Heatmap minus placed-center discs, clamped to [0, 1]."""
    out = heatmap.astype(np.float64, copy=True)
    if placed:
        out -= placed_disc_union(placed, SUPPRESS_RADIUS)
    return np.clip(out, 0.0, 1.0)


def log_response(h: np.ndarray, sigmas=LOG_SIGMAS) -> np.ndarray:
    """Max over scales of the scale-normalized (sign-flipped) LoG response."""
    resp = None
    for s in sigmas:
        r = -(s * s) * ndimage.gaussian_laplace(h, sigma=s)
        resp = r if resp is None else np.maximum(resp, r)
    return resp


def _local_maxima(resp: np.ndarray, threshold: float):
    peak = (resp == ndimage.maximum_filter(resp, size=3)) & (resp > threshold)
    ys, xs = np.nonzero(peak)
    return ys, xs


def suppress_and_extract(heatmap: np.ndarray, placed=(), *,
                         sigmas=LOG_SIGMAS, log_threshold=LOG_THRESHOLD,
                         floor=HEAT_FLOOR):
    """Ranked candidate centers after suppression.

    Returns (candidates, suppressed_heatmap) where candidates is a list of
    ((x, y), score) sorted by descending score; score is the suppressed-heatmap
    value at the peak pixel.  Candidates within the suppression radius of any
    placed center are removed outright, and near-duplicate maxima are collapsed
    to the stronger peak.
    """
    h = suppress_placed(heatmap, placed)
    if float(h.max()) < floor:
        return [], h
    ys, xs = _local_maxima(log_response(h, sigmas), log_threshold)
    scored = sorted(
        ((float(h[y, x]), float(y), float(x)) for y, x in zip(ys, xs)),
        key=lambda s: (-s[0], s[1], s[2]),
    )
    centers = [((c, r), s) for s, r, c in scored]

    kept = []
    placed_pts = [np.asarray(c, dtype=float) for c, _ in placed]
    for (x, y), score in centers:
        p = np.array([x + 0.5, y + 0.5])
        if any(np.hypot(*(p - q)) <= SUPPRESS_RADIUS for q in placed_pts):
            continue
        if any(np.hypot(*(p - np.asarray(kp))) < _NMS_RADIUS for kp, _ in kept):
            continue
        kept.append(((float(p[0]), float(p[1])), score))
    return kept, h


def select_center(candidates, mode: str = "deterministic", tau: float = 0.7,
                  rng=None):
    """Pick one candidate: argmax (ties to the lexicographically smaller
    (y, x) point) or temperature sampling proportional to score**(1/tau)."""
    if not candidates:
        raise NoFeasiblePlacement("no feasible placement")
    if mode == "deterministic":
        best = min(candidates, key=lambda c: (-c[1], c[0][1], c[0][0]))
        return np.array(best[0])
    if mode != "stochastic":
        raise ValueError(f"unknown selection mode '{mode}'")
    if rng is None:
        raise ValueError("stochastic selection needs an rng")
    scores = np.array([max(s, 0.0) for _, s in candidates], dtype=np.float64)
    if scores.sum() <= 0.0:
        probs = np.full(len(candidates), 1.0 / len(candidates))
    else:
        w = scores ** (1.0 / tau)
        probs = w / w.sum()
    idx = int(rng.choice(len(candidates), p=probs))
    return np.array(candidates[idx][0])


def select_balcony(heatmap: np.ndarray, envelope, placed=()):
    """Boundary-adjacent top-1 policy: among candidates within 10 px of the
    envelope boundary pick the strongest; anchor it on the boundary.  Returns
    None (logged) when no candidate qualifies."""
    candidates, _ = suppress_and_extract(heatmap, placed)
    best = None
    for point, score in candidates:
        edge, foot, dist = geo.project_to_boundary(point, envelope)
        if dist <= BALCONY_BOUNDARY_PX and (best is None or score > best[0]):
            best = (score, foot, edge)
    if best is None:
        log.info("balcony omitted: no boundary-adjacent candidate")
        return None
    return np.asarray(best[1], dtype=float)
