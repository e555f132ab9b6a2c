"""Sequential center placement: one heatmap prediction per room in hierarchy
order (bedrooms, restrooms, kitchen, balcony), with suppression of placed
centers, in-envelope feasibility filtering, and deterministic or temperature
sampling."""

from __future__ import annotations

import numpy as np

from . import geometry as geo
from .nn.rng import stream
from .peaks import (
    HEAT_FLOOR,
    NoFeasiblePlacement,
    select_balcony,
    select_center,
    suppress_and_extract,
)
from .rasters import assemble_global_raster, assemble_step_raster, placed_disc_union
from .synthdata import BAL, Program


class PlacementError(RuntimeError):
    """Carries the partial center set so callers can inspect/resume."""

    def __init__(self, message, placed, task, step_index):
        super().__init__(message)
        self.placed = list(placed)
        self.task = task
        self.step_index = step_index


def _in_envelope(point, env_mask) -> bool:
    col = int(point[0])
    row = int(point[1])
    if not (0 <= row < env_mask.shape[0] and 0 <= col < env_mask.shape[1]):
        return False
    return bool(env_mask[row, col])


def _fallback_candidate(h_suppressed, env_mask, placed):
    """Best in-envelope pixel of the suppressed heatmap, clear of placed
    centers; used when no blob survives the feasibility filter."""
    allowed = env_mask.astype(bool) & (placed_disc_union(placed) == 0)
    if not allowed.any():
        return None
    masked = np.where(allowed, h_suppressed, -1.0)
    idx = int(masked.argmax())
    row, col = divmod(idx, masked.shape[1])
    value = float(masked[row, col])
    if value < HEAT_FLOOR:
        return None
    return ((col + 0.5, row + 0.5), value)


def place_sequence(model, envelope, door, program: Program,
                   mode: str = "deterministic", tau: float = 0.7, seed: int = 0,
                   env_mask=None, collect_heatmaps: bool = False):
    """Full placement loop; returns the ordered center list (and, optionally,
    the per-step heatmaps)."""
    envelope = geo.ensure_clockwise(envelope)
    if env_mask is None:
        env_mask = geo.rasterize_polygon(envelope)
    glob = assemble_global_raster(envelope, door, program, envelope_mask=env_mask)

    placed: list = []
    heatmaps = []
    for i, task in enumerate(program.room_sequence()):
        step = assemble_step_raster(placed, task)
        heat = model.predict_heatmap(glob, step, task)
        if collect_heatmaps:
            heatmaps.append((task, heat))
        if task == BAL:
            anchor = select_balcony(heat, envelope, placed)
            if anchor is not None:
                placed.append((anchor, BAL))
            continue
        candidates, h_sup = suppress_and_extract(heat, placed)
        feasible = [c for c in candidates if _in_envelope(c[0], env_mask)]
        if not feasible:
            fb = _fallback_candidate(h_sup, env_mask, placed)
            if fb is None:
                raise PlacementError("no feasible placement", placed, task, i)
            feasible = [fb]
        rng = stream(seed, f"sampling/{i}") if mode == "stochastic" else None
        center = select_center(feasible, mode=mode, tau=tau, rng=rng)
        placed.append((center, task))
    if collect_heatmaps:
        return placed, heatmaps
    return placed


def step_candidates(model, envelope, door, program: Program, placed, task,
                    env_mask=None):
    """Candidates for a single interactive step (service/UI path).

    Returns (heatmap, ranked feasible candidates); balconies rank
    boundary-adjacent blobs with their anchors."""
    envelope = geo.ensure_clockwise(envelope)
    if env_mask is None:
        env_mask = geo.rasterize_polygon(envelope)
    glob = assemble_global_raster(envelope, door, program, envelope_mask=env_mask)
    step = assemble_step_raster(placed, task)
    heat = model.predict_heatmap(glob, step, task)
    candidates, h_sup = suppress_and_extract(heat, placed)
    if task == BAL:
        out = []
        for point, score in candidates:
            edge, foot, dist = geo.project_to_boundary(point, envelope)
            if dist <= 10.0:
                out.append(((float(foot[0]), float(foot[1])), score))
        return heat, out
    feasible = [c for c in candidates if _in_envelope(c[0], env_mask)]
    if not feasible:
        fb = _fallback_candidate(h_sup, env_mask, placed)
        if fb is not None:
            feasible = [fb]
    return heat, feasible
