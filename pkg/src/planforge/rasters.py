"""Input raster assembly for the center-placement network.

The global raster carries the plan-invariant context (envelope mask, door
impulse, normalized target-area plane, bucketized program counts) and the step
raster carries the evolving state (placed-center discs per type, current-task
one-hot planes).
"""

from __future__ import annotations

import numpy as np

from . import geometry as geo
from .synthdata import BED, KIT, REST, ROOM_TYPES

GLOBAL_CHANNELS = 11  # mask + door + area + 4 bed bins + 4 rest bins
STEP_CHANNELS = 8     # 4 placed-disc channels + 4 task channels
CENTER_DISC_RADIUS = 5.0
DOOR_TOLERANCE_PX = 2.0

TYPE_INDEX = {t: i for i, t in enumerate(ROOM_TYPES)}


class RasterError(ValueError):
    pass


def area_alpha(target_area_m2: float) -> float:
    """Target floor area mapped linearly from 50..250 m^2 onto [0, 1]."""
    return float(np.clip((target_area_m2 - 50.0) / 200.0, 0.0, 1.0))


def count_bin(count: int) -> int:
    """Bucketize a room count into bins {1, 2, 3, >=4}."""
    return min(max(int(count), 1), 4) - 1


def point_pixel(p) -> tuple[int, int]:
    """(row, col) of the pixel containing a continuous point."""
    col = int(np.clip(np.floor(float(p[0])), 0, geo.CANVAS - 1))
    row = int(np.clip(np.floor(float(p[1])), 0, geo.CANVAS - 1))
    return row, col


def assemble_global_raster(envelope, door, program, envelope_mask=None) -> np.ndarray:
    """[11, 256, 256] float32 plan-context stack."""
    if geo.boundary_distance(door, envelope) > DOOR_TOLERANCE_PX:
        raise RasterError("door lies farther than 2 px from the envelope boundary")
    size = geo.CANVAS
    x = np.zeros((GLOBAL_CHANNELS, size, size), dtype=np.float32)
    mask = envelope_mask if envelope_mask is not None else geo.rasterize_polygon(envelope)
    x[0] = mask
    row, col = point_pixel(door)
    x[1, row, col] = 1.0
    x[2] = area_alpha(program.target_area_m2)
    x[3 + count_bin(program.bedrooms)] = 1.0
    x[7 + count_bin(program.restrooms)] = 1.0
    return x


def assemble_step_raster(placed, task: str) -> np.ndarray:
    """[8, 256, 256] float32 evolving-state stack.

    ``placed`` is a sequence of ((x, y), room_type); overlapping discs of the
    same type stay binary (union).
    """
    if task not in TYPE_INDEX:
        raise RasterError(f"unknown task '{task}'")
    size = geo.CANVAS
    x = np.zeros((STEP_CHANNELS, size, size), dtype=np.float32)
    for center, rtype in placed:
        ch = TYPE_INDEX[rtype]
        disc = geo.rasterize_disc(center, CENTER_DISC_RADIUS, size=size)
        np.maximum(x[ch], disc, out=x[ch])
    x[4 + TYPE_INDEX[task]] = 1.0
    return x


def disc_target(center, radius: float = CENTER_DISC_RADIUS,
                size: int = geo.CANVAS) -> np.ndarray:
    """Supervision target: filled disc at the ground-truth center (contract
    radius 5 px; training may anneal from wider discs)."""
    return geo.rasterize_disc(center, radius, size=size).astype(np.float32)


def placed_disc_union(placed, radius: float = CENTER_DISC_RADIUS) -> np.ndarray:
    """Union mask of suppression discs around already-placed centers."""
    out = np.zeros((geo.CANVAS, geo.CANVAS), dtype=np.float32)
    for center, _ in placed:
        np.maximum(out, geo.rasterize_disc(center, radius), out=out)
    return out
