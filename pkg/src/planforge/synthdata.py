"""Procedural ground-truth floor plans for training and verification.

Each sample is built by guillotine-partitioning a rectilinear envelope into
axis-aligned cells, assigning the largest cell as living and typed rooms to the
rest, then shrinking every room by a fixed gap so that each room borders the
living region on all four sides.  That construction makes the corpus clean by
design: every room is reachable through living, every room meets its area
threshold, and no two rooms share a wall (so the nearest-room adjacency check
has nothing to violate).

Augmentation covers the training-time transforms: flips, uniform scale,
translation, rotation (center-placement mode only; rectangle targets must stay
axis-aligned), and Gaussian center jitter (rectangle-regression mode).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from shapely.geometry import box as sh_box
from shapely.ops import unary_union

from . import geometry as geo
from .nn.rng import stream

BED, REST, KIT, BAL = "bed", "rest", "kit", "bal"
ROOM_TYPES = (BED, REST, KIT, BAL)
INTERIOR_TYPES = (BED, REST, KIT)

# practice-oriented per-type minimum areas, m^2 (living counted separately)
MIN_AREA_M2 = {BED: 9.0, REST: 4.0, KIT: 7.0}
MIN_LIVING_M2 = 12.0

ROOM_GAP_PX = 3.0  # shrink per side; rooms end up 2 gaps apart
DATASET_VERSION = 1


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Program:
    bedrooms: int
    restrooms: int
    balcony: bool = False
    target_area_m2: float = 120.0
    kitchens: int = 1  # fixed by construction

    def __post_init__(self):
        if not 1 <= self.bedrooms <= 4:
            raise SynthError("bedrooms must be in 1..4")
        if not 1 <= self.restrooms <= 4:
            raise SynthError("restrooms must be in 1..4")
        if self.kitchens != 1:
            raise SynthError("kitchen count is fixed to 1")
        if not 50.0 <= self.target_area_m2 <= 250.0:
            raise SynthError("target area must be within 50..250 m^2")

    def room_sequence(self) -> list[str]:
        """Typed placement order: bedrooms, restrooms, kitchen, then balcony."""
        seq = [BED] * self.bedrooms + [REST] * self.restrooms + [KIT]
        if self.balcony:
            seq.append(BAL)
        return seq

    def counts(self) -> dict[str, int]:
        return {BED: self.bedrooms, REST: self.restrooms, KIT: 1,
                BAL: int(self.balcony)}


@dataclass
class Sample:
    envelope: np.ndarray           # (N, 2) clockwise vertices
    door: np.ndarray               # (2,) point on the envelope boundary
    program: Program
    rooms: list                    # [(rect(x1,y1,x2,y2), type)] in placement order
    centers: list                  # [((x, y), type)] aligned with rooms
    target_area_m2: float

    def scale_m_per_px(self) -> float:
        return float(np.sqrt(self.target_area_m2 / geo.polygon_area(self.envelope)))

    def interior_rooms(self):
        return [(r, t) for r, t in self.rooms if t != BAL]

    def copy(self) -> "Sample":
        return Sample(
            envelope=self.envelope.copy(),
            door=self.door.copy(),
            program=self.program,
            rooms=[(tuple(r), t) for r, t in self.rooms],
            centers=[(np.array(c, dtype=float), t) for c, t in self.centers],
            target_area_m2=self.target_area_m2,
        )


@dataclass(frozen=True)
class GeneratorConfig:
    bedrooms: tuple = (1, 3)
    restrooms: tuple = (1, 2)
    balcony_prob: float = 0.5
    families: tuple = ("rect", "l", "t", "u")
    area_slack: tuple = (2.2, 3.2)   # target area = slack * sum of minimums
    max_attempts: int = 20


# ---------------------------------------------------------------------------
# envelope families
# ---------------------------------------------------------------------------

def _envelope_cells(rng, family: str):
    """Component rectangles of a rectilinear envelope, inside the canvas margin."""
    x0 = rng.uniform(22, 52)
    y0 = rng.uniform(22, 52)
    w_min = 172 if family in ("t", "u") else 140
    w = rng.uniform(w_min, 232 - x0)
    h = rng.uniform(140, 232 - y0)
    x1, y1 = x0 + w, y0 + h
    if family == "rect":
        return [(x0, y0, x1, y1)]
    if family == "l":
        xm = rng.uniform(x0 + 0.4 * w, x1 - 55)
        ym = rng.uniform(y0 + 0.4 * h, y1 - 55)
        return [(x0, y0, x1, ym), (x0, ym, xm, y1)]
    if family == "t":
        xa = rng.uniform(x0 + 55, x1 - 110)
        xb = xa + rng.uniform(55, x1 - xa - 55)
        ym = rng.uniform(y0 + 0.35 * h, y1 - 60)
        return [(x0, y0, x1, ym), (xa, ym, xb, y1)]
    if family == "u":
        xa = x0 + rng.uniform(55, w / 2 - 28)
        xb = x1 - rng.uniform(55, w / 2 - 28)
        ym = rng.uniform(y0 + 0.4 * h, y1 - 60)
        return [(x0, y0, x1, ym), (x0, ym, xa, y1), (xb, ym, x1, y1)]
    raise SynthError(f"unknown envelope family '{family}'")


def _cells_to_polygon(cells) -> np.ndarray:
    union = unary_union([sh_box(*c) for c in cells]).simplify(0)
    coords = np.asarray(union.exterior.coords[:-1], dtype=float)
    return geo.ensure_clockwise(coords)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _split_cell(rect, frac):
    x1, y1, x2, y2 = rect
    if (x2 - x1) >= (y2 - y1):
        xm = x1 + frac * (x2 - x1)
        return (x1, y1, xm, y2), (xm, y1, x2, y2)
    ym = y1 + frac * (y2 - y1)
    return (x1, y1, x2, ym), (x1, ym, x2, y2)


def _partition(rng, cells, n_rooms):
    cells = list(cells)
    while len(cells) < n_rooms + 1:
        cells.sort(key=geo.rect_area, reverse=True)
        a, b = _split_cell(cells[0], rng.uniform(0.38, 0.62))
        cells = [a, b] + cells[1:]
    cells.sort(key=geo.rect_area, reverse=True)
    return cells


def _shrunk(rect, gap=ROOM_GAP_PX):
    x1, y1, x2, y2 = rect
    return (x1 + gap, y1 + gap, x2 - gap, y2 - gap)


def _try_balcony(rng, envelope, scale):
    width = rng.uniform(1.5, 2.5) / scale
    depth = min(rng.uniform(0.8, 1.2) / scale, 16.0)
    n = len(envelope)
    edge_order = rng.permutation(n)
    for ei in edge_order:
        a, b = envelope[ei], envelope[(ei + 1) % n]
        edge_len = float(np.hypot(*(b - a)))
        if edge_len < width + 12:
            continue
        t = rng.uniform(0.25, 0.75)
        anchor = a + t * (b - a)
        e_hat = (b - a) / edge_len
        n_hat = geo.edge_outward_normal(envelope, int(ei))
        corners = np.array([
            anchor - (width / 2) * e_hat,
            anchor + (width / 2) * e_hat,
            anchor + (width / 2) * e_hat + depth * n_hat,
            anchor - (width / 2) * e_hat + depth * n_hat,
        ])
        x1, y1 = map(float, corners.min(axis=0))
        x2, y2 = map(float, corners.max(axis=0))
        rect = (x1, y1, x2, y2)
        if x1 < 2 or y1 < 2 or x2 > 254 or y2 > 254:
            continue
        # whole balcony must sit outside the envelope (skip notch collisions)
        if geo.region_area(geo.rect_intersect_polygon(rect, envelope)) > 1e-6:
            continue
        return rect
    return None


def generate_sample(seed: int, config: GeneratorConfig = GeneratorConfig()) -> Sample:
    """Deterministic sample for one seed; raises SynthError when infeasible."""
    rng = stream(seed, "synth")
    bed = int(rng.integers(config.bedrooms[0], config.bedrooms[1] + 1))
    rest = int(rng.integers(config.restrooms[0], config.restrooms[1] + 1))
    balcony = bool(rng.random() < config.balcony_prob)
    family = str(rng.choice(list(config.families)))

    room_mins = [MIN_AREA_M2[BED]] * bed + [MIN_AREA_M2[REST]] * rest + [MIN_AREA_M2[KIT]]
    need = sum(room_mins) + MIN_LIVING_M2
    target = float(np.clip(rng.uniform(*config.area_slack) * need, 50.0, 250.0))
    if need * 1.3 > 250.0:
        raise SynthError("infeasible program: too many rooms for the area range")

    for _ in range(config.max_attempts):
        cells0 = _envelope_cells(rng, family)
        envelope = _cells_to_polygon(cells0)
        env_area_px = geo.polygon_area(envelope)
        scale = float(np.sqrt(target / env_area_px))

        cells = _partition(rng, cells0, bed + rest + 1)
        living_cell, room_cells = cells[0], cells[1:]

        # rooms sorted by diminishing area requirement: beds, kitchen, rests
        order = [BED] * bed + [KIT] + [REST] * rest
        mins = [MIN_AREA_M2[t] for t in order]
        ok = geo.rect_area(living_cell) * scale * scale >= MIN_LIVING_M2 * 1.1
        rooms = []
        for cell, rtype, m2 in zip(room_cells, order, mins):
            r = _shrunk(cell)
            if r[2] - r[0] < 8 or r[3] - r[1] < 8:
                ok = False
                break
            if geo.rect_area(r) * scale * scale < m2 * 1.15:
                ok = False
                break
            rooms.append((r, rtype))
        if not ok or len(rooms) < len(order):
            continue

        # placement order: bedrooms, restrooms, kitchen
        rooms.sort(key=lambda rt: ([BED, REST, KIT].index(rt[1]),
                                   rt[0][1], rt[0][0]))

        if balcony:
            bal_rect = _try_balcony(rng, envelope, scale)
            if bal_rect is None:
                continue
            rooms.append((bal_rect, BAL))

        edge_idx = int(rng.integers(len(envelope)))
        a, b = envelope[edge_idx], envelope[(edge_idx + 1) % len(envelope)]
        t = rng.uniform(0.2, 0.8)
        door = a + t * (b - a)

        program = Program(bedrooms=bed, restrooms=rest, balcony=balcony,
                          target_area_m2=target)
        centers = [(geo.rect_center(r), rt) for r, rt in rooms]
        return Sample(envelope=envelope, door=np.asarray(door, dtype=float),
                      program=program, rooms=rooms, centers=centers,
                      target_area_m2=target)

    raise SynthError(f"could not realize a feasible layout for seed {seed}")


def generate_dataset(n: int, seed: int, config: GeneratorConfig = GeneratorConfig()):
    """n samples from consecutive sub-seeds, skipping infeasible draws."""
    out = []
    k = 0
    while len(out) < n:
        try:
            out.append(generate_sample(seed * 1_000_003 + k, config))
        except SynthError:
            pass
        k += 1
        if k > 20 * n + 100:
            raise SynthError("generator failure rate too high")
    return out


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    flip_h: bool = False
    flip_v: bool = False
    rotate_deg: float = 0.0
    scale: float = 1.0
    translate: tuple = (0.0, 0.0)
    center_jitter: tuple = ()   # per-center (dx, dy), px

    @classmethod
    def identity(cls):
        return cls()


def draw_augment_params(rng, mode: str, n_centers: int) -> AugmentParams:
    if mode not in ("stageA", "stageB"):
        raise ValueError("mode must be 'stageA' or 'stageB'")
    flip_h = bool(rng.random() < 0.5)
    flip_v = bool(rng.random() < 0.5)
    scale = float(rng.uniform(0.9, 1.1))
    translate = tuple(rng.uniform(-10, 10, size=2))
    rotate = float(rng.uniform(-15, 15)) if mode == "stageA" else 0.0
    jitter = ()
    if mode == "stageB":
        jitter = tuple(map(tuple, rng.normal(0.0, 0.03 * geo.CANVAS, size=(n_centers, 2))))
    return AugmentParams(flip_h=flip_h, flip_v=flip_v, rotate_deg=rotate,
                         scale=scale, translate=translate, center_jitter=jitter)


def _transform_points(pts, params: AugmentParams):
    p = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
    c = geo.CANVAS / 2.0
    if params.flip_h:
        p[:, 0] = geo.CANVAS - p[:, 0]
    if params.flip_v:
        p[:, 1] = geo.CANVAS - p[:, 1]
    if params.rotate_deg:
        th = np.deg2rad(params.rotate_deg)
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        p = (p - c) @ rot.T + c
    if params.scale != 1.0:
        p = (p - c) * params.scale + c
    p += np.asarray(params.translate, dtype=float)
    return p


def apply_augment(s: Sample, params: AugmentParams) -> Sample:
    envelope = geo.ensure_clockwise(_transform_points(s.envelope, params))
    door = _transform_points(s.door, params)[0]
    rooms = []
    for rect, rtype in s.rooms:
        corners = _transform_points(geo.rect_polygon(rect), params)
        x1, y1 = corners.min(axis=0)
        x2, y2 = corners.max(axis=0)
        rooms.append(((x1, y1, x2, y2), rtype))
    centers = [(_transform_points(c, params)[0], t) for c, t in s.centers]
    if params.center_jitter:
        jit = np.asarray(params.center_jitter, dtype=float)
        centers = [(np.clip(c + jit[i], 0, geo.CANVAS), t)
                   for i, (c, t) in enumerate(centers)]
    door = np.clip(door, 0, geo.CANVAS)
    return Sample(envelope=envelope, door=door, program=s.program, rooms=rooms,
                  centers=centers, target_area_m2=s.target_area_m2)


def augment(s: Sample, seed: int, mode: str) -> Sample:
    """Randomized training transform; retries draws that push the envelope
    off-canvas, then errors."""
    rng = stream(seed, f"augment/{mode}")
    for _ in range(10):
        params = draw_augment_params(rng, mode, n_centers=len(s.centers))
        out = apply_augment(s, params)
        bbox_ok = (out.envelope.min() >= 0.0) and (out.envelope.max() <= geo.CANVAS)
        if bbox_ok:
            return out
    raise SynthError("augmented envelope left the canvas after 10 attempts")


def opening_targets(s: Sample) -> dict:
    """Stand-in training labels for the auxiliary opening heads.

    Door points: midpoint of each interior room's longest side (every side
    borders living by construction) plus the entrance point.  Window points:
    midpoints of the envelope's exterior edges.
    """
    doors = [np.asarray(s.door, dtype=float)]
    for (x1, y1, x2, y2), _ in s.interior_rooms():
        if x2 - x1 >= y2 - y1:
            doors.append(np.array([(x1 + x2) / 2.0, y1]))
        else:
            doors.append(np.array([x1, (y1 + y2) / 2.0]))
    windows = []
    n = len(s.envelope)
    for i in range(n):
        a, b = s.envelope[i], s.envelope[(i + 1) % n]
        if np.hypot(*(b - a)) >= 20.0:
            windows.append((a + b) / 2.0)
    return {"door": doors, "window": windows}


# ---------------------------------------------------------------------------
# dataset io (JSON lines)
# ---------------------------------------------------------------------------

def sample_to_dict(s: Sample) -> dict:
    return {
        "v": DATASET_VERSION,
        "envelope": [[float(x), float(y)] for x, y in s.envelope],
        "door": [float(s.door[0]), float(s.door[1])],
        "program": {
            "bedrooms": s.program.bedrooms,
            "restrooms": s.program.restrooms,
            "balcony": s.program.balcony,
            "target_area_m2": s.program.target_area_m2,
        },
        "rooms": [[float(r[0]), float(r[1]), float(r[2]), float(r[3]), t]
                  for r, t in s.rooms],
        "centers": [[float(c[0]), float(c[1]), t] for c, t in s.centers],
        "target_area_m2": float(s.target_area_m2),
    }


def sample_from_dict(d: dict) -> Sample:
    if d.get("v") != DATASET_VERSION:
        raise SynthError(f"unsupported dataset record version {d.get('v')!r}")
    program = Program(bedrooms=d["program"]["bedrooms"],
                      restrooms=d["program"]["restrooms"],
                      balcony=d["program"]["balcony"],
                      target_area_m2=d["program"]["target_area_m2"])
    return Sample(
        envelope=np.asarray(d["envelope"], dtype=float),
        door=np.asarray(d["door"], dtype=float),
        program=program,
        rooms=[(tuple(map(float, row[:4])), row[4]) for row in d["rooms"]],
        centers=[(np.array(row[:2], dtype=float), row[2]) for row in d["centers"]],
        target_area_m2=float(d["target_area_m2"]),
    )


def save_dataset(path, samples):
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_dict(s), sort_keys=True) + "\n")


def load_dataset(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(sample_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, IndexError, SynthError) as exc:
                raise SynthError(f"bad dataset record at line {lineno}: {exc}") from exc
    return out
