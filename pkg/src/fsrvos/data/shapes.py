"""Moving-shapes scenes: object specs and deterministic rasterization."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

CLASSES = ("circle", "square", "triangle", "diamond", "ring", "cross", "star", "bar")

COLORS = {
    "red": (220, 40, 40),
    "green": (40, 190, 60),
    "blue": (50, 80, 235),
    "yellow": (235, 220, 40),
    "cyan": (40, 215, 225),
    "magenta": (210, 50, 205),
    "orange": (245, 140, 25),
    "white": (240, 240, 240),
}

MIN_SIZE = 3
BACKGROUND_MAX = 60


class SceneError(ValueError):
    """Invalid or degenerate scene specification."""


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    size: float  # bounding extent in pixels (side or diameter)
    velocity: tuple[float, float]  # (dx, dy) pixels per frame
    start: tuple[float, float]  # centre (x, y) at frame 0

    def center(self, t: int) -> tuple[float, float]:
        return self.start[0] + t * self.velocity[0], self.start[1] + t * self.velocity[1]

    def direction(self) -> str | None:
        vx, vy = self.velocity
        if max(abs(vx), abs(vy)) < 0.5:
            return None
        if abs(vx) >= abs(vy):
            return "right" if vx > 0 else "left"
        return "down" if vy > 0 else "up"


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    objects: tuple[ObjectSpec, ...]
    frame_count: int
    background_seed: int
    occlusion: bool = True
    targets: tuple[int, ...] = field(default=(0,))

    def validate(self) -> None:
        if self.height % 32 or self.width % 32:
            raise SceneError(f"canvas {self.height}x{self.width} not divisible by 32")
        if not self.objects:
            raise SceneError("scene needs at least one object")
        for obj in self.objects:
            if obj.shape not in CLASSES:
                raise SceneError(f"unknown shape class {obj.shape!r}")
            if obj.color not in COLORS:
                raise SceneError(f"unknown colour {obj.color!r}")
            if obj.size < MIN_SIZE:
                raise SceneError(f"degenerate {obj.shape}: size {obj.size} < {MIN_SIZE} px")
            for t in range(self.frame_count):
                x, y = obj.center(t)
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise SceneError(f"{obj.shape} centre leaves the canvas at frame {t}")

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "frame_count": self.frame_count,
            "background_seed": self.background_seed,
            "occlusion": self.occlusion,
            "targets": list(self.targets),
            "objects": [
                {**asdict(o), "velocity": list(o.velocity), "start": list(o.start)}
                for o in self.objects
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        objects = tuple(
            ObjectSpec(o["shape"], o["color"], float(o["size"]), tuple(o["velocity"]), tuple(o["start"]))
            for o in d["objects"]
        )
        return cls(int(d["height"]), int(d["width"]), objects, int(d["frame_count"]),
                   int(d["background_seed"]), bool(d.get("occlusion", True)), tuple(d["targets"]))


def _star_polygon(half: float) -> np.ndarray:
    angles = -np.pi / 2 + np.arange(10) * np.pi / 5
    radii = np.where(np.arange(10) % 2 == 0, half, 0.45 * half)
    return np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)


def _inside_polygon(dx: np.ndarray, dy: np.ndarray, poly: np.ndarray) -> np.ndarray:
    inside = np.zeros(dx.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > dy) != (y1 > dy)
        x_at = x0 + (dy - y0) * (x1 - x0) / (y1 - y0 + 1e-300)
        inside ^= crosses & (dx < x_at)
    return inside


def shape_mask(shape: str, dx: np.ndarray, dy: np.ndarray, size: float) -> np.ndarray:
    """Occupancy of pixel centres at offsets (dx, dy) from the object centre."""
    half = size / 2.0
    adx, ady = np.abs(dx), np.abs(dy)
    if shape == "circle":
        return dx * dx + dy * dy < half * half
    if shape == "square":
        return (adx < half) & (ady < half)
    if shape == "ring":
        r2 = dx * dx + dy * dy
        return (r2 < half * half) & (r2 >= (0.55 * half) ** 2)
    if shape == "triangle":
        return (ady < half) & (adx < (dy + half) / 2.0)
    if shape == "diamond":
        return adx + ady < half
    if shape == "cross":
        arm = half / 3.0
        return ((adx < arm) & (ady < half)) | ((ady < arm) & (adx < half))
    if shape == "star":
        return _inside_polygon(dx, dy, _star_polygon(half))
    if shape == "bar":
        return (adx < half) & (ady < 0.35 * half)
    raise SceneError(f"unknown shape class {shape!r}")


def render_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize all frames.

    Returns ``frames`` uint8 [T, 3, H, W] and ``masks`` bool [n_objects, T, H, W].
    Objects are painted in list order, so later objects occlude earlier ones; each
    object's mask holds only its visible pixels.
    """
    spec.validate()
    h, w, n_t = spec.height, spec.width, spec.frame_count
    rng = np.random.default_rng(spec.background_seed)
    background = rng.integers(0, BACKGROUND_MAX + 1, size=(3, h, w), dtype=np.uint8)
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    frames = np.broadcast_to(background, (n_t, 3, h, w)).copy()
    masks = np.zeros((len(spec.objects), n_t, h, w), dtype=bool)
    for t in range(n_t):
        for k, obj in enumerate(spec.objects):
            cx, cy = obj.center(t)
            occ = shape_mask(obj.shape, xs - cx, ys - cy, obj.size)
            if spec.occlusion:
                masks[:k, t] &= ~occ
            masks[k, t] = occ
            color = np.array(COLORS[obj.color], dtype=np.uint8)[:, None]
            frames[t][:, occ] = color
    return frames, masks
