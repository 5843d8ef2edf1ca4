"""On-disk corpus: binary PGM frames/masks, per-scene JSON sidecars, and an index."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .episodes import Episode, RenderedScene, SceneConfig, episode_from_scenes, random_scene
from .folds import FoldPlan
from .shapes import SceneSpec

INDEX_FILE = "index.json"


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a 2-D uint8 image as binary PGM (P5, maxval 255)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {image.shape}")
    if image.dtype == bool:
        image = image.astype(np.uint8) * 255
    if image.dtype != np.uint8:
        raise ValueError(f"PGM pixels must be uint8, got {image.dtype}")
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(buf[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).copy()


def save_scene(root: str | Path, scene: RenderedScene) -> Path:
    """Frames are stored as R, G and B planes stacked vertically in one PGM."""
    d = Path(root) / scene.scene_id
    d.mkdir(parents=True, exist_ok=True)
    n_obj, n_t, h, w = scene.masks.shape
    for t in range(n_t):
        write_pgm(d / f"frame_{t:03d}.pgm", scene.frames[t].reshape(3 * h, w))
        for k in range(n_obj):
            write_pgm(d / f"mask_{t:03d}_{k:02d}.pgm", scene.masks[k, t])
    sidecar = {
        "class": scene.class_name,
        "mode": scene.mode,
        "objects": scene.spec.to_json()["objects"],
        "expressions": [scene.expression],
        "frame_count": n_t,
        "scene": scene.spec.to_json(),
    }
    (d / "scene.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return d


def load_scene(path: str | Path) -> RenderedScene:
    d = Path(path)
    meta = json.loads((d / "scene.json").read_text())
    spec = SceneSpec.from_json(meta["scene"])
    n_t, h, w = meta["frame_count"], spec.height, spec.width
    frames = np.stack([read_pgm(d / f"frame_{t:03d}.pgm").reshape(3, h, w) for t in range(n_t)])
    masks = np.stack([
        np.stack([read_pgm(d / f"mask_{t:03d}_{k:02d}.pgm") > 127 for t in range(n_t)])
        for k in range(len(spec.objects))
    ])
    return RenderedScene(d.name, meta["class"], meta["mode"], spec, meta["expressions"][0], frames, masks)


def load_frames(path: str | Path) -> tuple[np.ndarray, dict]:
    """Frames [T, 3, H, W] of a scene directory plus its sidecar; masks are not needed."""
    d = Path(path)
    meta = json.loads((d / "scene.json").read_text())
    h, w = meta["scene"]["height"], meta["scene"]["width"]
    frames = np.stack([read_pgm(d / f"frame_{t:03d}.pgm").reshape(3, h, w) for t in range(meta["frame_count"])])
    return frames, meta


def generate_corpus(root: str | Path, classes, scenes_per_class: int, seed: int, mode: str = "single",
                    cfg: SceneConfig = SceneConfig(), frame_count: int = 8) -> dict:
    """Write ``scenes_per_class`` scenes for every class plus an index; returns the index."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    index = {"seed": seed, "mode": mode, "frame_count": frame_count,
             "height": cfg.height, "width": cfg.width, "classes": {}}
    for ci, name in enumerate(classes):
        ids = []
        for j in range(scenes_per_class):
            rng = np.random.default_rng([seed, ci, j])
            scene = random_scene(name, mode, rng, cfg, frame_count=frame_count, scene_id=f"{name}_{j:04d}")
            save_scene(root, scene)
            ids.append(scene.scene_id)
        index["classes"][name] = ids
    (root / INDEX_FILE).write_text(json.dumps(index, indent=2, sort_keys=True))
    return index


class Corpus:
    """Episode source backed by a generated corpus directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.index = json.loads((self.root / INDEX_FILE).read_text())
        self._cache: dict[str, RenderedScene] = {}

    def scene(self, scene_id: str) -> RenderedScene:
        if scene_id not in self._cache:
            self._cache[scene_id] = load_scene(self.root / scene_id)
        return self._cache[scene_id]

    def sample_episode(self, plan: FoldPlan, fold: int, split: str, seed: int,
                       shots: int = 5, query_frames: int = 8) -> Episode:
        classes = [c for c in plan.classes(fold, split) if c in self.index["classes"]]
        if not classes:
            raise ValueError(f"corpus has no {split} classes for fold {fold}")
        name = classes[seed % len(classes)]
        ids = self.index["classes"][name]
        if len(ids) < 2:
            raise ValueError(f"class {name} needs at least two scenes for an episode")
        rng = np.random.default_rng([seed, fold])
        s, q = rng.choice(len(ids), size=2, replace=False)
        support, query = self.scene(ids[s]), self.scene(ids[q])
        start = int(rng.integers(0, support.frames.shape[0] - shots + 1))
        return episode_from_scenes(support, query, shots=shots, query_frames=query_frames, support_start=start)
