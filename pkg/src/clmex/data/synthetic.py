"""Procedural multi-view "faces" as a stand-in for real multi-camera FER data.

Each subject gets a random head (shape, skin/hair/background colours, a
nose and a mole). Each capture session of a subject shows one expression,
drawn by cycling a per-subject permutation of the vocabulary, so a subject
with at least E sessions shows every expression. Expressions move the
mouth, eyes and brows. The head is treated as a vertical cylinder: a view
angle rotates the surface so features slide sideways, foreshorten and
finally disappear behind the silhouette, where hair is drawn instead. With
``view_degradation`` on, feature contrast fades and pixel noise grows with
|angle| as well.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import MultiViewDataset
from .manifest import DatasetManifest, ManifestRecord

MIN_IMAGE_SIZE = 16
SUPERSAMPLE = 2
# head rotation per degree of camera angle; < 1 keeps part of the far side visible at 90 degrees
ROTATION_GAIN = 0.7

# name: (mouth_curve, mouth_open, eye_open, brow_tilt, brow_raise)
EXPRESSION_TEMPLATES = {
    "neutral": (0.0, 0.0, 1.0, 0.0, 0.0),
    "happy": (1.0, 0.35, 0.75, 0.0, 0.04),
    "sad": (-0.9, 0.0, 0.75, -0.7, 0.0),
    "surprised": (0.0, 1.0, 1.5, 0.0, 0.16),
    "angry": (-0.35, 0.1, 0.65, 0.8, -0.08),
    "afraid": (-0.25, 0.7, 1.4, -0.5, 0.12),
    "disgust": (-0.55, 0.25, 0.55, 0.55, -0.05),
    "pleased": (0.6, 0.0, 0.9, 0.0, 0.02),
}


class SyntheticConfigError(ValueError):
    pass


@dataclass
class SyntheticConfig:
    subjects: int = 12
    sessions: int = 4
    expressions: int = 4
    views: Sequence[int] = (-90, -45, 0, 45, 90)
    size: int = 32
    seed: int = 7
    view_degradation: bool = True

    def validate(self) -> "SyntheticConfig":
        if self.subjects < 1 or self.sessions < 1 or self.expressions < 1:
            raise SyntheticConfigError("subjects, sessions and expressions must all be >= 1")
        if len(self.views) < 1:
            raise SyntheticConfigError("need at least one view angle")
        if len(set(self.views)) != len(self.views):
            raise SyntheticConfigError(f"duplicate view angles in {list(self.views)}")
        if any(abs(v) > 90 for v in self.views):
            raise SyntheticConfigError("view angles must lie in [-90, 90]")
        if self.size < MIN_IMAGE_SIZE:
            raise SyntheticConfigError(f"image size {self.size} too small to render faces (< {MIN_IMAGE_SIZE}px)")
        return self


@dataclass
class _Subject:
    half_width: float
    half_height: float
    skin: np.ndarray
    hair: np.ndarray
    background: np.ndarray
    eye_spacing: float
    nose_length: float
    mole: tuple[float, float]
    expression_cycle: np.ndarray = field(repr=False)


def expression_names(n: int, rng: np.random.Generator | None = None) -> tuple[list[str], dict[str, tuple]]:
    names = list(EXPRESSION_TEMPLATES)[:n]
    templates = {k: EXPRESSION_TEMPLATES[k] for k in names}
    extra_rng = np.random.default_rng(12345) if rng is None else rng
    for i in range(len(names), n):
        name = f"expr{i}"
        names.append(name)
        templates[name] = (
            float(extra_rng.uniform(-1, 1)),
            float(extra_rng.uniform(0, 1)),
            float(extra_rng.uniform(0.5, 1.5)),
            float(extra_rng.uniform(-0.8, 0.8)),
            float(extra_rng.uniform(-0.1, 0.15)),
        )
    return names, templates


def _draw_subject(rng: np.random.Generator, n_expr: int) -> _Subject:
    skin = rng.uniform([0.55, 0.4, 0.3], [0.95, 0.8, 0.7])
    return _Subject(
        half_width=rng.uniform(0.55, 0.72),
        half_height=rng.uniform(0.72, 0.88),
        skin=skin,
        hair=rng.uniform(0.05, 0.5, size=3),
        background=rng.uniform(0.35, 0.65) + rng.uniform(-0.08, 0.08, size=3),
        eye_spacing=rng.uniform(0.36, 0.48),
        nose_length=rng.uniform(0.2, 0.4),
        mole=(float(rng.uniform(-0.6, 0.6)), float(rng.uniform(-0.3, 0.1))),
        expression_cycle=rng.permutation(n_expr),
    )


def render_face(
    subject: _Subject,
    template: tuple,
    intensity: float,
    angle_deg: float,
    size: int,
    rng: np.random.Generator,
    view_degradation: bool = True,
) -> np.ndarray:
    """Render one (size, size, 3) image in [0, 1]."""
    curve, mouth_open, eye_open, brow_tilt, brow_raise = template
    curve, mouth_open, brow_tilt, brow_raise = (intensity * t for t in (curve, mouth_open, brow_tilt, brow_raise))
    eye_open = 1.0 + intensity * (eye_open - 1.0)
    res = size * SUPERSAMPLE
    dx, dy = rng.uniform(-0.05, 0.05, size=2)
    coords = (np.arange(res) + 0.5) / res * 2.0 - 1.0
    x = coords[None, :] - dx
    y = -coords[:, None] - dy
    a, b = subject.half_width, subject.half_height
    theta = np.deg2rad(angle_deg) * ROTATION_GAIN

    inside = (x / a) ** 2 + (y / b) ** 2 <= 1.0
    half_w = a * np.sqrt(np.clip(1.0 - (y / b) ** 2, 1e-9, None))
    psi = np.arcsin(np.clip(x / half_w, -1.0, 1.0))
    phi = psi - theta
    front = inside & (np.abs(phi) <= np.pi / 2)
    u = np.sin(phi)
    v = np.broadcast_to(y / b, u.shape)

    img = np.empty((res, res, 3))
    img[:] = subject.background
    shade = (0.65 + 0.35 * np.cos(psi))[..., None]
    img[inside] = (subject.hair * shade)[inside]
    img[front] = (subject.skin * shade)[front]

    fade = 1.0 - 0.35 * abs(angle_deg) / 90.0 if view_degradation else 1.0

    def paint(mask, colour):
        m = mask & front
        base = img[m]
        img[m] = base + fade * (colour * shade[m] - base)

    dark = np.array([0.08, 0.06, 0.06])
    s = subject.eye_spacing
    for side in (-1.0, 1.0):
        cu = side * s
        eye = ((u - cu) / 0.2) ** 2 + ((v - 0.22) / (0.11 * eye_open)) ** 2 <= 1.0
        paint(eye, dark)
        # positive tilt lowers the inner ends of the brows
        brow_v = 0.45 + brow_raise - brow_tilt * 0.6 * (s - np.abs(u))
        brow = (np.abs(u - cu) <= 0.22) & (np.abs(v - brow_v) <= 0.06)
        paint(brow, subject.hair * 0.6)
    nose = (np.abs(u) <= 0.05) & (v <= 0.1) & (v >= 0.1 - subject.nose_length)
    paint(nose, subject.skin * 0.7)
    mu, mv = subject.mole
    paint((u - mu) ** 2 + (v - mv) ** 2 <= 0.06**2, dark)
    mouth_centre = -0.48 - curve * 0.9 * (0.25 - u**2)
    thickness = 0.06 + 0.18 * max(mouth_open, 0.0)
    mouth = (np.abs(u) <= 0.5) & (np.abs(v - mouth_centre) <= thickness)
    paint(mouth, np.array([0.45, 0.05, 0.1]))

    img = img.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE, 3).mean(axis=(1, 3))
    noise = 0.02 + (0.06 * abs(angle_deg) / 90.0 if view_degradation else 0.0)
    img = img * rng.uniform(0.9, 1.1) + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic_dataset(config: SyntheticConfig) -> tuple[DatasetManifest, MultiViewDataset]:
    """Deterministic per seed. Records are ordered subject, session, view."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    names, templates = expression_names(config.expressions)
    views = [int(v) for v in config.views]
    subjects = [_draw_subject(rng, config.expressions) for _ in range(config.subjects)]

    images, records, expr_idx = [], [], []
    for si, subj in enumerate(subjects):
        for p in range(config.sessions):
            e = int(subj.expression_cycle[p % config.expressions])
            intensity = float(rng.uniform(0.75, 1.0))
            for angle in views:
                img = render_face(subj, templates[names[e]], intensity, angle, config.size, rng, config.view_degradation)
                records.append(ManifestRecord(f"images.npy:{len(images)}", f"s{si:03d}", names[e], angle, f"p{p}"))
                images.append(img.astype(np.float32))
                expr_idx.append(e)

    manifest = DatasetManifest(records, names, views).validate()
    dataset = MultiViewDataset(
        images=np.stack(images),
        subject_ids=np.array([r.subject_id for r in records]),
        session_ids=np.array([r.session_id for r in records]),
        view_angles=np.array([r.view_angle_deg for r in records], dtype=np.int64),
        expressions=np.array(expr_idx, dtype=np.int64),
        expression_vocabulary=names,
        view_set=views,
    )
    return manifest, dataset


def write_synthetic_dataset(config: SyntheticConfig, out_dir) -> Path:
    """Write ``images.npy`` and ``manifest.csv`` (plus the generator config) into out_dir."""
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, dataset = generate_synthetic_dataset(config)
    np.save(out / "images.npy", dataset.images)
    manifest.root = out
    path = manifest.write(out / "manifest.csv")
    cfg = asdict(config)
    cfg["views"] = list(cfg["views"])
    (out / "generator.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return path
