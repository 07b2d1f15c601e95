"""Synthetic desk-scale depth scenes with exact hand labels.

A scene is rendered back to front with nearest-depth-wins: a (possibly
tilted) background plane, an arm strip leaving the hand towards the image
border, the hand ellipse, and an optional box or disc object whose depth
is given relative to the hand. The label mask is the visible part of the
hand. Gaussian sensor noise (clipped at four standard deviations) is added
last and depths are clamped to ``[200, 60000]`` mm.

Sizes in :class:`Jitter` are in pixels for a 512-pixel-wide raster at a
hand depth of 700 mm; they scale with the raster width and inversely with
depth.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import DepthMap, LabelMask, SamplePair, save_sample_pair, write_manifest

__all__ = [
    "Ellipse", "Arm", "SceneObject", "Background", "SceneSpec", "Jitter",
    "generate_scene", "render_layers", "random_spec", "generate_corpus", "corpus_in_memory",
    "corpus_scene", "corpus_spec", "scene_seed", "split_sizes", "MIN_DEPTH", "MAX_DEPTH",
]

MIN_DEPTH = 200
MAX_DEPTH = 60000
NOISE_CLIP = 4.0
LAYER_BACKGROUND, LAYER_ARM, LAYER_HAND, LAYER_OBJECT = 0, 1, 2, 3


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    ra: float  # semi-axis along ``angle``
    rb: float
    depth: float
    angle: float = 0.0


@dataclass(frozen=True)
class Arm:
    """Strip starting at the hand center and running along ``angle``."""

    width: float
    length: float
    depth: float
    angle: float = math.pi / 2
    slope: float = 0.0  # mm of extra depth per pixel along the arm


@dataclass(frozen=True)
class SceneObject:
    shape: str  # "disc" or "box"
    cx: float
    cy: float
    size: float  # radius or half side
    depth_offset: float  # relative to hand depth; negative is in front
    angle: float = 0.0


@dataclass(frozen=True)
class Background:
    depth: float = 1500.0
    noise_std: float = 5.0
    slope_y: float = 0.0  # mm per row, relative to the middle row


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    hand: Ellipse
    arm: Arm | None = None
    object: SceneObject | None = None
    background: Background = Background()
    rng_seed: int = 0


def _local(xx, yy, cx, cy, angle):
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = xx - cx, yy - cy
    return dx * c + dy * s, -dx * s + dy * c


def generate_scene(spec: SceneSpec) -> SamplePair:
    """Render *spec* into a depth map and hand label mask."""
    z, layer = render_layers(spec)
    return SamplePair(DepthMap(z), LabelMask(layer == LAYER_HAND))


def render_layers(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Noisy ``uint16`` depth and the id of the visible layer per pixel."""
    h = spec.hand
    if h.ra <= 0 or h.rb <= 0:
        raise ValueError("hand ellipse has zero area")
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    bg = spec.background
    z = bg.depth + bg.slope_y * (yy - spec.height / 2.0)
    layer = np.zeros(z.shape, dtype=np.uint8)

    def paint(inside, depth, tag):
        depth = np.broadcast_to(depth, z.shape)
        win = inside & (depth < z)
        z[win] = depth[win]
        layer[win] = tag

    if spec.arm is not None:
        a = spec.arm
        t, s = _local(xx, yy, h.cx, h.cy, a.angle)
        inside = (t >= 0) & (t <= a.length) & (np.abs(s) <= a.width / 2.0)
        paint(inside, a.depth + a.slope * np.clip(t, 0, None), LAYER_ARM)

    t, s = _local(xx, yy, h.cx, h.cy, h.angle)
    hand = (t / h.ra) ** 2 + (s / h.rb) ** 2 <= 1.0
    if not hand.any():
        raise ValueError("hand ellipse covers no pixel of the raster")
    paint(hand, np.float64(h.depth), LAYER_HAND)

    if spec.object is not None:
        o = spec.object
        t, s = _local(xx, yy, o.cx, o.cy, o.angle)
        if o.shape == "disc":
            inside = t ** 2 + s ** 2 <= o.size ** 2
        elif o.shape == "box":
            inside = (np.abs(t) <= o.size) & (np.abs(s) <= o.size)
        else:
            raise ValueError(f"unknown object shape {o.shape!r}")
        paint(inside, np.float64(h.depth + o.depth_offset), LAYER_OBJECT)

    if bg.noise_std > 0:
        rng = np.random.default_rng(spec.rng_seed)
        noise = rng.normal(0.0, bg.noise_std, size=z.shape)
        z = z + np.clip(noise, -NOISE_CLIP * bg.noise_std, NOISE_CLIP * bg.noise_std)
    z = np.clip(np.rint(z), MIN_DEPTH, MAX_DEPTH).astype(np.uint16)
    return z, layer


# ---------------------------------------------------------------------
# Random scenes and corpora
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class Jitter:
    """Ranges ``(lo, hi)`` that :func:`random_spec` draws uniformly from."""

    background_depth: tuple[float, float] = (1300.0, 2200.0)
    background_slope: tuple[float, float] = (-1.0, 1.0)
    hand_depth: tuple[float, float] = (500.0, 900.0)
    hand_ra: tuple[float, float] = (42.0, 58.0)
    hand_rb: tuple[float, float] = (28.0, 38.0)
    arm_angle: tuple[float, float] = (math.radians(40), math.radians(140))
    arm_width_ratio: tuple[float, float] = (0.55, 0.8)
    arm_gap: tuple[float, float] = (15.0, 80.0)
    arm_slope: tuple[float, float] = (0.2, 1.0)
    object_prob: float = 0.85
    object_size: tuple[float, float] = (12.0, 25.0)
    object_distance: tuple[float, float] = (0.7, 1.5)
    object_gap: tuple[float, float] = (30.0, 250.0)
    noise_std: float = 5.0


def random_spec(rng: np.random.Generator, width: int = 512, height: int = 424,
                jitter: Jitter = Jitter(), scene_seed: int | None = None) -> SceneSpec:
    j = jitter
    u = lambda r: float(rng.uniform(*r))  # noqa: E731
    scale = width / 512.0
    hand_depth = u(j.hand_depth)
    size = scale * 700.0 / hand_depth
    arm_angle = u(j.arm_angle)
    ra, rb = u(j.hand_ra) * size, u(j.hand_rb) * size
    # hand sits above its arm, fingers pointing away from it
    cx = u((0.25 * width, 0.75 * width))
    cy = u((0.2 * height, 0.55 * height))
    hand = Ellipse(cx, cy, ra, rb, hand_depth, arm_angle)
    arm = Arm(
        width=2 * rb * u(j.arm_width_ratio),
        length=2.0 * math.hypot(width, height),
        depth=hand_depth + u(j.arm_gap),
        angle=arm_angle,
        slope=u(j.arm_slope),
    )
    obj = None
    if rng.random() < j.object_prob:
        osize = u(j.object_size) * size
        phi = u((0.0, 2 * math.pi))
        dist = u(j.object_distance) * (0.5 * (ra + rb) + osize)
        gap = u(j.object_gap) * (1.0 if rng.random() < 0.5 else -1.0)
        obj = SceneObject(
            shape="disc" if rng.random() < 0.5 else "box",
            cx=cx + dist * math.cos(phi),
            cy=cy + dist * math.sin(phi),
            size=osize,
            depth_offset=gap,
            angle=u((0.0, math.pi)),
        )
    background = Background(u(j.background_depth), j.noise_std, u(j.background_slope))
    seed = int(rng.integers(0, 2**63)) if scene_seed is None else scene_seed
    return SceneSpec(width, height, hand, arm, obj, background, seed)


def split_sizes(n: int) -> tuple[int, int, int]:
    """70/10/20 split; train and val are floored, test takes the rest."""
    if n < 3:
        raise ValueError("a corpus needs at least 3 scenes")
    n_train = (7 * n) // 10
    n_val = n // 10
    return n_train, n_val, n - n_train - n_val


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(2, dtype=np.uint64)[0] >> 1)


def corpus_scene(seed: int, index: int, width: int = 512, height: int = 424,
                 jitter: Jitter = Jitter()) -> SamplePair:
    return generate_scene(corpus_spec(seed, index, width, height, jitter))


def corpus_spec(seed: int, index: int, width: int = 512, height: int = 424,
                jitter: Jitter = Jitter()) -> SceneSpec:
    s = scene_seed(seed, index)
    # layout and noise draw from separate streams of the same scene seed
    return random_spec(np.random.default_rng([s, 1]), width, height, jitter, scene_seed=s)


def generate_corpus(n: int, out_dir: str | os.PathLike, seed: int = 0, width: int = 512,
                    height: int = 424, jitter: Jitter = Jitter()) -> dict[str, Path]:
    """Write ``n`` scenes as PNG pairs plus ``train.txt``/``val.txt``/``test.txt``.

    Scene ``i`` is drawn from its own seed derived from ``(seed, i)``;
    indices are assigned to splits in order, so splits never share a scene
    or a seed. Returns the manifest path of each split.
    """
    out = Path(out_dir)
    sizes = split_sizes(n)
    manifests, index = {}, 0
    for name, count in zip(("train", "val", "test"), sizes):
        (out / name).mkdir(parents=True, exist_ok=True)
        entries = []
        for _ in range(count):
            pair = corpus_scene(seed, index, width, height, jitter)
            d, l = f"{name}/depth_{index:05d}.png", f"{name}/label_{index:05d}.png"
            try:
                save_sample_pair(pair, out / d, out / l)
            except OSError as exc:
                raise OSError(f"cannot write scene {index} to {out / d}: {exc}") from exc
            entries.append((d, l))
            index += 1
        manifests[name] = out / f"{name}.txt"
        write_manifest(manifests[name], entries)
    return manifests


def corpus_in_memory(n: int, seed: int = 0, width: int = 512, height: int = 424,
                     jitter: Jitter = Jitter()) -> dict[str, list[SamplePair]]:
    """Same scenes and split as :func:`generate_corpus`, without touching disk."""
    sizes = split_sizes(n)
    out, index = {}, 0
    for name, count in zip(("train", "val", "test"), sizes):
        out[name] = [corpus_scene(seed, index + k, width, height, jitter) for k in range(count)]
        index += count
    return out
