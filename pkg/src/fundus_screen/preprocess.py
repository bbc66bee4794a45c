"""Image preprocessing: bilinear resize, [0, 1] rescaling, flip augmentation
and label encoding.

Images are ``(H, W, 3)`` arrays wrapped with a scale tag so a second
rescale is caught instead of quietly dividing by 255 again.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage

HEAD_KINDS = ("sigmoid_scalar", "softmax_pair")


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray
    scaled: bool = False  # False: integer [0, 255]; True: real [0, 1]

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise PreprocessError(f"expected an (H, W, 3) image, got shape {px.shape}")
        if self.scaled:
            if not np.issubdtype(px.dtype, np.floating):
                raise PreprocessError("scaled images must hold real values")
        elif px.dtype != np.uint8:
            raise PreprocessError(f"unscaled images must be uint8, got {px.dtype}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape


def load_image(path) -> Image:
    with PILImage.open(path) as im:
        return Image(np.asarray(im.convert("RGB"), dtype=np.uint8).copy())


def resize(img: Image, target: int) -> Image:
    """Bilinear resize to ``target x target`` (half-pixel centres, no
    antialiasing). Integer images are rounded back to uint8."""
    if target < 1:
        raise PreprocessError(f"target size must be >= 1, got {target}")
    h, w, _ = img.shape
    if h == 0 or w == 0:
        raise PreprocessError("cannot resize a zero-sized image")
    if (h, w) == (target, target):
        return Image(img.pixels.copy(), img.scaled)
    x = torch.from_numpy(np.ascontiguousarray(img.pixels, dtype=np.float64)).permute(2, 0, 1)[None]
    y = F.interpolate(x, size=(target, target), mode="bilinear", align_corners=False)
    out = y[0].permute(1, 2, 0).numpy()
    if img.scaled:
        return Image(np.clip(out, 0.0, 1.0).astype(img.pixels.dtype), True)
    return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8), False)


def rescale(img: Image) -> Image:
    if img.scaled:
        raise PreprocessError("image is already rescaled to [0, 1]")
    return Image(img.pixels.astype(np.float32) / np.float32(255.0), True)


def flip_horizontal(img: Image) -> Image:
    return Image(img.pixels[:, ::-1].copy(), img.scaled)


def flip_vertical(img: Image) -> Image:
    return Image(img.pixels[::-1].copy(), img.scaled)


@dataclass(frozen=True)
class AugmentConfig:
    """Flip flags are the executed augmentation; rotation/zoom/brightness
    exist for experimentation and are off unless asked for."""

    horizontal_flip: bool = False
    vertical_flip: bool = False
    flip_probability: float = 0.5
    rotation: bool = False
    rotation_degrees: float = 20.0
    zoom: bool = False
    zoom_range: float = 0.1
    brightness: bool = False
    brightness_range: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_probability <= 1.0:
            raise PreprocessError(f"flip_probability must be in [0, 1], got {self.flip_probability}")
        if self.rotation_degrees < 0 or not 0 <= self.zoom_range < 1 or not 0 <= self.brightness_range < 1:
            raise PreprocessError("augmentation ranges out of bounds")

    @property
    def is_identity(self) -> bool:
        return not (
            self.horizontal_flip or self.vertical_flip or self.rotation or self.zoom or self.brightness
        )


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, epoch, sample) so results don't depend
    on the order samples are processed in."""
    return np.random.default_rng([seed, epoch, index])


def _affine(img: Image, angle_deg: float, scale: float) -> Image:
    px = img.pixels.astype(np.float32)
    x = torch.from_numpy(px).permute(2, 0, 1)[None]
    a = math.radians(angle_deg)
    theta = torch.tensor(
        [[math.cos(a) / scale, -math.sin(a) / scale, 0.0], [math.sin(a) / scale, math.cos(a) / scale, 0.0]],
        dtype=torch.float32,
    )[None]
    grid = F.affine_grid(theta, list(x.shape), align_corners=False)
    y = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    out = y[0].permute(1, 2, 0).numpy()
    if img.scaled:
        return Image(np.clip(out, 0.0, 1.0), True)
    return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8), False)


def augment(img: Image, cfg: AugmentConfig, rng: np.random.Generator) -> Image:
    """Apply each enabled transform; no random numbers are drawn for
    disabled ones, so the all-off config is an exact identity."""
    out = img
    if cfg.horizontal_flip and rng.random() < cfg.flip_probability:
        out = flip_horizontal(out)
    if cfg.vertical_flip and rng.random() < cfg.flip_probability:
        out = flip_vertical(out)
    if cfg.rotation or cfg.zoom:
        angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees) if cfg.rotation else 0.0
        scale = rng.uniform(1 - cfg.zoom_range, 1 + cfg.zoom_range) if cfg.zoom else 1.0
        out = _affine(out, angle, scale)
    if cfg.brightness:
        factor = rng.uniform(1 - cfg.brightness_range, 1 + cfg.brightness_range)
        if out.scaled:
            out = Image(np.clip(out.pixels * factor, 0.0, 1.0).astype(out.pixels.dtype), True)
        else:
            out = Image(np.clip(np.rint(out.pixels * factor), 0, 255).astype(np.uint8), False)
    return out


def encode_label(label: int, head_kind: str) -> np.ndarray | float:
    if label not in (0, 1):
        raise PreprocessError(f"label must be 0 or 1, got {label!r}")
    if head_kind == "sigmoid_scalar":
        return float(label)
    if head_kind == "softmax_pair":
        return np.eye(2, dtype=np.float32)[label]
    raise PreprocessError(f"unknown head kind {head_kind!r}")


def to_tensor(images: list[Image]) -> torch.Tensor:
    """Stack rescaled images into an ``(N, 3, H, W)`` float32 batch."""
    if not all(im.scaled for im in images):
        raise PreprocessError("batch images must be rescaled before stacking")
    arr = np.stack([im.pixels for im in images]).astype(np.float32, copy=False)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
