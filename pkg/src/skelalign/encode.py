"""Encode skeleton sequences as 3-channel images.

Rows are joints (body slots stacked along the row axis), columns are frames,
and the three channels carry the X, Y, and Z coordinates.  Each channel is
min-max normalized per sequence over the joints that are actually present,
so a rigid translation of the whole sequence leaves the image unchanged.
The raster is then resized to the network input size with corner-aligned
bilinear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SkeletonSequence


class EncodeError(ValueError):
    """The sequence cannot be encoded (for example, it has no frames)."""


@dataclass
class EncoderConfig:
    out_height: int = 32
    out_width: int = 32
    body_slots: int = 2
    normalization: str = "per-sequence-minmax"

    def __post_init__(self):
        if self.out_height < 4 or self.out_width < 4:
            raise ValueError(
                f"output size must be at least 4x4, got {self.out_height}x{self.out_width}"
            )
        if self.body_slots < 1:
            raise ValueError(f"body_slots must be >= 1, got {self.body_slots}")
        if self.normalization != "per-sequence-minmax":
            raise ValueError(f"unknown normalization {self.normalization!r}")


@dataclass
class SkeletonImage:
    """Raster of shape [height, width, 3] with values in [0, 1]."""

    values: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def encode_raster(seq: SkeletonSequence, cfg: EncoderConfig) -> np.ndarray:
    """The pre-resize raster: [joints * body_slots, frames, 3] in [0, 1].

    Body slots beyond what the sequence carries stay as zero rows and do not
    participate in the normalization statistics.
    """
    if seq.num_frames == 0:
        raise EncodeError("cannot encode a sequence with no frames")
    coords = seq.as_array()  # [T, slots, J, 3]
    t, present, joints, _ = coords.shape
    used = min(present, cfg.body_slots)
    data = coords[:, :used]  # [T, used, J, 3]

    raster = np.zeros((joints * cfg.body_slots, t, 3))
    for c in range(3):
        channel = data[..., c]
        lo, hi = channel.min(), channel.max()
        if hi > lo:
            channel = (channel - lo) / (hi - lo)
        else:
            channel = np.zeros_like(channel)
        for s in range(used):
            # rows: slot s occupies joints [s*J, (s+1)*J); columns: frames
            raster[s * joints : (s + 1) * joints, :, c] = channel[:, s].T
    return raster


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable corner-aligned bilinear resize of an [H, W, C] raster."""
    h, w = img.shape[:2]
    if h < 1 or w < 1:
        raise ValueError(f"cannot resize an empty image, got {img.shape}")
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]

    top = (1.0 - wx) * img[y0][:, x0] + wx * img[y0][:, x1]
    bottom = (1.0 - wx) * img[y1][:, x0] + wx * img[y1][:, x1]
    return (1.0 - wy) * top + wy * bottom


def encode(seq: SkeletonSequence, cfg: EncoderConfig) -> SkeletonImage:
    raster = encode_raster(seq, cfg)
    return SkeletonImage(resize_bilinear(raster, cfg.out_height, cfg.out_width))


def encode_batch(seqs, cfg: EncoderConfig):
    """Encode a list of sequences into an autodiff tensor [N, 3, H, W]."""
    from .autodiff import Tensor

    if not seqs:
        raise EncodeError("cannot encode an empty batch")
    stacked = np.stack([encode(s, cfg).values.transpose(2, 0, 1) for s in seqs])
    return Tensor(stacked)


def encode_batch_array(seqs, cfg: EncoderConfig) -> np.ndarray:
    """Like :func:`encode_batch` but returns a plain [N, 3, H, W] array."""
    if not seqs:
        raise EncodeError("cannot encode an empty batch")
    return np.stack([encode(s, cfg).values.transpose(2, 0, 1) for s in seqs])


def write_ppm(values: np.ndarray, path) -> None:
    """Dump an [H, W, 3] raster of values in [0, 1] as a binary 8-bit PPM."""
    if values.ndim != 3 or values.shape[2] != 3:
        raise ValueError(f"expected an [H, W, 3] raster, got {values.shape}")
    levels = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = values.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def write_gray_ppm(values: np.ndarray, path) -> None:
    """Grayscale heatmap written as an equal-channel PPM."""
    if values.ndim != 2:
        raise ValueError(f"expected an [H, W] array, got {values.shape}")
    write_ppm(np.repeat(values[:, :, None], 3, axis=2), path)
