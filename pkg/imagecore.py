import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import cv2
import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

SUPPORTED_SUFFIXES = {'.png', '.jpg', '.jpeg', '.bmp'}
MAX_GRAY = 255

# Sobel kernels, applied as correlation: M1 responds to left->right increase,
# M2 to bottom->top increase.
SOBEL_M1 = np.array([[-1, 0, 1],
                     [-2, 0, 2],
                     [-1, 0, 1]], dtype=np.float64)
SOBEL_M2 = np.array([[1, 2, 1],
                     [0, 0, 0],
                     [-1, -2, -1]], dtype=np.float64)


class ImageDecodeError(ValueError):
    """Raised when an image file cannot be turned into a RasterImage"""


@dataclass(frozen=True)
class RasterImage:
    """M x N x B intensity grid, stored row-major as (height, width, bands)"""
    pixels: np.ndarray
    gray_levels: int = MAX_GRAY

    def __post_init__(self):
        if self.pixels.ndim != 3:
            raise ValueError(f"pixels must be (height, width, bands), got shape {self.pixels.shape}")
        if self.pixels.shape[2] not in (1, 3):
            raise ValueError(f"band count must be 1 or 3, got {self.pixels.shape[2]}")
        if self.pixels.shape[0] == 0 or self.pixels.shape[1] == 0:
            raise ValueError("image has zero size")
        if self.pixels.min() < 0 or self.pixels.max() > self.gray_levels:
            raise ValueError(f"intensities must lie in [0, {self.gray_levels}]")

    @classmethod
    def from_array(cls, arr: np.ndarray, gray_levels: int = MAX_GRAY) -> 'RasterImage':
        """Wrap a 2-D (single band) or 3-D array"""
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        return cls(pixels=arr.astype(np.int64), gray_levels=gray_levels)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def bands(self) -> int:
        return self.pixels.shape[2]

    def band(self, b: int) -> np.ndarray:
        """Return band b as a float64 plane"""
        if not 0 <= b < self.bands:
            raise IndexError(f"band {b} out of range for image with {self.bands} band(s)")
        return self.pixels[:, :, b].astype(np.float64)


@dataclass(frozen=True)
class GradientField:
    """Per-band Sobel magnitude and angle planes, shape (height, width, bands)"""
    magnitude: np.ndarray
    angle_deg: np.ndarray

    def band(self, b: int) -> 'GradientField':
        return GradientField(magnitude=self.magnitude[:, :, b:b + 1],
                             angle_deg=self.angle_deg[:, :, b:b + 1])

    @property
    def bands(self) -> int:
        return self.magnitude.shape[2]


def load_image(path: Union[str, Path]) -> RasterImage:
    """Decode a PNG/JPEG/BMP file into a RasterImage with R,G,B band order"""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageDecodeError(f"Unsupported image format: {path}")
    if not path.is_file():
        raise ImageDecodeError(f"Image not found: {path}")

    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ImageDecodeError(f"Could not decode image: {path}")
    if data.size == 0:
        raise ImageDecodeError(f"Zero-sized image: {path}")

    if data.dtype == np.uint16:
        data = (data >> 8).astype(np.uint8)
    elif data.dtype != np.uint8:
        raise ImageDecodeError(f"Unsupported pixel type {data.dtype}: {path}")

    if data.ndim == 2:
        pixels = data[:, :, np.newaxis]
    elif data.shape[2] == 2:
        # gray + alpha
        pixels = data[:, :, :1]
    elif data.shape[2] == 4:
        pixels = cv2.cvtColor(data, cv2.COLOR_BGRA2RGB)
    else:
        pixels = cv2.cvtColor(data, cv2.COLOR_BGR2RGB)

    logger.debug(f"Loaded {path} ({pixels.shape[1]}x{pixels.shape[0]}, {pixels.shape[2]} band(s))")
    return RasterImage.from_array(pixels)


def save_image(img: RasterImage, path: Union[str, Path]):
    """Write an image to disk; the format follows the file suffix"""
    path = Path(path)
    data = np.clip(img.pixels, 0, 255).astype(np.uint8)
    if img.bands == 3:
        data = cv2.cvtColor(data, cv2.COLOR_RGB2BGR)
    else:
        data = data[:, :, 0]
    if not cv2.imwrite(str(path), data):
        raise OSError(f"Could not write image: {path}")


def round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def resize_bilinear(img: RasterImage, w: int, h: int) -> RasterImage:
    """Bilinear resampling of every band to w x h, rounded back to integers"""
    if w < 1 or h < 1:
        raise ValueError(f"target size must be at least 1x1, got {w}x{h}")
    if (w, h) == (img.width, img.height):
        return img

    bands = []
    for b in range(img.bands):
        # Float input keeps cv2 from rounding internally; pixel centers sit at +0.5.
        resampled = cv2.resize(img.band(b), (w, h), interpolation=cv2.INTER_LINEAR)
        bands.append(np.clip(round_half_away(resampled), 0, img.gray_levels))
    return RasterImage(pixels=np.stack(bands, axis=2).astype(np.int64), gray_levels=img.gray_levels)


def sobel_field(img: RasterImage) -> GradientField:
    """Sobel magnitude and full-quadrant angle (degrees) of every band"""
    magnitudes = []
    angles = []
    for b in range(img.bands):
        plane = img.band(b)
        gx = ndimage.correlate(plane, SOBEL_M1, mode='nearest')
        gy = ndimage.correlate(plane, SOBEL_M2, mode='nearest')
        magnitude = np.hypot(gx, gy)

        angle = np.degrees(np.arctan2(gy, gx))
        angle = np.where(angle <= -180.0, angle + 360.0, angle)
        angle = np.where((gx == 0) & (gy == 0), 0.0, angle)

        magnitudes.append(magnitude)
        angles.append(angle)
    return GradientField(magnitude=np.stack(magnitudes, axis=2),
                         angle_deg=np.stack(angles, axis=2))
