import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

# Offsets closer than this to an integer are treated as lying on the pixel grid.
GRID_SNAP = 1e-9
MAX_SAMPLES = 32


class PlaneTooSmallError(ValueError):
    """Raised when a plane cannot hold a single full neighborhood"""


class NeighborhoodSpec(BaseModel):
    """P samples on a circle of radius R"""
    model_config = ConfigDict(frozen=True)

    P: int = Field(..., ge=2, le=MAX_SAMPLES)
    R: float = Field(..., gt=0)

    @property
    def margin(self) -> int:
        return int(math.ceil(self.R))

    @property
    def bin_count(self) -> int:
        return self.P * (self.P - 1) + 3

    def __str__(self):
        return f"{self.P}:{self.R:g}"


DEFAULT_SCALES = (NeighborhoodSpec(P=8, R=1), NeighborhoodSpec(P=16, R=2), NeighborhoodSpec(P=24, R=3))


def parse_scales(text: str) -> Tuple[NeighborhoodSpec, ...]:
    """Parse `8:1,16:2,24:3`"""
    scales = []
    for item in text.split(','):
        item = item.strip()
        if not item:
            continue
        try:
            p, r = item.split(':')
            scales.append(NeighborhoodSpec(P=int(p), R=float(r)))
        except ValueError as e:
            raise ValueError(f"Invalid scale '{item}', expected P:R ({str(e)})")
    if not scales:
        raise ValueError(f"No scales in '{text}'")
    return tuple(scales)


@lru_cache(maxsize=None)
def sample_offsets(spec: NeighborhoodSpec) -> Tuple[Tuple[float, float], ...]:
    """(dx, dy) of every sample; sample p sits at angle 2*pi*p/P, y pointing down"""
    offsets = []
    for p in range(spec.P):
        angle = 2.0 * math.pi * p / spec.P
        dx = spec.R * math.cos(angle)
        dy = -spec.R * math.sin(angle)
        if abs(dx - round(dx)) < GRID_SNAP:
            dx = float(round(dx))
        if abs(dy - round(dy)) < GRID_SNAP:
            dy = float(round(dy))
        offsets.append((dx, dy))
    return tuple(offsets)


def _bilinear(plane: np.ndarray, x: float, y: float) -> float:
    x0 = int(math.floor(x))
    y0 = int(math.floor(y))
    fx = x - x0
    fy = y - y0
    top = plane[y0, x0]
    if fx:
        top = top + fx * (plane[y0, x0 + 1] - plane[y0, x0])
    if not fy:
        return float(top)
    bottom = plane[y0 + 1, x0]
    if fx:
        bottom = bottom + fx * (plane[y0 + 1, x0 + 1] - plane[y0 + 1, x0])
    return float(top + fy * (bottom - top))


def sample_circle(plane: np.ndarray, cx: int, cy: int, spec: NeighborhoodSpec) -> np.ndarray:
    """P bilinear samples around (cx, cy); cx is the column, cy the row"""
    m = spec.margin
    height, width = plane.shape
    if not (m <= cx < width - m and m <= cy < height - m):
        raise ValueError(f"({cx}, {cy}) is closer than {m} pixels to the border")
    return np.array([_bilinear(plane, cx + dx, cy + dy) for dx, dy in sample_offsets(spec)])


def lbp_code(samples: Sequence[float], center: float) -> int:
    """Sum of 2^p over samples strictly greater than the center"""
    code = 0
    for p, value in enumerate(samples):
        if value - center > 0:
            code |= 1 << p
    return code


def uniformity(code: int, P: int) -> int:
    """Number of circular 0/1 transitions in the P-bit code"""
    bits = [(code >> p) & 1 for p in range(P)]
    transitions = abs(bits[P - 1] - bits[0])
    for p in range(1, P):
        transitions += abs(bits[p] - bits[p - 1])
    return transitions


def uniform_codes(P: int) -> np.ndarray:
    """All codes with at most two transitions, ascending: zero, all-ones and every rotated run of ones"""
    full = (1 << P) - 1
    codes = {0, full}
    for run in range(1, P):
        ones = (1 << run) - 1
        for shift in range(P):
            codes.add(((ones << shift) | (ones >> (P - shift))) & full)
    return np.array(sorted(codes), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class UniformTable:
    """Uniform codes get bins 0..P(P-1)+1 in ascending code order; everything else the last bin"""
    P: int
    codes: np.ndarray

    @property
    def bin_count(self) -> int:
        return len(self.codes) + 1

    @property
    def nonuniform_bin(self) -> int:
        return len(self.codes)

    def bin_of(self, code):
        """Bin index of a code or an array of codes"""
        code = np.asarray(code, dtype=np.int64)
        pos = np.searchsorted(self.codes, code)
        hit = self.codes[np.minimum(pos, len(self.codes) - 1)] == code
        bins = np.where(hit, pos, self.nonuniform_bin)
        return int(bins) if bins.ndim == 0 else bins


@lru_cache(maxsize=None)
def build_uniform_table(P: int) -> UniformTable:
    if P < 2:
        raise ValueError(f"P must be at least 2, got {P}")
    table = UniformTable(P=P, codes=uniform_codes(P))
    logger.debug(f"Uniform table P={P}: {table.bin_count} bins")
    return table


@dataclass(frozen=True, eq=False)
class CodeImage:
    codes: np.ndarray       # (height, width) int64, 0 where masked
    valid_mask: np.ndarray  # (height, width) bool
    spec: NeighborhoodSpec

    def valid_codes(self) -> np.ndarray:
        return self.codes[self.valid_mask]

    def to_csv_rows(self) -> Iterator[List[int]]:
        """Rows of integer codes with -1 for masked pixels"""
        masked = np.where(self.valid_mask, self.codes, -1)
        for row in masked:
            yield row.tolist()


def encode_image(plane: np.ndarray, spec: NeighborhoodSpec) -> CodeImage:
    """LBP code of every pixel that has a full neighborhood.

    Samples are interpolated on differences to the center pixel, so adding a
    constant to an integer plane leaves every code unchanged.
    """
    plane = np.asarray(plane, dtype=np.float64)
    height, width = plane.shape
    m = spec.margin
    if height < 2 * m + 1 or width < 2 * m + 1:
        raise PlaneTooSmallError(f"plane {width}x{height} too small for radius {spec.R:g}")

    inner_h = height - 2 * m
    inner_w = width - 2 * m
    center = plane[m:m + inner_h, m:m + inner_w]

    def shifted(oy: int, ox: int) -> np.ndarray:
        return plane[m + oy:m + oy + inner_h, m + ox:m + ox + inner_w] - center

    codes = np.zeros((inner_h, inner_w), dtype=np.int64)
    for p, (dx, dy) in enumerate(sample_offsets(spec)):
        x0 = int(math.floor(dx))
        y0 = int(math.floor(dy))
        fx = dx - x0
        fy = dy - y0
        top = shifted(y0, x0)
        if fx:
            top = top + fx * (shifted(y0, x0 + 1) - top)
        if fy:
            bottom = shifted(y0 + 1, x0)
            if fx:
                bottom = bottom + fx * (shifted(y0 + 1, x0 + 1) - bottom)
            value = top + fy * (bottom - top)
        else:
            value = top
        codes |= (value > 0).astype(np.int64) << p

    full_codes = np.zeros((height, width), dtype=np.int64)
    full_codes[m:m + inner_h, m:m + inner_w] = codes
    valid = np.zeros((height, width), dtype=bool)
    valid[m:m + inner_h, m:m + inner_w] = True
    return CodeImage(codes=full_codes, valid_mask=valid, spec=spec)
