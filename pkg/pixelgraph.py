import logging
import math
from dataclasses import dataclass
from typing import List, TextIO, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse

from imagecore import GradientField, RasterImage

logger = logging.getLogger(__name__)


class GraphParams(BaseModel):
    """Thresholds gating a link between two pixels"""
    model_config = ConfigDict(frozen=True)

    q: float = Field(3.0, gt=0, description="search radius in pixels")
    r: float = Field(0.315, gt=0, description="similarity threshold")
    s: float = Field(5.0, ge=0, description="gradient-magnitude difference threshold")
    t: float = Field(45.0, ge=0, description="gradient-angle difference threshold in degrees")
    L: int = Field(255, gt=0, description="maximum gray level")


@dataclass(frozen=True, eq=False)
class DirectedPixelGraph:
    """Directed graph over the pixels of one band; node i is pixel (i // width, i % width)"""
    height: int
    width: int
    out_adj: sparse.csr_matrix
    in_adj: sparse.csr_matrix

    @classmethod
    def from_edges(cls, src: np.ndarray, dst: np.ndarray, height: int, width: int) -> 'DirectedPixelGraph':
        n = height * width
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if np.any(src == dst):
            raise ValueError("self-loops are not allowed")
        data = np.ones(len(src), dtype=np.int8)
        out_adj = sparse.csr_matrix((data, (src, dst)), shape=(n, n))
        out_adj.sum_duplicates()
        out_adj.data[:] = 1
        out_adj.sort_indices()
        in_adj = out_adj.transpose().tocsr()
        in_adj.sort_indices()
        return cls(height=height, width=width, out_adj=out_adj, in_adj=in_adj)

    @property
    def node_count(self) -> int:
        return self.height * self.width

    @property
    def edge_count(self) -> int:
        return int(self.out_adj.nnz)

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.out_adj.indices[self.out_adj.indptr[i]:self.out_adj.indptr[i + 1]]

    def in_neighbors(self, i: int) -> np.ndarray:
        return self.in_adj.indices[self.in_adj.indptr[i]:self.in_adj.indptr[i + 1]]

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Edge list (src, dst) sorted by (src, dst)"""
        src = np.repeat(np.arange(self.node_count, dtype=np.int64), np.diff(self.out_adj.indptr))
        return src, self.out_adj.indices.astype(np.int64)

    def transpose(self) -> 'DirectedPixelGraph':
        return DirectedPixelGraph(height=self.height, width=self.width,
                                  out_adj=self.in_adj, in_adj=self.out_adj)


def pixel_distance(i: int, j: int, width: int) -> float:
    """Euclidean distance between two row-major pixel indices"""
    yi, xi = divmod(i, width)
    yj, xj = divmod(j, width)
    return math.sqrt((xi - xj) ** 2 + (yi - yj) ** 2)


def edge_weight(Ii, Ij, d, params: GraphParams):
    """Similarity weight of a pixel pair inside the search radius; works on scalars and arrays"""
    q2 = params.q * params.q
    return (d * d + q2 * np.abs(Ii - Ij) / params.L) / (2.0 * q2)


def wrap_angle(deg):
    """Map an angle difference in (-360, 360) to (-180, 180]"""
    deg = np.asarray(deg, dtype=np.float64)
    wrapped = np.where(deg > 180.0, deg - 360.0, deg)
    return np.where(wrapped <= -180.0, wrapped + 360.0, wrapped)


def _passes_gates(w, g, theta, params: GraphParams):
    return (w <= params.r) & (g <= params.s) & (theta <= params.t)


def link_predicate(i: int, j: int, band: np.ndarray, field: GradientField, params: GraphParams) -> bool:
    """True iff the directed edge i -> j exists"""
    if i == j:
        raise ValueError("link_predicate requires distinct pixels")
    width = band.shape[1]
    d = pixel_distance(i, j, width)
    if not 0 < d <= params.q:
        return False

    yi, xi = divmod(i, width)
    yj, xj = divmod(j, width)
    magnitude = field.magnitude[:, :, 0]
    angle = field.angle_deg[:, :, 0]

    w = edge_weight(band[yi, xi], band[yj, xj], d, params)
    g = magnitude[yi, xi] - magnitude[yj, xj]
    theta = wrap_angle(angle[yi, xi] - angle[yj, xj])
    return bool(_passes_gates(w, g, theta, params))


def neighborhood_offsets(q: float) -> List[Tuple[int, int, float]]:
    """(dy, dx, d) for every integer offset with 0 < d <= q, in row-major order"""
    k = int(math.floor(q))
    offsets = []
    for dy in range(-k, k + 1):
        for dx in range(-k, k + 1):
            if dy == 0 and dx == 0:
                continue
            d = math.sqrt(dx ** 2 + dy ** 2)
            if d <= q:
                offsets.append((dy, dx, d))
    return offsets


def build_graph(band: np.ndarray, field: GradientField, params: GraphParams) -> DirectedPixelGraph:
    """Build the directed pixel graph of one band.

    Every offset inside the (2*floor(q)+1)^2 window is evaluated for all pixels
    at once; pairs farther than q apart never link.
    """
    band = np.asarray(band, dtype=np.float64)
    magnitude = field.magnitude[:, :, 0]
    angle = field.angle_deg[:, :, 0]
    if band.shape != magnitude.shape:
        raise ValueError(f"band shape {band.shape} does not match gradient field {magnitude.shape}")

    height, width = band.shape
    index = np.arange(height * width, dtype=np.int64).reshape(height, width)
    sources = []
    targets = []

    for dy, dx, d in neighborhood_offsets(params.q):
        if abs(dy) >= height or abs(dx) >= width:
            continue
        src = (slice(max(0, -dy), height - max(0, dy)), slice(max(0, -dx), width - max(0, dx)))
        dst = (slice(max(0, dy), height - max(0, -dy)), slice(max(0, dx), width - max(0, -dx)))

        w = edge_weight(band[src], band[dst], d, params)
        g = magnitude[src] - magnitude[dst]
        theta = wrap_angle(angle[src] - angle[dst])
        linked = _passes_gates(w, g, theta, params)

        sources.append(index[src][linked])
        targets.append(index[dst][linked])

    if sources:
        src_all = np.concatenate(sources)
        dst_all = np.concatenate(targets)
    else:
        src_all = dst_all = np.empty(0, dtype=np.int64)

    graph = DirectedPixelGraph.from_edges(src_all, dst_all, height, width)
    logger.debug(f"Built pixel graph {width}x{height}: {graph.edge_count} edges")
    return graph


def build_graphs(img: RasterImage, field: GradientField, params: GraphParams) -> List[DirectedPixelGraph]:
    """One graph per band"""
    return [build_graph(img.band(b), field.band(b), params) for b in range(img.bands)]


def degrees(g: DirectedPixelGraph) -> Tuple[np.ndarray, np.ndarray]:
    """Per-node (k_in, k_out)"""
    k_in = np.diff(g.in_adj.indptr).astype(np.int64)
    k_out = np.diff(g.out_adj.indptr).astype(np.int64)
    return k_in, k_out


def dump_edges(g: DirectedPixelGraph, stream: TextIO):
    """Write the text edge dump: header line, then one `i j` line per edge"""
    stream.write(f"nodes={g.node_count} edges={g.edge_count}\n")
    src, dst = g.edges()
    for i, j in zip(src.tolist(), dst.tolist()):
        stream.write(f"{i} {j}\n")
