import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Tuple

import numpy as np
from scipy import sparse

from pixelgraph import DirectedPixelGraph, degrees

logger = logging.getLogger(__name__)

DEFAULT_EC_TOL = 1e-6
DEFAULT_EC_MAX_ITER = 1000
TELEPORT_EPSILON = 1e-9


class MeasureKind(str, Enum):
    CC = 'CC'
    IDC = 'IDC'
    ODC = 'ODC'
    EC = 'EC'


class DegenerateGraphError(ValueError):
    """Raised when a measure is undefined for the graph size"""


class ConvergenceError(RuntimeError):
    """Raised when power iteration does not settle within max_iter"""


@dataclass(frozen=True, eq=False)
class MeasureImage:
    kind: MeasureKind
    values: np.ndarray  # (height, width)

    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass
class PowerIterState:
    vector: np.ndarray
    lambda_inv: float = 0.0
    iteration: int = 0
    residual: float = np.inf
    converged: bool = False


def _as_image(g: DirectedPixelGraph, kind: MeasureKind, values: np.ndarray) -> MeasureImage:
    return MeasureImage(kind=kind, values=np.asarray(values, dtype=np.float64).reshape(g.height, g.width))


def clustering_coefficient(g: DirectedPixelGraph, variant: str = 'cube_root') -> MeasureImage:
    """Directed clustering coefficient of every node.

    variant='cube_root' takes the cube root of each symmetrised entry
    (l_ij + l_ji) before multiplying; variant='product' is the classical
    directed form that multiplies the symmetrised entries directly.
    """
    A = g.out_adj.astype(np.float64)
    S = (A + A.T).tocsr()
    if variant == 'cube_root':
        C = S.copy()
        C.data = np.cbrt(C.data)
    elif variant == 'product':
        C = S
    else:
        raise ValueError(f"Unknown clustering variant: {variant}")

    # diag(C^3); the zero diagonal of C excludes k = i and k = j
    numerator = 0.5 * np.asarray((C @ C).multiply(C).sum(axis=1)).ravel()

    k_in, k_out = degrees(g)
    k_tot = (k_in + k_out).astype(np.float64)
    bilateral = np.asarray(A.multiply(A.T).sum(axis=1)).ravel()
    denominator = k_tot * (k_tot - 1.0) - 2.0 * bilateral

    cc = np.zeros(g.node_count, dtype=np.float64)
    positive = denominator > 0
    cc[positive] = numerator[positive] / denominator[positive]
    return _as_image(g, MeasureKind.CC, cc)


def degree_centrality(g: DirectedPixelGraph) -> Tuple[MeasureImage, MeasureImage]:
    """In- and out-degree centrality, normalised by node_count - 1"""
    n = g.node_count
    if n < 2:
        raise DegenerateGraphError(f"degree centrality needs at least 2 nodes, got {n}")
    k_in, k_out = degrees(g)
    scale = 1.0 / (n - 1)
    return (_as_image(g, MeasureKind.IDC, k_in * scale),
            _as_image(g, MeasureKind.ODC, k_out * scale))


def _power_iterate(transfer: sparse.csr_matrix, tol: float, max_iter: int,
                   shift: float = 0.0, teleport: float = 0.0) -> PowerIterState:
    n = transfer.shape[0]
    state = PowerIterState(vector=np.full(n, 1.0 / np.sqrt(n)))
    u = state.vector

    for iteration in range(1, max_iter + 1):
        nxt = transfer @ u
        if shift:
            nxt = nxt + shift * u
        if teleport:
            nxt = nxt + teleport * u.sum() / n
        norm = np.linalg.norm(nxt)
        if norm == 0:
            # nilpotent transfer: no dominant direction
            state.iteration = iteration
            return state
        nxt = nxt / norm
        residual = float(np.abs(nxt - u).sum())
        state.vector = nxt
        state.lambda_inv = norm - shift
        state.iteration = iteration
        state.residual = residual
        u = nxt
        if residual < n * tol:
            state.converged = True
            return state
    return state


def eigenvector_centrality(g: DirectedPixelGraph, tol: float = DEFAULT_EC_TOL,
                           max_iter: int = DEFAULT_EC_MAX_ITER, direction: str = 'in') -> MeasureImage:
    """Eigenvector centrality by power iteration.

    direction='in' sums the scores of predecessors (u'(i) = sum_{j->i} u(j));
    direction='out' sums over successors instead.

    Iteration stops once the change summed over all nodes drops below
    node_count * tol, so tol bounds the average per-node change between the
    last two iterates. It does not bound the per-node eigen-equation
    residual, which can be several orders of magnitude larger; pass a
    smaller tol when the fixed point itself must be tight.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    if g.edge_count == 0:
        return _as_image(g, MeasureKind.EC, np.zeros(g.node_count))

    if direction == 'in':
        transfer = g.in_adj.astype(np.float64)
    elif direction == 'out':
        transfer = g.out_adj.astype(np.float64)
    else:
        raise ValueError(f"Unknown eigenvector direction: {direction}")

    state = _power_iterate(transfer, tol, max_iter)
    if not state.converged:
        logger.warning(f"Eigenvector centrality did not converge after {state.iteration} iterations "
                       f"(residual {state.residual:.3g}); retrying with shifted, teleporting iteration")
        # (L' + I) shares eigenvectors with L' and cannot oscillate
        state = _power_iterate(transfer, tol, max_iter, shift=1.0, teleport=TELEPORT_EPSILON)
    if not state.converged:
        raise ConvergenceError(f"Eigenvector centrality did not converge within {max_iter} iterations "
                               f"(residual {state.residual:.3g})")

    logger.debug(f"Eigenvector centrality converged in {state.iteration} iterations, "
                 f"dominant eigenvalue {state.lambda_inv:.6g}")
    return _as_image(g, MeasureKind.EC, np.abs(state.vector))


def compute_measures(g: DirectedPixelGraph, kinds: Iterable[MeasureKind] = tuple(MeasureKind),
                     ec_tol: float = DEFAULT_EC_TOL, ec_max_iter: int = DEFAULT_EC_MAX_ITER,
                     ec_direction: str = 'in') -> Dict[MeasureKind, MeasureImage]:
    """Evaluate the requested measures on one graph"""
    kinds = [MeasureKind(k) for k in kinds]
    result = {}
    if MeasureKind.IDC in kinds or MeasureKind.ODC in kinds:
        idc, odc = degree_centrality(g)
        result[MeasureKind.IDC] = idc
        result[MeasureKind.ODC] = odc
    if MeasureKind.CC in kinds:
        result[MeasureKind.CC] = clustering_coefficient(g)
    if MeasureKind.EC in kinds:
        result[MeasureKind.EC] = eigenvector_centrality(g, ec_tol, ec_max_iter, ec_direction)
    return {k: result[k] for k in kinds}


def measure_stack(graphs: List[DirectedPixelGraph], kind: MeasureKind, **ec_options) -> List[MeasureImage]:
    """Apply one measure to every band's graph"""
    kind = MeasureKind(kind)
    return [compute_measures(g, [kind], **ec_options)[kind] for g in graphs]
