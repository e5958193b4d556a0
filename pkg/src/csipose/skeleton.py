"""17-joint skeleton graph and the spectral quantities used by graph convolution.

The graph is undirected and binary: joints are nodes, bones are edges. From the
adjacency we derive the symmetrically normalized Laplacian, its largest
eigenvalue, the rescaled Laplacian with spectrum in [-1, 1], and the Chebyshev
polynomial basis evaluated at the rescaled Laplacian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GraphError

# Joint order used everywhere in this package (index 0 is the pelvis root).
JOINT_NAMES = (
    "Bot Torso", "L.Hip", "L.Knee", "L.Foot", "R.Hip", "R.Knee", "R.Foot",
    "Center Torso", "Upper Torso", "Neck Base", "Center Head",
    "R.Shoulder", "R.Elbow", "R.Hand", "L.Shoulder", "L.Elbow", "L.Hand",
)
N_JOINTS = len(JOINT_NAMES)

# Kinematic tree over the joint order above: legs hang off the pelvis, the
# spine runs pelvis -> center torso -> upper torso -> neck -> head, and both
# arms attach at the upper torso (index 8).
DEFAULT_EDGES = (
    (0, 1), (1, 2), (2, 3),
    (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9), (9, 10),
    (8, 11), (11, 12), (12, 13),
    (8, 14), (14, 15), (15, 16),
)


@dataclass(frozen=True)
class SkeletonGraph:
    """Adjacency plus every derived spectral quantity, immutable once built."""

    n_joints: int
    edges: tuple[tuple[int, int], ...]
    adjacency: np.ndarray        # (J, J) symmetric binary, zero diagonal
    degree: np.ndarray           # (J, J) diagonal
    laplacian: np.ndarray        # I - D^{-1/2} A D^{-1/2}
    lambda_max: float            # largest eigenvalue of the laplacian
    rescaled_laplacian: np.ndarray  # 2 L / lambda_max - I, spectrum in [-1, 1]


@dataclass(frozen=True)
class ChebBasis:
    """Chebyshev polynomials T_0..T_{K-1} of the rescaled Laplacian."""

    polynomials: tuple[np.ndarray, ...]
    order: int


def build_skeleton(n_joints: int = N_JOINTS,
                   edges=DEFAULT_EDGES) -> SkeletonGraph:
    """Build the skeleton graph and all spectral quantities.

    Raises GraphError for out-of-range or duplicate edges, self-loops, or a
    disconnected graph (an isolated joint has zero degree, which would make
    the normalized Laplacian undefined).
    """
    if n_joints < 1:
        raise GraphError(f"need at least one joint, got {n_joints}")
    adjacency = np.zeros((n_joints, n_joints), dtype=np.float64)
    seen = set()
    canon = []
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < n_joints and 0 <= j < n_joints):
            raise GraphError(f"edge ({i}, {j}) out of range for {n_joints} joints")
        if i == j:
            raise GraphError(f"self-loop at joint {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge ({i}, {j})")
        seen.add(key)
        canon.append(key)
        adjacency[i, j] = 1.0
        adjacency[j, i] = 1.0

    _check_connected(adjacency)

    deg = adjacency.sum(axis=1)
    degree = np.diag(deg)
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    laplacian = np.eye(n_joints) - (d_inv_sqrt[:, None] * adjacency) * d_inv_sqrt[None, :]
    # J is tiny, so take lambda_max from a full eigendecomposition instead of
    # the usual lambda_max ~ 2 shortcut.
    lambda_max = float(np.linalg.eigvalsh(laplacian)[-1])
    rescaled = 2.0 * laplacian / lambda_max - np.eye(n_joints)
    return SkeletonGraph(
        n_joints=n_joints,
        edges=tuple(canon),
        adjacency=adjacency,
        degree=degree,
        laplacian=laplacian,
        lambda_max=lambda_max,
        rescaled_laplacian=rescaled,
    )


def _check_connected(adjacency: np.ndarray) -> None:
    n = adjacency.shape[0]
    reached = np.zeros(n, dtype=bool)
    stack = [0]
    reached[0] = True
    while stack:
        u = stack.pop()
        for v in np.nonzero(adjacency[u])[0]:
            if not reached[v]:
                reached[v] = True
                stack.append(int(v))
    if not reached.all():
        missing = np.nonzero(~reached)[0].tolist()
        raise GraphError(f"graph is disconnected; unreachable joints {missing}")


def cheb_basis(graph: SkeletonGraph, order: int) -> ChebBasis:
    """Chebyshev polynomials of the rescaled Laplacian via the three-term
    recurrence T_k = 2 L~ T_{k-1} - T_{k-2}, with T_0 = I and T_1 = L~."""
    if order < 1:
        raise GraphError(f"Chebyshev order must be >= 1, got {order}")
    lt = graph.rescaled_laplacian
    polys = [np.eye(graph.n_joints)]
    if order > 1:
        polys.append(lt.copy())
    for _ in range(2, order):
        polys.append(2.0 * lt @ polys[-1] - polys[-2])
    return ChebBasis(polynomials=tuple(polys), order=order)


def cheb_basis_spectral(graph: SkeletonGraph, order: int) -> ChebBasis:
    """Same basis built in the spectral domain: U T_k(diag(w)) U^T from the
    eigendecomposition of the rescaled Laplacian. Independent route used to
    cross-check the recurrence."""
    if order < 1:
        raise GraphError(f"Chebyshev order must be >= 1, got {order}")
    w, u = np.linalg.eigh(graph.rescaled_laplacian)
    polys = []
    tk_prev, tk = np.ones_like(w), w.copy()
    for k in range(order):
        if k == 0:
            vals = np.ones_like(w)
        elif k == 1:
            vals = w
        else:
            vals = 2.0 * w * tk - tk_prev
            tk_prev, tk = tk, vals
        polys.append((u * vals[None, :]) @ u.T)
    return ChebBasis(polynomials=tuple(polys), order=order)
