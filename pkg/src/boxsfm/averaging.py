"""View-graph construction, yaw and translation averaging, registration.

Frames are gravity-rectified, so global rotations reduce to one yaw angle per
frame and rotation averaging becomes circular regression on the view graph:
with the edge convention "pose maps frame-i coords to frame-j coords",
every edge contributes phi_i = phi_j + yaw_ij and c_i - c_j = R_y(phi_j) @ t_ij.
Both problems are solved per connected component as anchored sparse linear
least squares (normal equations on the graph Laplacian, conjugate gradient),
with a fixed number of filtering rounds that drop edges disagreeing with the
averaged solution. Only the largest surviving component is registered.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import DuplicateEdge, EmptyGraph, UnderconstrainedComponent
from .geom import SE3Pose, Vec3, rot_y, wrap_angle
from .twoview import RelativePoseEstimate

logger = logging.getLogger(__name__)

DEFAULT_ROUNDS = 3
DEFAULT_ROTATION_OUTLIER_DEG = 3.0
DEFAULT_TRANSLATION_OUTLIER_M = 0.10
_CG_RTOL = 1e-10
_RELINEARIZE_MAX_ITERS = 50
_RELINEARIZE_STEP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ViewGraph:
    """Frames as nodes, verified relative poses as edges.

    Edge key (i, j) holds the pose mapping frame-i coordinates to frame-j
    coordinates; at most one edge per unordered pair, no self edges.
    """

    nodes: frozenset[int]
    edges: dict[tuple[int, int], RelativePoseEstimate]

    def sorted_edges(self) -> list[tuple[tuple[int, int], RelativePoseEstimate]]:
        return sorted(self.edges.items())

    def without_edges(self, removed) -> "ViewGraph":
        removed = set(removed)
        return ViewGraph(
            self.nodes, {k: v for k, v in self.edges.items() if k not in removed}
        )


@dataclass(frozen=True, eq=False)
class GlobalPoses:
    """World-from-rectified-camera pose per registered frame.

    Poses are assembled as a yaw about the world vertical axis plus a camera
    center, so rotations are always yaw-only.
    """

    poses: dict[int, SE3Pose]
    registered: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        missing = self.registered - set(self.poses)
        if missing:
            raise ValueError(f"registered frames without a pose: {sorted(missing)}")


def build_view_graph(pair_estimates) -> ViewGraph:
    """Graph over all frames mentioned in ``pair_estimates`` with one edge per
    pair that carries a present estimate.

    Raises:
        DuplicateEdge: the same unordered pair appears twice.
    """
    nodes: set[int] = set()
    edges: dict[tuple[int, int], RelativePoseEstimate] = {}
    seen: set[tuple[int, int]] = set()
    for (i, j), est in pair_estimates.items():
        if i == j:
            raise DuplicateEdge(f"self edge ({i}, {j})")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise DuplicateEdge(f"pair {key} appears more than once")
        seen.add(key)
        nodes.update((i, j))
        if est is not None:
            edges[(i, j)] = est
    return ViewGraph(frozenset(nodes), edges)


def connected_components(graph: ViewGraph) -> list[list[int]]:
    """Components as sorted node lists, ordered by (-size, min node id)."""
    adj: dict[int, set[int]] = {n: set() for n in graph.nodes}
    for i, j in graph.edges:
        adj[i].add(j)
        adj[j].add(i)
    seen: set[int] = set()
    comps = []
    for n in sorted(graph.nodes):
        if n in seen:
            continue
        comp = {n}
        queue = deque([n])
        while queue:
            cur = queue.popleft()
            for nb in sorted(adj[cur]):
                if nb not in comp:
                    comp.add(nb)
                    queue.append(nb)
        seen |= comp
        comps.append(sorted(comp))
    comps.sort(key=lambda c: (-len(c), c[0]))
    return comps


def _component_edges(graph: ViewGraph, comp: list[int]):
    comp_set = set(comp)
    return [(k, est) for k, est in graph.sorted_edges() if k[0] in comp_set]


def _spanning_tree_root(comp: list[int], edges) -> int:
    degree = {n: 0 for n in comp}
    for (i, j), _ in edges:
        degree[i] += 1
        degree[j] += 1
    return max(comp, key=lambda n: (degree[n], -n))


def _solve_anchored_least_squares(
    comp: list[int], rows, rhs: np.ndarray, root: int
) -> dict[int, np.ndarray]:
    """Minimize sum ||x_i - x_j - rhs_e||^2 with x_root = 0.

    ``rows`` is a list of (i, j) per constraint; ``rhs`` has shape (E,) or
    (E, d). Normal equations on the reduced Laplacian, solved per column by
    conjugate gradient.
    """
    free = [n for n in comp if n != root]
    col = {n: c for c, n in enumerate(free)}
    if not free or not rows:
        return {n: np.zeros(rhs.shape[1:] or (1,)) for n in comp}
    data, ri, ci = [], [], []
    for e, (i, j) in enumerate(rows):
        if i != root:
            data.append(1.0)
            ri.append(e)
            ci.append(col[i])
        if j != root:
            data.append(-1.0)
            ri.append(e)
            ci.append(col[j])
    a = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), len(free)))
    lap = (a.T @ a).tocsr()
    b = np.atleast_2d(np.asarray(rhs, dtype=float).T).T.reshape(len(rows), -1)
    atb = a.T @ b
    out = np.zeros((len(free), b.shape[1]))
    for c in range(b.shape[1]):
        if not np.any(atb[:, c]):
            continue
        x, info = cg(lap, atb[:, c], rtol=_CG_RTOL, atol=0.0, maxiter=20 * len(free) + 100)
        if info != 0:
            logger.warning("CG did not converge (info=%d); falling back to dense solve", info)
            x = np.linalg.lstsq(lap.toarray(), atb[:, c], rcond=None)[0]
        out[:, c] = x
    result = {root: np.zeros(b.shape[1])}
    for n, c in col.items():
        result[n] = out[c]
    return result


def _bfs_yaw_init(comp: list[int], edges, root: int) -> dict[int, float]:
    adj: dict[int, list[tuple[int, float]]] = {n: [] for n in comp}
    for (i, j), est in edges:
        # phi_i = phi_j + yaw_ij along either traversal direction.
        adj[j].append((i, est.pose.yaw))
        adj[i].append((j, -est.pose.yaw))
    yaws = {root: 0.0}
    queue = deque([root])
    while queue:
        cur = queue.popleft()
        for nb, delta in adj[cur]:
            if nb not in yaws:
                yaws[nb] = yaws[cur] + delta
                queue.append(nb)
    for n in comp:
        yaws.setdefault(n, 0.0)
    return yaws


def _solve_component_yaws(comp: list[int], edges) -> dict[int, float]:
    root = _spanning_tree_root(comp, edges)
    yaws = _bfs_yaw_init(comp, edges, root)
    if not edges:
        return yaws
    rows = [k for k, _ in edges]
    measured = np.array([est.pose.yaw for _, est in edges])
    for _ in range(_RELINEARIZE_MAX_ITERS):
        residuals = np.array(
            [wrap_angle(yaws[i] - yaws[j] - y) for (i, j), y in zip(rows, measured)]
        )
        delta = _solve_anchored_least_squares(comp, rows, -residuals, root)
        step = max(abs(float(d[0])) for d in delta.values())
        for n in comp:
            yaws[n] = yaws[n] + float(delta[n][0])
        if step < _RELINEARIZE_STEP_TOL:
            break
    return yaws


def rotation_averaging(
    graph: ViewGraph,
    *,
    rounds: int = DEFAULT_ROUNDS,
    outlier_deg: float = DEFAULT_ROTATION_OUTLIER_DEG,
) -> tuple[dict[int, float], ViewGraph]:
    """Per-frame yaws by anchored circular least squares with outlier rounds.

    Each round initializes yaws along a breadth-first spanning tree (root: the
    highest-degree node), solves the wrapped least squares by iterated
    re-linearization, then drops edges whose residual exceeds ``outlier_deg``.
    Runs ``rounds`` rounds, stopping early once no edge is removed. Each
    connected component is solved with its own zero-yaw anchor.

    Raises:
        EmptyGraph: the graph has no nodes.
    """
    if not graph.nodes:
        raise EmptyGraph("rotation averaging needs a non-empty graph")
    threshold = math.radians(outlier_deg)
    yaws: dict[int, float] = {}
    for round_idx in range(rounds):
        yaws = {}
        for comp in connected_components(graph):
            yaws.update(_solve_component_yaws(comp, _component_edges(graph, comp)))
        removed = [
            key
            for key, est in graph.sorted_edges()
            if abs(wrap_angle(yaws[key[0]] - yaws[key[1]] - est.pose.yaw)) > threshold
        ]
        if not removed:
            break
        logger.info(
            "rotation averaging round %d removed %d edge(s)", round_idx + 1, len(removed)
        )
        graph = graph.without_edges(removed)
    return yaws, graph


def translation_averaging(
    graph: ViewGraph,
    yaws: dict[int, float],
    *,
    rounds: int = DEFAULT_ROUNDS,
    outlier_m: float = DEFAULT_TRANSLATION_OUTLIER_M,
) -> tuple[dict[int, Vec3], ViewGraph]:
    """Per-frame camera centers at fixed metric scale, with outlier rounds.

    Solves the linear least squares over centers with one constraint
    c_i - c_j = R_y(phi_j) @ t_ij per edge, anchoring one center per component
    at the origin; edges whose constraint residual norm exceeds ``outlier_m``
    are dropped between rounds.

    Raises:
        EmptyGraph: the graph has no nodes.
        UnderconstrainedComponent: a graph node is missing its yaw estimate.
    """
    if not graph.nodes:
        raise EmptyGraph("translation averaging needs a non-empty graph")
    missing = sorted(n for n in graph.nodes if n not in yaws)
    if missing:
        raise UnderconstrainedComponent(f"no yaw estimate for frames {missing}")
    centers: dict[int, Vec3] = {}
    for round_idx in range(rounds):
        centers = {}
        for comp in connected_components(graph):
            edges = _component_edges(graph, comp)
            root = _spanning_tree_root(comp, edges)
            rows = [k for k, _ in edges]
            rhs = np.array(
                [rot_y(yaws[j]) @ est.pose.t for (i, j), est in edges]
            ).reshape(len(rows), 3)
            centers.update(_solve_anchored_least_squares(comp, rows, rhs, root))
        removed = []
        for (i, j), est in graph.sorted_edges():
            residual = (centers[i] - centers[j]) - rot_y(yaws[j]) @ est.pose.t
            if float(np.linalg.norm(residual)) > outlier_m:
                removed.append((i, j))
        if not removed:
            break
        logger.info(
            "translation averaging round %d removed %d edge(s)",
            round_idx + 1,
            len(removed),
        )
        graph = graph.without_edges(removed)
    return centers, graph


def register(
    graph: ViewGraph, yaws: dict[int, float], centers: dict[int, Vec3]
) -> GlobalPoses:
    """Poses for the largest connected component of the filtered graph.

    Ties between equal-size components break toward the smallest minimum frame
    id. An empty graph registers nothing.
    """
    comps = connected_components(graph)
    if not comps:
        return GlobalPoses({}, frozenset())
    winner = comps[0]
    poses = {
        n: SE3Pose.from_yaw(yaws[n], np.asarray(centers[n], dtype=float))
        for n in winner
    }
    return GlobalPoses(poses, frozenset(winner))
