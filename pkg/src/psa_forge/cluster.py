"""Density-based clustering of non-ground points.

Two interchangeable algorithms are provided:

* :func:`dbscan` -- classic density clustering with exact neighborhood
  queries over a uniform voxel hash grid (cell edge = eps). Semantics are
  fully deterministic and order-independent: core components are numbered
  by their first core point, and a border point reachable from several
  clusters joins the cluster of its lowest-index core neighbor.

* :func:`hdbscan` -- hierarchical density clustering. A mutual-reachability
  minimum spanning tree is condensed against ``min_cluster_size``; leaf
  clusters born below ``selection_eps`` are merged upward, and a point
  belongs to its selected cluster iff it stayed connected to it at a merge
  scale <= ``selection_eps``. On dense, well-separated data this reproduces
  dbscan's partition at eps = selection_eps.

Both are O(n^2) at worst (hdbscan always); intended for desk-scale frames.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

__all__ = ["dbscan", "hdbscan", "filter_small_clusters", "EPS_PRESETS"]

# Named clustering-scale presets for common dataset geometries. Always
# overridable from the CLI.
EPS_PRESETS = {"waymo": 0.2, "nuscenes": 0.3, "semantickitti": 0.25}

_TINY = 1e-12


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must have shape (n, 3)")
    return pts


def _grid_cells(pts: np.ndarray, eps: float) -> dict[tuple[int, int, int], np.ndarray]:
    keys = np.floor(pts / eps).astype(np.int64)
    cells: dict[tuple[int, int, int], list[int]] = defaultdict(list)
    for i, key in enumerate(map(tuple, keys)):
        cells[key].append(i)
    return {k: np.asarray(v, dtype=np.int64) for k, v in cells.items()}


_STENCIL = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
]


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering; returns per-point labels (-1 noise, else 0..K-1).

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Labels are compact and numbered by first core point.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = _as_points(points)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int32)
    if n == 0:
        return labels

    cells = _grid_cells(pts, eps)
    eps2 = eps * eps
    candidates = {}
    for key in cells:
        nb = [cells[(key[0] + o[0], key[1] + o[1], key[2] + o[2])]
              for o in _STENCIL
              if (key[0] + o[0], key[1] + o[1], key[2] + o[2]) in cells]
        candidates[key] = np.concatenate(nb)

    core = np.zeros(n, dtype=bool)
    neighbor_lists: list[np.ndarray | None] = [None] * n
    for key, idx in cells.items():
        cand = candidates[key]
        d2 = ((pts[idx][:, None, :] - pts[cand][None, :, :]) ** 2).sum(-1)
        within = d2 <= eps2
        for row, gi in enumerate(idx):
            nbrs = cand[within[row]]
            neighbor_lists[gi] = nbrs
            core[gi] = len(nbrs) >= min_pts

    parent = np.arange(n)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for i in range(n):
        if not core[i]:
            continue
        for j in neighbor_lists[i]:
            if core[j]:
                ri, rj = find(i), int(find(int(j)))
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    next_label = 0
    root_label: dict[int, int] = {}
    for i in range(n):
        if core[i]:
            root = find(i)
            if root not in root_label:
                root_label[root] = next_label
                next_label += 1
            labels[i] = root_label[root]
    for i in range(n):
        if not core[i]:
            core_nbrs = neighbor_lists[i][core[neighbor_lists[i]]]
            if len(core_nbrs):
                labels[i] = labels[core_nbrs.min()]
    return labels


def filter_small_clusters(labels, min_size: int = 20) -> np.ndarray:
    """Relabel clusters smaller than ``min_size`` to -1 and recompact.

    Surviving clusters are renumbered 0..K'-1 in order of first appearance.
    Idempotent.
    """
    lab = np.asarray(labels, dtype=np.int32).copy()
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    if lab.size == 0:
        return lab
    ids, counts = np.unique(lab[lab >= 0], return_counts=True)
    keep = set(ids[counts >= min_size].tolist())
    remap: dict[int, int] = {}
    out = np.full_like(lab, -1)
    for i, v in enumerate(lab):
        if v >= 0 and v in keep:
            if v not in remap:
                remap[v] = len(remap)
            out[i] = remap[v]
    return out


# --- hdbscan internals -----------------------------------------------------


def _core_distances(pts: np.ndarray, k: int) -> np.ndarray:
    """Distance to the k-th nearest neighbor, the point itself counting first."""
    n = len(pts)
    out = np.empty(n)
    chunk = max(1, int(2e7) // max(n, 1))
    for s in range(0, n, chunk):
        d2 = ((pts[s : s + chunk, None, :] - pts[None, :, :]) ** 2).sum(-1)
        out[s : s + chunk] = np.sqrt(np.partition(d2, k - 1, axis=1)[:, k - 1])
    return out


def _mst_mutual_reachability(pts: np.ndarray, core_d: np.ndarray) -> list[tuple[int, int, float]]:
    """Prim's MST under d_mreach(a, b) = max(core(a), core(b), d(a, b))."""
    n = len(pts)
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_from = np.full(n, -1, dtype=np.int64)
    in_tree[0] = True
    current = 0
    edges: list[tuple[int, int, float]] = []
    for _ in range(n - 1):
        d = np.sqrt(((pts - pts[current]) ** 2).sum(-1))
        mr = np.maximum(np.maximum(d, core_d), core_d[current])
        upd = (~in_tree) & (mr < best)
        best[upd] = mr[upd]
        best_from[upd] = current
        masked = np.where(in_tree, np.inf, best)
        j = int(np.argmin(masked))
        edges.append((int(best_from[j]), j, float(masked[j])))
        in_tree[j] = True
        current = j
    return edges


def _single_linkage(edges: list[tuple[int, int, float]], n: int):
    """Merge MST edges ascending; returns (left, right, dist, size) arrays.

    Internal node t (t = 0..n-2) gets id n + t; leaves are point ids.
    """
    order = sorted(range(len(edges)), key=lambda e: (edges[e][2], edges[e][0], edges[e][1]))
    parent = np.arange(n)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    node_of = np.arange(n, dtype=np.int64)  # root point -> current node id
    size_of = np.ones(n, dtype=np.int64)
    left = np.empty(n - 1, dtype=np.int64)
    right = np.empty(n - 1, dtype=np.int64)
    dist = np.empty(n - 1)
    size = np.empty(n - 1, dtype=np.int64)
    for t, e in enumerate(order):
        a, b, w = edges[e]
        ra, rb = find(a), find(b)
        left[t], right[t] = node_of[ra], node_of[rb]
        dist[t] = w
        size[t] = size_of[ra] + size_of[rb]
        parent[rb] = ra
        node_of[ra] = n + t
        size_of[ra] = size[t]
    return left, right, dist, size


def _condense(left, right, dist, size, n: int, mcs: int):
    """Condense the single-linkage tree against the minimum cluster size.

    Returns per-point exit records (cluster id, point id, exit lambda) and
    the cluster tree (parent id, child id, birth lambda). The root cluster
    has id 0 and birth lambda 0 (infinite birth distance). Lambda = 1/dist.
    """

    def node_size(node: int) -> int:
        return 1 if node < n else int(size[node - n])

    def leaves(node: int) -> list[int]:
        out, stack = [], [node]
        while stack:
            v = stack.pop()
            if v < n:
                out.append(v)
            else:
                stack.append(int(left[v - n]))
                stack.append(int(right[v - n]))
        return out

    pt_cluster: list[int] = []
    pt_id: list[int] = []
    pt_lambda: list[float] = []
    cl_parent: list[int] = []
    cl_child: list[int] = []
    cl_lambda: list[float] = []

    root = n + (n - 2)
    relabel = {root: 0}
    birth_lambda = {0: 0.0}
    next_cid = 1
    queue = [root]
    while queue:
        node = queue.pop()
        cid = relabel[node]
        l, r = int(left[node - n]), int(right[node - n])
        lam = 1.0 / max(float(dist[node - n]), _TINY)
        sl, sr = node_size(l), node_size(r)
        if sl >= mcs and sr >= mcs:
            for child in (l, r):
                relabel[child] = next_cid
                cl_parent.append(cid)
                cl_child.append(next_cid)
                cl_lambda.append(lam)
                birth_lambda[next_cid] = lam
                next_cid += 1
                queue.append(child)
        else:
            for child, s in ((l, sl), (r, sr)):
                if s >= mcs:
                    relabel[child] = cid
                    queue.append(child)
                else:
                    for p in leaves(child):
                        pt_cluster.append(cid)
                        pt_id.append(p)
                        pt_lambda.append(lam)
    return (
        np.asarray(pt_cluster, dtype=np.int64),
        np.asarray(pt_id, dtype=np.int64),
        np.asarray(pt_lambda),
        np.asarray(cl_parent, dtype=np.int64),
        np.asarray(cl_child, dtype=np.int64),
        np.asarray(cl_lambda),
        birth_lambda,
    )


def _select_clusters(cl_parent, cl_child, birth_lambda, selection_eps: float) -> set[int]:
    """Epsilon-merged leaf selection.

    Leaves born at a split distance < selection_eps climb to the lowest
    ancestor born at >= selection_eps (the root's birth distance is
    infinite, so climbs terminate). The result is an antichain because
    birth distances never increase going down the tree.
    """
    parent_of = {int(c): int(p) for p, c in zip(cl_parent, cl_child)}
    has_children = set(int(p) for p in cl_parent)
    all_ids = set(birth_lambda)
    leaves = sorted(all_ids - has_children)

    def birth_dist(cid: int) -> float:
        lam = birth_lambda[cid]
        return np.inf if lam == 0.0 else 1.0 / lam

    selected: set[int] = set()
    for leaf in leaves:
        c = leaf
        while birth_dist(c) < selection_eps:
            c = parent_of[c]
        selected.add(c)
    return selected


def hdbscan(
    points,
    min_cluster_size: int = 20,
    min_samples: int | None = None,
    selection_eps: float = 0.25,
) -> np.ndarray:
    """Hierarchical density clustering; labels -1 noise, else 0..K-1.

    ``min_samples`` (defaulting to ``min_cluster_size``) sets the core
    distance neighborhood; ``selection_eps`` is the scale at which leaf
    clusters merge and the maximum merge scale at which a point still
    counts as a member. Every returned cluster has at least
    ``min_cluster_size`` members.
    """
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be >= 2")
    if selection_eps <= 0:
        raise ValueError("selection_eps must be positive")
    pts = _as_points(points)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int32)
    if n < min_cluster_size or n < 2:
        return labels
    k = min(min_samples if min_samples is not None else min_cluster_size, n)

    core_d = _core_distances(pts, k)
    edges = _mst_mutual_reachability(pts, core_d)
    left, right, dist, size = _single_linkage(edges, n)
    pt_cluster, pt_id, pt_lambda, cl_parent, cl_child, cl_lambda, birth_lambda = _condense(
        left, right, dist, size, n, min_cluster_size
    )
    selected = _select_clusters(cl_parent, cl_child, birth_lambda, selection_eps)

    parent_of = {int(c): int(p) for p, c in zip(cl_parent, cl_child)}
    sel_of: dict[int, int] = {}

    def selected_ancestor(cid: int) -> int:
        if cid in sel_of:
            return sel_of[cid]
        chain = []
        c: int | None = cid
        found = -1
        while c is not None:
            if c in sel_of:
                found = sel_of[c]
                break
            chain.append(c)
            if c in selected:
                found = c
                break
            c = parent_of.get(c)
        for v in chain:
            sel_of[v] = found
        return found

    max_exit = selection_eps
    for cid, p, lam in zip(pt_cluster, pt_id, pt_lambda):
        s = selected_ancestor(int(cid))
        if s >= 0 and 1.0 / lam <= max_exit:
            labels[p] = s
    return filter_small_clusters(labels, min_cluster_size)
