"""s-t min-cut on voxel graphs.

``solve_maxflow`` implements the Boykov-Kolmogorov augmenting-path algorithm
(two search trees grown from the terminals, orphan adoption, node reuse
across augmentations). The inner loop is compiled with numba.
``brute_force_mincut`` enumerates all labelings and serves as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import DataError, NumericalError
from .volume import LabelMask

EPS = 1e-12


@dataclass(frozen=True)
class GridGraph:
    """Voxel graph with two terminals.

    Node i has source capacity ``source_caps[i]`` (e_sx) and sink capacity
    ``sink_caps[i]`` (e_xt). ``edges[k] = (u, v)`` is an undirected n-link of
    capacity ``edge_caps[k]`` in both directions. ``shape`` (z, y, x), when
    set, maps node indices to voxels in C order.
    """

    source_caps: np.ndarray
    sink_caps: np.ndarray
    edges: np.ndarray
    edge_caps: np.ndarray
    shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        s = np.ascontiguousarray(self.source_caps, dtype=np.float64)
        t = np.ascontiguousarray(self.sink_caps, dtype=np.float64)
        e = np.ascontiguousarray(self.edges, dtype=np.int64).reshape(-1, 2)
        c = np.ascontiguousarray(self.edge_caps, dtype=np.float64).ravel()
        n = s.size
        if t.size != n or e.shape[0] != c.size:
            raise DataError("graph arrays have inconsistent lengths")
        for name, a in (("source", s), ("sink", t), ("edge", c)):
            if a.size and (not np.isfinite(a).all() or a.min() < 0):
                raise DataError(f"{name} capacities must be finite and non-negative")
        if e.size and (e.min() < 0 or e.max() >= n or (e[:, 0] == e[:, 1]).any()):
            raise DataError("edge endpoints must be distinct valid node indices")
        if self.shape is not None and int(np.prod(self.shape)) != n:
            raise DataError("graph shape does not match node count")
        object.__setattr__(self, "source_caps", s)
        object.__setattr__(self, "sink_caps", t)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "edge_caps", c)

    @property
    def n_nodes(self) -> int:
        return self.source_caps.size

    def dump(self, path) -> None:
        """Text dump: ``nodes N``, one ``t i e_sx e_xt`` line per node, one ``n u v c`` per n-link."""
        lines = [f"nodes {self.n_nodes}"]
        lines += [f"t {i} {s!r} {t!r}" for i, (s, t) in
                  enumerate(zip(self.source_caps.tolist(), self.sink_caps.tolist()))]
        lines += [f"n {u} {v} {c!r}" for (u, v), c in zip(self.edges.tolist(), self.edge_caps.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load_dump(cls, path) -> "GridGraph":
        lines = Path(path).read_text().split("\n")
        try:
            n = int(lines[0].split()[1])
            s = np.zeros(n)
            t = np.zeros(n)
            edges, caps = [], []
            for line in lines[1:]:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "t":
                    i = int(parts[1])
                    s[i], t[i] = float(parts[2]), float(parts[3])
                elif parts[0] == "n":
                    edges.append((int(parts[1]), int(parts[2])))
                    caps.append(float(parts[3]))
                else:
                    raise ValueError(f"unknown record {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            raise DataError(f"malformed graph dump {path}: {exc}") from exc
        return cls(s, t, np.array(edges, dtype=np.int64).reshape(-1, 2), np.array(caps))


@dataclass(frozen=True)
class CutResult:
    flow: float
    labels: np.ndarray  # uint8 per node, 1 = source side (object)
    shape: tuple[int, int, int] | None = None

    def mask(self, spacing=(1.0, 1.0, 1.0)) -> LabelMask:
        if self.shape is None:
            raise DataError("cut result has no grid shape")
        return LabelMask(self.labels.reshape(self.shape), spacing)


def cut_cost(graph: GridGraph, labels: np.ndarray) -> float:
    """Cost of the s-t cut in which nodes labelled 1 are on the source side."""
    lab = np.asarray(labels).ravel().astype(bool)
    cost = graph.source_caps[~lab].sum() + graph.sink_caps[lab].sum()
    if graph.edges.size:
        cut = lab[graph.edges[:, 0]] != lab[graph.edges[:, 1]]
        cost += graph.edge_caps[cut].sum()
    return float(cost)


# --------------------------------------------------------------------------
# Boykov-Kolmogorov
# --------------------------------------------------------------------------

# parent[] sentinels; non-negative values are arc indices
_NONE = -1
_TERMINAL = -2
_ORPHAN = -3
_INF_DIST = 1 << 30


@numba.njit(cache=True)
def _bk(first, adj, head, rcap, tr, eps):
    """Max-flow on paired arcs; arc a and a ^ 1 are mutual reverses.

    adj[first[v]:first[v+1]] lists the outgoing arc ids of v. ``tr[v] > 0`` is residual
    capacity from the source, ``tr[v] < 0`` to the sink. Mutates rcap and
    tr and returns the pushed flow.
    """
    n = tr.size
    parent = np.full(n, _NONE, np.int64)
    is_sink = np.zeros(n, np.bool_)
    ts = np.zeros(n, np.int64)
    dist = np.zeros(n, np.int64)
    in_active = np.zeros(n, np.bool_)
    active = np.empty(n + 1, np.int64)
    a_head = 0
    a_tail = 0
    orphans = np.empty(n + 1, np.int64)
    flow = 0.0
    time = 0

    for v in range(n):
        if tr[v] > eps:
            parent[v] = _TERMINAL
            is_sink[v] = False
        elif tr[v] < -eps:
            parent[v] = _TERMINAL
            is_sink[v] = True
        else:
            continue
        dist[v] = 1
        in_active[v] = True
        active[a_tail] = v
        a_tail = (a_tail + 1) % (n + 1)

    current = -1
    while True:
        # pick an active node, reusing the current one while it still yields paths
        i = -1
        if current >= 0 and parent[current] != _NONE:
            i = current
        else:
            current = -1
            while a_head != a_tail:
                v = active[a_head]
                a_head = (a_head + 1) % (n + 1)
                in_active[v] = False
                if parent[v] != _NONE:
                    i = v
                    break
            if i < 0:
                break

        # grow the tree of i
        middle = -1
        if not is_sink[i]:
            for q in range(first[i], first[i + 1]):
                a = adj[q]
                if rcap[a] > eps:
                    j = head[a]
                    if parent[j] == _NONE:
                        is_sink[j] = False
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_active[j]:
                            in_active[j] = True
                            active[a_tail] = j
                            a_tail = (a_tail + 1) % (n + 1)
                    elif is_sink[j]:
                        middle = a
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
        else:
            for q in range(first[i], first[i + 1]):
                a = adj[q]
                if rcap[a ^ 1] > eps:
                    j = head[a]
                    if parent[j] == _NONE:
                        is_sink[j] = True
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_active[j]:
                            in_active[j] = True
                            active[a_tail] = j
                            a_tail = (a_tail + 1) % (n + 1)
                    elif not is_sink[j]:
                        middle = a ^ 1
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1

        time += 1
        if middle < 0:
            current = -1
            continue
        current = i

        # ---- augment along source-path + middle + sink-path
        bottleneck = rcap[middle]
        v = head[middle ^ 1]
        while parent[v] != _TERMINAL:
            a = parent[v]
            if rcap[a ^ 1] < bottleneck:
                bottleneck = rcap[a ^ 1]
            v = head[a]
        if tr[v] < bottleneck:
            bottleneck = tr[v]
        v = head[middle]
        while parent[v] != _TERMINAL:
            a = parent[v]
            if rcap[a] < bottleneck:
                bottleneck = rcap[a]
            v = head[a]
        if -tr[v] < bottleneck:
            bottleneck = -tr[v]

        rcap[middle ^ 1] += bottleneck
        rcap[middle] -= bottleneck
        o_head = 0
        o_tail = 0
        v = head[middle ^ 1]
        while parent[v] != _TERMINAL:
            a = parent[v]
            rcap[a] += bottleneck
            rcap[a ^ 1] -= bottleneck
            nxt = head[a]
            if rcap[a ^ 1] <= eps:
                parent[v] = _ORPHAN
                orphans[o_tail % (n + 1)] = v
                o_tail += 1
            v = nxt
        tr[v] -= bottleneck
        if tr[v] <= eps:
            parent[v] = _ORPHAN
            orphans[o_tail % (n + 1)] = v
            o_tail += 1
        v = head[middle]
        while parent[v] != _TERMINAL:
            a = parent[v]
            rcap[a ^ 1] += bottleneck
            rcap[a] -= bottleneck
            nxt = head[a]
            if rcap[a] <= eps:
                parent[v] = _ORPHAN
                orphans[o_tail % (n + 1)] = v
                o_tail += 1
            v = nxt
        tr[v] += bottleneck
        if tr[v] >= -eps:
            parent[v] = _ORPHAN
            orphans[o_tail % (n + 1)] = v
            o_tail += 1
        flow += bottleneck

        # ---- adopt orphans (FIFO)
        time += 1
        while o_head < o_tail:
            i2 = orphans[o_head % (n + 1)]
            o_head += 1
            sink_side = is_sink[i2]
            best = -1
            best_d = _INF_DIST
            for q in range(first[i2], first[i2 + 1]):
                a = adj[q]
                cap = rcap[a] if sink_side else rcap[a ^ 1]
                if cap <= eps:
                    continue
                j = head[a]
                if parent[j] == _NONE or is_sink[j] != sink_side:
                    continue
                # walk to the root, checking the path does not end at an orphan
                d = 0
                k = j
                while True:
                    if ts[k] == time:
                        d += dist[k]
                        break
                    p = parent[k]
                    d += 1
                    if p == _TERMINAL:
                        ts[k] = time
                        dist[k] = 1
                        break
                    if p == _ORPHAN:
                        d = _INF_DIST
                        break
                    k = head[p]
                if d < _INF_DIST:
                    if d < best_d:
                        best = a
                        best_d = d
                    k = j
                    while ts[k] != time:
                        ts[k] = time
                        dist[k] = d
                        d -= 1
                        k = head[parent[k]]
            if best >= 0:
                parent[i2] = best
                ts[i2] = time
                dist[i2] = best_d + 1
            else:
                for q in range(first[i2], first[i2 + 1]):
                    a = adj[q]
                    j = head[a]
                    if parent[j] == _NONE or is_sink[j] != sink_side:
                        continue
                    cap = rcap[a] if sink_side else rcap[a ^ 1]
                    if cap > eps and not in_active[j]:
                        in_active[j] = True
                        active[a_tail] = j
                        a_tail = (a_tail + 1) % (n + 1)
                    p = parent[j]
                    if p >= 0 and head[p] == i2:
                        parent[j] = _ORPHAN
                        orphans[o_tail % (n + 1)] = j
                        o_tail += 1
                parent[i2] = _NONE
                if i2 == current:
                    current = -1

    return flow


@numba.njit(cache=True)
def _source_reachable(first, adj, head, rcap, tr, eps):
    n = tr.size
    seen = np.zeros(n, np.uint8)
    stack = np.empty(n, np.int64)
    top = 0
    for v in range(n):
        if tr[v] > eps:
            seen[v] = 1
            stack[top] = v
            top += 1
    while top > 0:
        top -= 1
        v = stack[top]
        for q in range(first[v], first[v + 1]):
            a = adj[q]
            if rcap[a] > eps:
                j = head[a]
                if seen[j] == 0:
                    seen[j] = 1
                    stack[top] = j
                    top += 1
    return seen


def _grid_arcs(graph: GridGraph):
    """Arc k*2 is u -> v and k*2+1 is v -> u for edge k; adj groups arc ids by tail."""
    n = graph.n_nodes
    m = graph.edges.shape[0]
    u = graph.edges[:, 0]
    v = graph.edges[:, 1]
    head = np.empty(2 * m, np.int64)
    head[0::2], head[1::2] = v, u
    rcap = np.repeat(graph.edge_caps, 2)
    tails = np.empty(2 * m, np.int64)
    tails[0::2], tails[1::2] = u, v
    order = np.argsort(tails, kind="stable")
    first = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(tails, minlength=n), out=first[1:])
    return first, order, head, rcap


def solve_maxflow(graph: GridGraph) -> CutResult:
    """Maximum flow and the minimum cut given by source reachability.

    Nodes reachable from the source in the final residual graph are labelled
    1. The flow value is checked against the cost of the returned cut.
    """
    n = graph.n_nodes
    if n == 0:
        return CutResult(0.0, np.zeros(0, np.uint8), graph.shape)
    first, adj, head, rcap = _grid_arcs(graph)
    tr = graph.source_caps - graph.sink_caps
    base = float(np.minimum(graph.source_caps, graph.sink_caps).sum())
    flow = base + _bk(first, adj, head, rcap, tr, EPS)
    labels = _source_reachable(first, adj, head, rcap, tr, EPS)
    cost = cut_cost(graph, labels)
    if abs(cost - flow) > 1e-9 * max(1.0, abs(flow)):
        raise NumericalError(f"flow {flow} does not match cut cost {cost}")
    return CutResult(flow, labels, graph.shape)


def brute_force_mincut(graph: GridGraph, max_nodes: int = 20) -> CutResult:
    """Exhaustive minimum cut; ties resolve to the lexicographically smallest labeling.

    Labelings are compared as tuples ``(l_0, l_1, ..., l_{n-1})``. Costs within
    1e-12 (relative) of the minimum count as ties.
    """
    n = graph.n_nodes
    if n > max_nodes:
        raise DataError(f"brute force limited to {max_nodes} nodes, got {n}")
    if n == 0:
        return CutResult(0.0, np.zeros(0, np.uint8), graph.shape)
    codes = np.arange(2 ** n, dtype=np.int64)
    # node i is the (n-1-i)-th bit so integer order equals lexicographic order
    lab = ((codes[:, None] >> (n - 1 - np.arange(n))) & 1).astype(bool)
    cost = (~lab).astype(np.float64) @ graph.source_caps + lab.astype(np.float64) @ graph.sink_caps
    if graph.edges.size:
        cut = lab[:, graph.edges[:, 0]] != lab[:, graph.edges[:, 1]]
        cost += cut.astype(np.float64) @ graph.edge_caps
    best = cost.min()
    k = int(np.flatnonzero(cost <= best + 1e-12 * max(1.0, abs(best)))[0])
    return CutResult(float(cost[k]), lab[k].astype(np.uint8), graph.shape)
