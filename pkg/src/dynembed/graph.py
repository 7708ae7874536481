"""Association structure and attention-strength bookkeeping.

``GraphState`` holds a growth-only undirected adjacency A together with
a right-stochastic attention matrix S.  S's support tracks A: the row of
a connected node is a probability vector over its neighbors, the row of
an isolated node is all zero, and the diagonal is always zero.

Rows of S live either in one dense (n, n) array or in per-row sparse
maps; the arithmetic gathers each touched row into a small array sorted
by neighbor id before operating, so the two storage modes produce
bit-identical numbers.
"""
from __future__ import annotations

import numpy as np

from .events import ASSOCIATION, COMMUNICATION, Event

DENSE_LIMIT = 4096


class GraphStateError(ValueError):
    """Inconsistent event applied to the graph state."""


class GraphState:
    def __init__(self, n: int, dense: bool | None = None):
        if n < 0:
            raise ValueError("negative node count")
        self.n = n
        self.dense = (n <= DENSE_LIMIT) if dense is None else dense
        self._adj: list[set[int]] = [set() for _ in range(n)]
        if self.dense:
            self._s: np.ndarray | None = np.zeros((n, n), dtype=np.float64)
            self._rows = None
        else:
            self._s = None
            self._rows: list[dict[int, float]] | None = [dict() for _ in range(n)]

    # ---- row access ------------------------------------------------

    def neighborhood(self, u: int) -> set[int]:
        if not 0 <= u < self.n:
            raise GraphStateError(f"node {u} out of range (n={self.n})")
        return set(self._adj[u])

    def neighbors_sorted(self, u: int) -> list[int]:
        return sorted(self._adj[u])

    def degree(self, u: int) -> int:
        return len(self._adj[u])

    def s_value(self, u: int, v: int) -> float:
        if self.dense:
            return float(self._s[u, v])
        return self._rows[u].get(v, 0.0)

    def s_entries(self, u: int) -> tuple[list[int], np.ndarray]:
        """Neighbor ids (ascending) and the matching S row values."""
        nbrs = self.neighbors_sorted(u)
        return nbrs, self._gather(u, nbrs)

    def _gather(self, j: int, nbrs: list[int]) -> np.ndarray:
        if self.dense:
            return self._s[j, nbrs].astype(np.float64, copy=True) if nbrs else np.zeros(0)
        row = self._rows[j]
        return np.array([row.get(i, 0.0) for i in nbrs], dtype=np.float64)

    def _scatter(self, j: int, nbrs: list[int], vals: np.ndarray) -> None:
        if self.dense:
            self._s[j, :] = 0.0
            self._s[j, nbrs] = vals
        else:
            self._rows[j] = {i: float(x) for i, x in zip(nbrs, vals)}

    # ---- construction ----------------------------------------------

    def copy(self) -> "GraphState":
        out = GraphState.__new__(GraphState)
        out.n = self.n
        out.dense = self.dense
        out._adj = [set(s) for s in self._adj]
        out._s = None if self._s is None else self._s.copy()
        out._rows = None if self._rows is None else [dict(r) for r in self._rows]
        return out

    def grow(self, new_n: int) -> None:
        """Extend the id space with isolated nodes; existing entries untouched."""
        if new_n < self.n:
            raise GraphStateError(f"cannot shrink state from {self.n} to {new_n}")
        if new_n == self.n:
            return
        extra = new_n - self.n
        self._adj.extend(set() for _ in range(extra))
        if self.dense:
            s = np.zeros((new_n, new_n), dtype=np.float64)
            s[: self.n, : self.n] = self._s
            self._s = s
        else:
            self._rows.extend(dict() for _ in range(extra))
        self.n = new_n

    # ---- the per-event update --------------------------------------

    def apply_event(self, e: Event, lam: float) -> None:
        """Advance A and S past one event.

        ``lam`` is the event's intensity evaluated on the pre-event
        state.  Communication over a non-edge leaves both matrices
        untouched; communication over an edge bumps the partner entry of
        both endpoint rows to 1/deg + lam and renormalizes; a new
        association additionally shrinks the other entries by the change
        in the uniform share before renormalizing.  Renormalization is
        L1 after clamping negatives to zero, which keeps every touched
        row stochastic.
        """
        u, v, l, k = e.u, e.v, e.l, e.k
        if max(u, v) >= self.n:
            raise GraphStateError(f"event touches node {max(u, v)} beyond state size {self.n}")
        linked = v in self._adj[u]
        if k == ASSOCIATION and linked:
            raise GraphStateError(f"association event on already-associated pair ({u},{v})")
        if l != (1 if linked else 0):
            raise GraphStateError(
                f"event flag l={l} disagrees with adjacency for pair ({u},{v})")
        if lam < 0.0:
            raise GraphStateError("negative event intensity")

        pre_deg = {u: len(self._adj[u]), v: len(self._adj[v])}
        if k == ASSOCIATION:
            self._adj[u].add(v)
            self._adj[v].add(u)

        if k == COMMUNICATION and l == 0:
            return

        for j, partner in ((u, v), (v, u)):
            nbrs = self.neighbors_sorted(j)  # post-event neighborhood
            b = 1.0 / len(nbrs)
            vals = self._gather(j, nbrs)
            pos = nbrs.index(partner)
            if k == COMMUNICATION:
                vals[pos] = b + lam
            else:
                # new association: old entries give up the drop in the
                # uniform share; a first edge has nothing to shrink
                x = (1.0 / pre_deg[j] - b) if pre_deg[j] > 0 else 0.0
                nz = vals > 0.0
                vals[nz] -= x
                vals[pos] = b + lam
            vals = np.maximum(vals, 0.0)
            vals /= np.add.reduce(vals)
            self._scatter(j, nbrs, vals)

    # ---- export / checkpoint ---------------------------------------

    def adjacency_matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int8)
        for u, nbrs in enumerate(self._adj):
            for v in nbrs:
                a[u, v] = 1
        return a

    def s_matrix(self) -> np.ndarray:
        if self.dense:
            return self._s.copy()
        s = np.zeros((self.n, self.n), dtype=np.float64)
        for u, row in enumerate(self._rows):
            for v, x in row.items():
                s[u, v] = x
        return s

    def save(self, path: str) -> None:
        """Checkpoint as a sorted edge list plus (row, col, value) triples."""
        with open(path, "w") as fh:
            fh.write(f"dynembed-graph-state v1 n={self.n} dense={int(self.dense)}\n")
            fh.write("A\n")
            for u in range(self.n):
                for v in sorted(self._adj[u]):
                    if u < v:
                        fh.write(f"{u} {v}\n")
            fh.write("S\n")
            for u in range(self.n):
                nbrs, vals = self.s_entries(u)
                for v, x in zip(nbrs, vals):
                    if x != 0.0:
                        fh.write(f"{u} {v} {float(x)!r}\n")

    @classmethod
    def load(cls, path: str) -> "GraphState":
        with open(path) as fh:
            header = fh.readline().split()
            if not header or header[0] != "dynembed-graph-state" or header[1] != "v1":
                raise ValueError(f"{path}: not a graph-state checkpoint")
            meta = dict(p.split("=") for p in header[2:])
            state = cls(int(meta["n"]), dense=bool(int(meta.get("dense", 1))))
            section = None
            for line in fh:
                line = line.strip()
                if line in ("A", "S"):
                    section = line
                    continue
                if not line:
                    continue
                parts = line.split()
                if section == "A":
                    u, v = int(parts[0]), int(parts[1])
                    state._adj[u].add(v)
                    state._adj[v].add(u)
                elif section == "S":
                    u, v, x = int(parts[0]), int(parts[1]), float(parts[2])
                    if state.dense:
                        state._s[u, v] = x
                    else:
                        state._rows[u][v] = x
        return state


def init_state(a0, dense: bool | None = None) -> GraphState:
    """Build the state from an initial adjacency.

    Each connected node starts with a uniform attention row over its
    neighbors (1/degree each); isolated nodes start all-zero.
    """
    a0 = np.asarray(a0)
    n = a0.shape[0]
    if a0.shape != (n, n):
        raise GraphStateError(f"adjacency must be square, got {a0.shape}")
    if not np.array_equal(a0, a0.T):
        raise GraphStateError("initial adjacency must be symmetric")
    if np.any(np.diag(a0) != 0):
        raise GraphStateError("initial adjacency must have a zero diagonal")
    state = GraphState(n, dense=dense)
    for u in range(n):
        nbrs = sorted(int(i) for i in np.nonzero(a0[u])[0])
        for i in nbrs:
            state._adj[u].add(i)
    for u in range(n):
        nbrs = state.neighbors_sorted(u)
        if nbrs:
            state._scatter(u, nbrs, np.full(len(nbrs), 1.0 / len(nbrs)))
    return state
