"""The learned functions: compatibility scores, time-scale intensities,
attentive neighborhood aggregation, and the recurrent per-event update.

Two execution paths share the same arithmetic.  The plain-numpy path
(functions below, used for inference, ranking, and test-time replay)
and the taped path inside :class:`ReplayContext` (used for training)
apply identical primitive operations in identical order, so replaying a
log through either path yields bit-identical state.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff
from .autodiff import Tape
from .events import Event
from .graph import GraphState
from .numerics import inverse_softplus, scaled_softplus, softmax, softplus

CHECKPOINT_FORMAT = "dynembed-checkpoint"
CHECKPOINT_VERSION = 1

# parameter buffers that receive gradients, in a fixed canonical order
TRAINABLE_FIELDS = (
    "v_init", "w_struct", "w_rec", "w_t", "w_h", "b_h",
    "omega_0", "omega_1", "rho_0", "rho_1",
)


@dataclass
class ModelParams:
    """Full parameter set.

    ``v_init`` holds the initial embedding of every node known at
    training start; nodes that appear later start from the zero vector.
    The time-scale factors are kept positive by storing unconstrained
    ``rho_k`` and exposing ``psi_k = softplus(rho_k)``.
    """

    v_init: np.ndarray          # (n0, d)
    w_struct: np.ndarray        # (d, d)
    w_rec: np.ndarray           # (d, d)
    w_t: np.ndarray             # (d,)
    w_h: np.ndarray             # (d, d)
    b_h: np.ndarray             # (d,)
    omega_0: np.ndarray         # (2d,)
    omega_1: np.ndarray         # (2d,)
    rho_0: float
    rho_1: float
    time_scale: float = 1.0
    log_gaps: bool = False

    @property
    def d(self) -> int:
        return self.v_init.shape[1]

    @property
    def n0(self) -> int:
        return self.v_init.shape[0]

    @property
    def psi_0(self) -> float:
        return float(softplus(self.rho_0))

    @property
    def psi_1(self) -> float:
        return float(softplus(self.rho_1))

    def psi(self, k: int) -> float:
        return self.psi_1 if k else self.psi_0

    def omega(self, k: int) -> np.ndarray:
        return self.omega_1 if k else self.omega_0

    @classmethod
    def initialize(cls, n0: int, d: int, seed: int = 0,
                   time_scale: float = 1.0, log_gaps: bool = False) -> "ModelParams":
        """Uniform init in [-1/sqrt(d), 1/sqrt(d)]; psi_k starts at 1."""
        rng = np.random.default_rng(seed)
        s = 1.0 / math.sqrt(d)
        u = lambda *shape: rng.uniform(-s, s, size=shape)
        rho1 = inverse_softplus(1.0)
        return cls(
            v_init=u(n0, d), w_struct=u(d, d), w_rec=u(d, d), w_t=u(d),
            w_h=u(d, d), b_h=u(d), omega_0=u(2 * d), omega_1=u(2 * d),
            rho_0=rho1, rho_1=rho1, time_scale=time_scale, log_gaps=log_gaps,
        )

    def copy(self) -> "ModelParams":
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            kw[f.name] = v.copy() if isinstance(v, np.ndarray) else v
        return ModelParams(**kw)

    def named_trainables(self) -> dict[str, np.ndarray | float]:
        return {name: getattr(self, name) for name in TRAINABLE_FIELDS}

    def step(self, grads: "GradientSet", lr: float) -> "ModelParams":
        """One gradient-descent step; returns fresh buffers (no aliasing)."""
        kw = {}
        for name in TRAINABLE_FIELDS:
            p = getattr(self, name)
            g = getattr(grads, name)
            kw[name] = p - lr * g
        return replace(self, **kw)

    def save(self, path: str) -> None:
        doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
               "n0": self.n0, "d": self.d,
               "time_scale": self.time_scale, "log_gaps": self.log_gaps}
        for name in TRAINABLE_FIELDS:
            v = getattr(self, name)
            doc[name] = v.tolist() if isinstance(v, np.ndarray) else v
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "ModelParams":
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a parameter checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
        kw = {"rho_0": float(doc["rho_0"]), "rho_1": float(doc["rho_1"]),
              "time_scale": float(doc.get("time_scale", 1.0)),
              "log_gaps": bool(doc.get("log_gaps", False))}
        for name in TRAINABLE_FIELDS:
            if name in ("rho_0", "rho_1"):
                continue
            kw[name] = np.asarray(doc[name], dtype=np.float64)
        p = cls(**kw)
        if p.v_init.shape != (doc["n0"], doc["d"]):
            raise ValueError(f"{path}: header dims disagree with stored arrays")
        return p


@dataclass
class GradientSet:
    """One gradient buffer per trainable parameter, shape-matched."""

    v_init: np.ndarray
    w_struct: np.ndarray
    w_rec: np.ndarray
    w_t: np.ndarray
    w_h: np.ndarray
    b_h: np.ndarray
    omega_0: np.ndarray
    omega_1: np.ndarray
    rho_0: float
    rho_1: float

    def buffers(self):
        return [(name, getattr(self, name)) for name in TRAINABLE_FIELDS]

    def global_norm(self) -> float:
        total = 0.0
        for _, g in self.buffers():
            total += float(np.sum(np.square(g)))
        return math.sqrt(total)

    def scaled(self, c: float) -> "GradientSet":
        kw = {name: c * g for name, g in self.buffers()}
        return GradientSet(**kw)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for _, g in self.buffers())


@dataclass
class EmbeddingStore:
    """Current per-node representations plus each node's event clock."""

    z: np.ndarray                  # (n, d)
    last_event_time: np.ndarray    # (n,)
    has_event: np.ndarray          # (n,) bool; False while a row is still initial

    @classmethod
    def fresh(cls, params: ModelParams, n: int, t_start: float) -> "EmbeddingStore":
        z = np.zeros((n, params.d), dtype=np.float64)
        z[: min(n, params.n0)] = params.v_init[: min(n, params.n0)]
        return cls(z, np.full(n, float(t_start)), np.zeros(n, dtype=bool))

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(self.z.copy(), self.last_event_time.copy(), self.has_event.copy())

    def grow(self, new_n: int, t: float) -> None:
        if new_n < self.n:
            raise ValueError("cannot shrink the store")
        if new_n == self.n:
            return
        extra = new_n - self.n
        self.z = np.vstack([self.z, np.zeros((extra, self.z.shape[1]))])
        self.last_event_time = np.concatenate([self.last_event_time, np.full(extra, float(t))])
        self.has_event = np.concatenate([self.has_event, np.zeros(extra, dtype=bool)])

    def export_csv(self, path: str) -> None:
        d = self.z.shape[1]
        with open(path, "w") as fh:
            fh.write("node_id," + ",".join(f"z_{i+1}" for i in range(d)) + ",last_event_time\n")
            for v in range(self.n):
                row = ",".join(repr(float(x)) for x in self.z[v])
                fh.write(f"{v},{row},{float(self.last_event_time[v])!r}\n")


# ---------------------------------------------------------------------
# plain-numpy model functions (inference path)
# ---------------------------------------------------------------------

def transfer(psi: float, x) -> float | np.ndarray:
    """Time-scaled softplus psi*log(1 + exp(x/psi)).

    Strictly positive for all finite x, asymptotically linear for large
    x/psi, and overflow-safe in both tails.
    """
    if psi <= 0.0:
        raise ValueError(f"time-scale parameter must be positive, got {psi}")
    out = scaled_softplus(x, psi)
    return float(out) if np.ndim(out) == 0 else out


def compatibility(params: ModelParams, store: EmbeddingStore, u: int, v: int, k: int) -> float:
    """omega_k . [z_u ; z_v] on the most recent embeddings."""
    if u == v:
        raise ValueError("compatibility is defined for distinct nodes")
    n = store.n
    if not (0 <= u < n and 0 <= v < n):
        raise ValueError(f"node out of range for store of size {n}")
    return float(np.dot(params.omega(k), np.concatenate((store.z[u], store.z[v]))))


def intensity(params: ModelParams, store: EmbeddingStore, u: int, v: int, k: int) -> float:
    """Conditional event rate for the pair at the current state."""
    return transfer(params.psi(k), compatibility(params, store, u, v, k))


def attention_coefficients(state: GraphState, u: int) -> dict[int, float]:
    """Softmax of the node's attention-strength row over its neighbors."""
    nbrs, svals = state.s_entries(u)
    if not nbrs:
        raise ValueError(f"node {u} has no neighbors to attend to")
    q = softmax(svals)
    return {i: float(x) for i, x in zip(nbrs, q)}


def _pooled(columns: list[np.ndarray]) -> np.ndarray:
    stacked = np.stack(columns)
    am = np.argmax(stacked, axis=0)
    return stacked[am, np.arange(stacked.shape[1])]


def aggregate(params: ModelParams, store: EmbeddingStore, state: GraphState, u: int) -> np.ndarray:
    """Attended max-pool over the 1-hop neighborhood.

    Per neighbor i: tanh(q_i * (W_h z_i + b_h)), pooled coordinatewise
    by max.  An isolated node contributes the zero vector.
    """
    nbrs, svals = state.s_entries(u)
    if not nbrs:
        return np.zeros(params.d)
    q = softmax(svals)
    cols = [np.tanh(q[pos] * ((params.w_h @ store.z[i]) + params.b_h))
            for pos, i in enumerate(nbrs)]
    return _pooled(cols)


def _gap_feature(params: ModelParams, t: float, t_prev: float) -> float:
    gap = (t - t_prev) / params.time_scale
    return math.log1p(gap) if params.log_gaps else gap


def _eq_update_row(params: ModelParams, h_other: np.ndarray, z_prev: np.ndarray,
                   gap: float) -> np.ndarray:
    return np.tanh((params.w_struct @ h_other + params.w_rec @ z_prev) + gap * params.w_t)


def update_embedding(params: ModelParams, store: EmbeddingStore, state: GraphState,
                     e: Event) -> EmbeddingStore:
    """Recurrent update of both endpoints after an event.

    Each endpoint blends the other endpoint's aggregated neighborhood,
    its own previous representation, and its own elapsed time since its
    previous event; all other rows are untouched.  The returned store is
    a fresh copy.
    """
    t = e.t
    for node in (e.u, e.v):
        if t < store.last_event_time[node]:
            raise ValueError(
                f"event at t={t} precedes node {node}'s last event at "
                f"{store.last_event_time[node]} (non-monotone replay)")
    h_u = aggregate(params, store, state, e.u)
    h_v = aggregate(params, store, state, e.v)
    out = store.copy()
    out.z[e.u] = _eq_update_row(params, h_v, store.z[e.u],
                                _gap_feature(params, t, store.last_event_time[e.u]))
    out.z[e.v] = _eq_update_row(params, h_u, store.z[e.v],
                                _gap_feature(params, t, store.last_event_time[e.v]))
    out.last_event_time[[e.u, e.v]] = t
    out.has_event[[e.u, e.v]] = True
    return out


# ---------------------------------------------------------------------
# replay engine
# ---------------------------------------------------------------------

class ReplayContext:
    """Sequential event replay with optional gradient recording.

    The context owns the mutable triple (embedding store, graph state,
    tape).  Between minibatches :meth:`truncate` starts a fresh tape:
    rows updated on earlier tapes become constants, so gradients never
    flow across minibatch boundaries, while rows still holding their
    initial embedding keep reading the ``v_init`` parameter directly.
    """

    def __init__(self, params: ModelParams, *, n: int | None = None, a0=None,
                 state: GraphState | None = None, t_start: float = 0.0,
                 dense: bool | None = None):
        from .graph import init_state  # local to avoid import noise at module top
        self.params = params
        if state is not None:
            self.state = state
        elif a0 is not None:
            self.state = init_state(np.asarray(a0), dense=dense)
        else:
            if n is None:
                n = params.n0
            self.state = GraphState(n, dense=dense)
        if n is None:
            n = self.state.n
        if self.state.n < n:
            self.state.grow(n)
        self.store = EmbeddingStore.fresh(params, self.state.n, t_start)
        self.tape: Tape | None = None
        self._rows: list[int | None] = []
        self._leaves: dict[str, int] = {}
        self._psi_nodes: tuple[int, int] | None = None
        self.truncate()

    @property
    def n(self) -> int:
        return self.store.n

    def truncate(self) -> None:
        """Start a new tape; previously updated rows become constants."""
        self.tape = Tape()
        self._rows = [None] * self.n
        self._leaves = {name: self.tape.leaf(val)
                        for name, val in self.params.named_trainables().items()}
        self._psi_nodes = (self.tape.softplus(self._leaves["rho_0"]),
                           self.tape.softplus(self._leaves["rho_1"]))

    def leaf_nodes(self) -> dict[str, int]:
        return dict(self._leaves)

    def grow(self, new_n: int, t: float) -> None:
        if new_n <= self.n:
            return
        self.state.grow(new_n)
        self.store.grow(new_n, t)
        self._rows.extend([None] * (new_n - len(self._rows)))

    # ---- taped building blocks --------------------------------------

    def row(self, v: int) -> int:
        """Tape node holding node v's current embedding."""
        node = self._rows[v]
        if node is None:
            if not self.store.has_event[v] and v < self.params.n0:
                node = self.tape.row(self._leaves["v_init"], v)
            else:
                node = self.tape.const(self.store.z[v])
            self._rows[v] = node
        return node

    def psi_node(self, k: int) -> int:
        return self._psi_nodes[1 if k else 0]

    def intensity_node(self, u: int, v: int, k: int) -> int:
        cat = self.tape.concat(self.row(u), self.row(v))
        g = self.tape.dot(self._leaves["omega_1" if k else "omega_0"], cat)
        return self.tape.softplus_psi(g, self.psi_node(k))

    def intensity_value(self, u: int, v: int, k: int) -> float:
        return intensity(self.params, self.store, u, v, k)

    def _aggregate_node(self, u: int) -> int:
        nbrs, svals = self.state.s_entries(u)
        if not nbrs:
            return self.tape.const(np.zeros(self.params.d))
        q = self.tape.softmax(self.tape.const(svals))
        cols = []
        for pos, i in enumerate(nbrs):
            h = self.tape.add(self.tape.matvec(self._leaves["w_h"], self.row(i)),
                              self._leaves["b_h"])
            cols.append(self.tape.tanh(self.tape.smul(self.tape.row(q, pos), h)))
        return self.tape.maxpool(cols)

    # ---- advancing the state ----------------------------------------

    def advance(self, e: Event, lam: float, record: bool) -> None:
        """Apply one event: attention/adjacency update, then both
        embedding rows (computed from the pre-event state)."""
        t = e.t
        for node in (e.u, e.v):
            if t < self.store.last_event_time[node]:
                raise ValueError(
                    f"event at t={t} precedes node {node}'s last event at "
                    f"{self.store.last_event_time[node]} (non-monotone replay)")
        gap_u = _gap_feature(self.params, t, self.store.last_event_time[e.u])
        gap_v = _gap_feature(self.params, t, self.store.last_event_time[e.v])
        if record:
            h_u = self._aggregate_node(e.u)
            h_v = self._aggregate_node(e.v)
            zu, zv = self.row(e.u), self.row(e.v)
            self.state.apply_event(e, lam)
            tape, lv = self.tape, self._leaves
            new_u = tape.tanh(tape.add(tape.matvec(lv["w_struct"], h_v),
                                       tape.matvec(lv["w_rec"], zu),
                                       tape.scale(lv["w_t"], gap_u)))
            new_v = tape.tanh(tape.add(tape.matvec(lv["w_struct"], h_u),
                                       tape.matvec(lv["w_rec"], zv),
                                       tape.scale(lv["w_t"], gap_v)))
            self.store.z[e.u] = tape.value(new_u)
            self.store.z[e.v] = tape.value(new_v)
            self._rows[e.u] = new_u
            self._rows[e.v] = new_v
        else:
            h_u = aggregate(self.params, self.store, self.state, e.u)
            h_v = aggregate(self.params, self.store, self.state, e.v)
            zu = self.store.z[e.u].copy()
            zv = self.store.z[e.v].copy()
            self.state.apply_event(e, lam)
            self.store.z[e.u] = _eq_update_row(self.params, h_v, zu, gap_u)
            self.store.z[e.v] = _eq_update_row(self.params, h_u, zv, gap_v)
        self.store.last_event_time[[e.u, e.v]] = t
        self.store.has_event[[e.u, e.v]] = True

    def process_event(self, e: Event) -> float:
        """Plain replay step (no gradients): intensity, state, embeddings."""
        if max(e.u, e.v) >= self.n:
            self.grow(max(e.u, e.v) + 1, e.t)
        lam = self.intensity_value(e.u, e.v, e.k)
        self.advance(e, lam, record=False)
        return lam
