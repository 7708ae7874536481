"""Event ingestion: parsing, validation, ordering, and train/test slicing.

An event is the tuple (u, v, t, l, k): two node ids, a timestamp in
hours, the link status of the pair just before the event, and the event
type (0 = association, 1 = communication).  Logs are immutable once
built and are always sorted by time with input order breaking ties.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ASSOCIATION = 0
COMMUNICATION = 1


class Event(NamedTuple):
    u: int
    v: int
    t: float
    l: int
    k: int


class EventFormatError(ValueError):
    """A record could not be parsed or violates a field constraint."""


class ValidationError(ValueError):
    """A structurally valid input violates a log-level invariant."""


@dataclass(frozen=True)
class EventLog:
    """Time-ordered, validated sequence of events.

    ``n_nodes`` is the size of the dense id space (every id < n_nodes);
    ``horizon`` is the (t_start, T) observation window.  ``labels`` maps
    dense ids back to original identifiers when the input used strings
    or non-dense integers.
    """

    events: tuple[Event, ...]
    n_nodes: int
    horizon: tuple[float, float]
    labels: tuple[str, ...] | None = None

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events], dtype=np.float64)


@dataclass(frozen=True)
class SlotSplit:
    """A chronological train window plus equal-duration test slots."""

    train: EventLog
    test_slots: tuple[EventLog, ...]
    boundaries: tuple[float, ...]

    @property
    def test_events(self) -> tuple[Event, ...]:
        out: list[Event] = []
        for s in self.test_slots:
            out.extend(s.events)
        return tuple(out)


def _check_event(u: int, v: int, t: float, l, k: int, where: str) -> None:
    if u < 0 or v < 0:
        raise EventFormatError(f"{where}: negative node id ({u}, {v})")
    if u == v:
        raise EventFormatError(f"{where}: self-event on node {u}")
    if not math.isfinite(t) or t < 0.0:
        raise EventFormatError(f"{where}: bad timestamp {t!r}")
    if k not in (0, 1):
        raise EventFormatError(f"{where}: unknown event type {k!r}")
    if l is not None and l not in (0, 1):
        raise EventFormatError(f"{where}: link status must be 0 or 1, got {l!r}")


def build_log(
    records: Sequence[tuple],
    *,
    horizon: tuple[float, float] | None = None,
    labels: Sequence[str] | None = None,
    n_nodes: int | None = None,
) -> EventLog:
    """Assemble a log from (u, v, t, l, k) tuples.

    Sorting by t is stable, so records with equal timestamps keep their
    input order.  Ids must already be dense; use :func:`load_events` for
    raw files.
    """
    events = []
    max_id = -1
    for i, (u, v, t, l, k) in enumerate(records):
        _check_event(u, v, t, l, k, f"record {i}")
        if l is None:
            raise ValidationError(f"record {i}: missing link status; derive it first")
        events.append(Event(int(u), int(v), float(t), int(l), int(k)))
        max_id = max(max_id, u, v)
    events.sort(key=lambda e: e.t)
    n = max_id + 1 if n_nodes is None else n_nodes
    if n_nodes is not None and max_id >= n_nodes:
        raise ValidationError(f"node id {max_id} outside declared id space {n_nodes}")
    if horizon is None:
        horizon = (0.0, events[-1].t if events else 0.0)
    if events and events[-1].t > horizon[1]:
        raise ValidationError("event past the end of the horizon")
    return EventLog(tuple(events), n, (float(horizon[0]), float(horizon[1])),
                    tuple(labels) if labels is not None else None)


def _parse_rows(rows: Iterable[tuple[int, Sequence]], where: str):
    """Common core for csv/jsonl ingestion: raw tuples with line numbers."""
    raw = []
    id_map: dict[str, int] = {}
    remap_needed = False
    for lineno, fields in rows:
        if len(fields) not in (4, 5):
            raise EventFormatError(f"{where} line {lineno}: expected 4 or 5 fields, got {len(fields)}")
        su, sv = str(fields[0]).strip(), str(fields[1]).strip()
        try:
            t = float(fields[2])
        except (TypeError, ValueError):
            raise EventFormatError(f"{where} line {lineno}: bad timestamp {fields[2]!r}") from None
        try:
            k = int(fields[3])
        except (TypeError, ValueError):
            raise EventFormatError(f"{where} line {lineno}: bad event type {fields[3]!r}") from None
        l = None
        if len(fields) == 5 and fields[4] is not None and str(fields[4]).strip() != "":
            try:
                l = int(fields[4])
            except (TypeError, ValueError):
                raise EventFormatError(f"{where} line {lineno}: bad link status {fields[4]!r}") from None
        if not (su.lstrip("-").isdigit() and sv.lstrip("-").isdigit()):
            remap_needed = True
        for s in (su, sv):
            if s not in id_map:
                id_map[s] = len(id_map)
        raw.append((lineno, su, sv, t, l, k))
    if not raw:
        raise ValidationError(f"{where}: no events")

    if not remap_needed:
        ints = {s: int(s) for s in id_map}
        dense = sorted(set(ints.values())) == list(range(len(id_map)))
        if dense and min(ints.values()) >= 0:
            id_map = ints
            labels = None
        else:
            labels = tuple(sorted(id_map, key=id_map.get))
    else:
        labels = tuple(sorted(id_map, key=id_map.get))

    events = []
    for lineno, su, sv, t, l, k in raw:
        u, v = id_map[su], id_map[sv]
        _check_event(u, v, t, l, k, f"{where} line {lineno}")
        events.append((u, v, t, l, k))
    return events, labels


def load_events(path: str, format: str | None = None, a0=None) -> EventLog:
    """Load, validate, and sort an event file.

    ``format`` is "csv" or "jsonl"; by default it is inferred from the
    extension.  The link-status column is optional: it is always derived
    by replaying associations from ``a0`` (no edges when omitted), and a
    provided column is checked against the replay, which wins on
    mismatch.
    """
    if format is None:
        format = "jsonl" if path.endswith((".jsonl", ".json")) else "csv"
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {format!r}")
    if not os.path.exists(path):
        raise FileNotFoundError(path)

    rows: list[tuple[int, Sequence]] = []
    if format == "csv":
        with open(path, newline="") as fh:
            for lineno, rec in enumerate(csv.reader(fh), start=1):
                if not rec or (len(rec) == 1 and not rec[0].strip()):
                    continue
                if lineno == 1 and _looks_like_header(rec):
                    continue
                rows.append((lineno, rec))
    else:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise EventFormatError(f"{path} line {lineno}: {exc}") from None
                if not isinstance(obj, dict) or "u" not in obj or "v" not in obj:
                    raise EventFormatError(f"{path} line {lineno}: need keys u, v, t, k")
                rec = [obj.get("u"), obj.get("v"), obj.get("t"), obj.get("k")]
                if "l" in obj:
                    rec.append(obj["l"])
                rows.append((lineno, rec))

    parsed, labels = _parse_rows(rows, path)
    n_nodes = 1 + max(max(u, v) for u, v, *_ in parsed)
    log = EventLog(
        tuple(Event(u, v, t, -1 if l is None else l, k) for u, v, t, l, k in parsed),
        n_nodes,
        (0.0, max(t for _, _, t, _, _ in parsed)),
        labels,
    )
    # impose time order (stable) before the association replay
    ordered = sorted(log.events, key=lambda e: e.t)
    log = EventLog(tuple(ordered), n_nodes, log.horizon, labels)
    log = derive_link_status(log, a0)
    logger.info("loaded %d events over %d nodes from %s", len(log), log.n_nodes, path)
    return log


def _looks_like_header(rec: Sequence[str]) -> bool:
    if len(rec) < 4:
        return True
    try:
        float(rec[2])
        int(rec[3])
        return False
    except ValueError:
        return True


def save_events(log: EventLog, path: str, format: str = "csv") -> None:
    """Write a log back out in the standard column order u,v,t,k,l."""
    if format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v", "t", "k", "l"])
            for e in log.events:
                w.writerow([e.u, e.v, repr(e.t), e.k, e.l])
    elif format == "jsonl":
        with open(path, "w") as fh:
            for e in log.events:
                fh.write(json.dumps({"u": e.u, "v": e.v, "t": e.t, "k": e.k, "l": e.l}) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def as_adjacency_sets(a0, n: int) -> list[set[int]]:
    """Normalize an initial adjacency (matrix, pair list, or None)."""
    adj: list[set[int]] = [set() for _ in range(n)]
    if a0 is None:
        return adj
    if isinstance(a0, np.ndarray):
        if a0.shape != (n, n):
            raise ValidationError(f"adjacency shape {a0.shape} does not match n={n}")
        if not np.array_equal(a0, a0.T):
            raise ValidationError("adjacency must be symmetric")
        if np.any(np.diag(a0) != 0):
            raise ValidationError("adjacency must have a zero diagonal")
        for u, v in zip(*np.nonzero(a0)):
            adj[int(u)].add(int(v))
        return adj
    if isinstance(a0, (list, tuple)) and a0 and isinstance(a0[0], set):
        for u, nbrs in enumerate(a0):
            for v in nbrs:
                adj[u].add(int(v))
                adj[int(v)].add(u)
        return adj
    for u, v in a0:  # iterable of pairs
        u, v = int(u), int(v)
        if u == v:
            raise ValidationError(f"self-loop ({u},{u}) in initial adjacency")
        adj[u].add(v)
        adj[v].add(u)
    return adj


def load_adjacency(path: str, n: int | None = None) -> np.ndarray:
    """Read an initial edge list ("u,v" per line) into a dense 0/1 matrix."""
    pairs = []
    max_id = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#") or line.lower().startswith("u"):
                continue
            parts = [p for p in line.replace(",", " ").split() if p]
            if len(parts) != 2:
                raise EventFormatError(f"{path} line {lineno}: expected 'u,v'")
            u, v = int(parts[0]), int(parts[1])
            if u == v:
                raise EventFormatError(f"{path} line {lineno}: self-loop")
            pairs.append((u, v))
            max_id = max(max_id, u, v)
    if n is None:
        n = max_id + 1
    a = np.zeros((n, n), dtype=np.int8)
    for u, v in pairs:
        a[u, v] = a[v, u] = 1
    return a


def derive_link_status(log: EventLog, a0=None) -> EventLog:
    """Fill each event's link status by replaying associations forward.

    The status is the pair's association state immediately before the
    event, so the event that creates an edge carries l=0 itself.  When
    the log already carries statuses they are checked; the replay wins
    and mismatches are logged.
    """
    adj = as_adjacency_sets(a0, log.n_nodes)
    out = []
    mismatches = 0
    for i, e in enumerate(log.events):
        linked = 1 if e.v in adj[e.u] else 0
        if e.l in (0, 1) and e.l != linked:
            mismatches += 1
        if e.k == ASSOCIATION:
            if linked:
                logger.warning("event %d re-associates an existing edge (%d,%d)", i, e.u, e.v)
            adj[e.u].add(e.v)
            adj[e.v].add(e.u)
        out.append(Event(e.u, e.v, e.t, linked, e.k))
    if mismatches:
        logger.warning("%d provided link statuses disagreed with the replay; replay wins", mismatches)
    return EventLog(tuple(out), log.n_nodes, log.horizon, log.labels)


def split_slots(log: EventLog, train_fraction: float, n_slots: int) -> SlotSplit:
    """Chronological split: ceil(fraction*P) train events, then equal-width test slots."""
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must be in (0,1), got {train_fraction}")
    if n_slots < 1:
        raise ValidationError(f"n_slots must be >= 1, got {n_slots}")
    if len(log) == 0:
        raise ValidationError("empty log")
    n_train = math.ceil(train_fraction * len(log))
    train_events = log.events[:n_train]
    test_events = log.events[n_train:]
    if not test_events:
        raise ValidationError("empty test window (train_fraction too large)")

    t_split = train_events[-1].t
    t_end = log.horizon[1]
    if t_end < test_events[-1].t:
        t_end = test_events[-1].t
    width = (t_end - t_split) / n_slots
    bounds = [t_split + width * (i + 1) for i in range(n_slots)]
    bounds[-1] = t_end  # avoid float drift excluding the last event

    slots: list[list[Event]] = [[] for _ in range(n_slots)]
    for e in test_events:
        idx = int(np.searchsorted(bounds, e.t, side="left"))
        slots[min(idx, n_slots - 1)].append(e)

    slot_logs = []
    lo = t_split
    for i, bucket in enumerate(slots):
        if not bucket:
            logger.warning("test slot %d contains no events", i)
        slot_logs.append(EventLog(tuple(bucket), log.n_nodes, (lo, bounds[i]), log.labels))
        lo = bounds[i]

    train_log = EventLog(tuple(train_events), log.n_nodes, (log.horizon[0], t_split), log.labels)
    return SlotSplit(train_log, tuple(slot_logs), tuple(bounds))
