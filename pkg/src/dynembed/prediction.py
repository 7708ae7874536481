"""Inference queries against a frozen state snapshot.

Between events the model's rates are constant, so the density of the
next event on a pair factors into the pair's type-k rate times an
exponential survival term driven by the pair's total rate.  That closed
form backs link ranking, most-likely-type queries, and next-event-time
prediction (where a Monte Carlo estimate is exposed alongside the exact
expectation so the two can be cross-checked).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import EmbeddingStore, ModelParams
from .numerics import scaled_softplus


class PredictionError(ValueError):
    pass


class GroundTruthFiltered(PredictionError):
    """The ranking target is not in the candidate pool."""


@dataclass(frozen=True)
class DensityQuery:
    u: int
    v: int
    k: int
    t: float
    t_bar: float

    def __post_init__(self):
        if self.t < self.t_bar:
            raise PredictionError(f"query time {self.t} precedes context time {self.t_bar}")


@dataclass(frozen=True)
class RankingResult:
    target_rank: int
    scores: dict[int, float]
    filtered_out: frozenset[int]


@dataclass(frozen=True)
class TimePrediction:
    monte_carlo: float
    closed_form: float
    t_bar: float
    total_rate: float
    std_error: float


class FrozenContext:
    """Read-only view of (parameters, embeddings, event clocks)."""

    def __init__(self, params: ModelParams, store: EmbeddingStore):
        self.params = params
        self.z = store.z
        self.last_event_time = store.last_event_time

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def intensity(self, u: int, v: int, k: int) -> float:
        p = self.params
        g = float(np.dot(p.omega(k), np.concatenate((self.z[u], self.z[v]))))
        return float(scaled_softplus(g, p.psi(k)))

    def intensities_vs(self, anchor: int, others: np.ndarray, k: int) -> np.ndarray:
        """Rates of (anchor, w) for many w at once (anchor in first slot)."""
        p = self.params
        d = p.d
        om = p.omega(k)
        g = float(np.dot(om[:d], self.z[anchor])) + self.z[others] @ om[d:]
        return scaled_softplus(g, p.psi(k))

    def t_bar(self, u: int, v: int) -> float:
        """Time of the most recent event touching either node."""
        return float(max(self.last_event_time[u], self.last_event_time[v]))


def conditional_density(ctx: FrozenContext, q: DensityQuery) -> float:
    """Density that the pair's next event is type k and happens at t.

    The pair's own total rate (both event types) is held at its value
    just after t_bar, so the survival factor is a plain exponential.
    """
    lam_k = ctx.intensity(q.u, q.v, q.k)
    total = ctx.intensity(q.u, q.v, 0) + ctx.intensity(q.u, q.v, 1)
    return lam_k * math.exp(-total * (q.t - q.t_bar))


def _density_scores(ctx: FrozenContext, anchor: int, cands: np.ndarray,
                    t: float, k: int) -> np.ndarray:
    lam_k = ctx.intensities_vs(anchor, cands, k)
    total = (ctx.intensities_vs(anchor, cands, 0)
             + ctx.intensities_vs(anchor, cands, 1))
    t_bar = np.maximum(ctx.last_event_time[anchor], ctx.last_event_time[cands])
    return lam_k * np.exp(-total * (t - t_bar))


def rank_link_candidates(ctx: FrozenContext, anchor: int, t: float, k: int,
                         seen_pairs: set[frozenset[int]], truth: int,
                         pool=None) -> RankingResult:
    """Rank candidate partners of ``anchor`` by conditional density.

    Candidates forming a pair already in ``seen_pairs`` are removed,
    except the ground-truth partner itself, which always stays rankable
    (the filter exists to drop known-positive competitors, not the
    query).  A truth outside the pool raises
    :class:`GroundTruthFiltered`.  Ties resolve toward the smaller node
    id.
    """
    if pool is None:
        pool = range(ctx.n)
    cands = []
    filtered = []
    for w in pool:
        if w == anchor:
            continue
        if w != truth and frozenset((anchor, w)) in seen_pairs:
            filtered.append(w)
            continue
        cands.append(w)
    if truth not in cands:
        raise GroundTruthFiltered(f"ground-truth node {truth} is not a candidate")
    if len(cands) < 2:
        raise PredictionError("need at least two candidates after filtering")
    cands = np.array(sorted(cands), dtype=np.intp)
    scores = _density_scores(ctx, anchor, cands, t, k)
    s_truth = scores[int(np.searchsorted(cands, truth))]
    higher = int(np.sum(scores > s_truth))
    tied_lower = int(np.sum((scores == s_truth) & (cands < truth)))
    rank = 1 + higher + tied_lower
    return RankingResult(
        target_rank=rank,
        scores={int(w): float(s) for w, s in zip(cands, scores)},
        filtered_out=frozenset(filtered),
    )


def predict_event_type(ctx: FrozenContext, u: int, v: int, t: float) -> int:
    """Most likely type of the pair's next event; ties favor communication."""
    t_bar = ctx.t_bar(u, v)
    f0 = conditional_density(ctx, DensityQuery(u, v, 0, t, t_bar))
    f1 = conditional_density(ctx, DensityQuery(u, v, 1, t, t_bar))
    return 1 if f1 >= f0 else 0


def expected_event_time(ctx: FrozenContext, u: int, v: int) -> float:
    """Closed-form expectation of the pair's next event time.

    Under the frozen rates the waiting time past t_bar is exponential
    with the pair's total rate, and is independent of which event type
    wins the race.
    """
    total = ctx.intensity(u, v, 0) + ctx.intensity(u, v, 1)
    if total <= 0.0:
        raise PredictionError("non-positive total rate")
    return ctx.t_bar(u, v) + 1.0 / total


def predict_time(ctx: FrozenContext, u: int, v: int, k: int, n_samples: int,
                 rng: np.random.Generator | int | None = None) -> TimePrediction:
    """Monte Carlo next-event-time estimate plus its closed form.

    Draws waiting times by inverse-transform sampling of the frozen
    exponential survival; exact for this model, so the sample mean must
    converge on the closed form.
    """
    lam_k = ctx.intensity(u, v, k)
    if lam_k <= 0.0:
        raise PredictionError("non-positive rate for the requested event type")
    if n_samples < 1:
        raise PredictionError("need at least one sample")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    total = ctx.intensity(u, v, 0) + ctx.intensity(u, v, 1)
    t_bar = ctx.t_bar(u, v)
    waits = -np.log1p(-rng.random(n_samples)) / total
    mc = t_bar + float(np.mean(waits))
    se = float(np.std(waits)) / math.sqrt(n_samples)
    return TimePrediction(monte_carlo=mc, closed_form=t_bar + 1.0 / total,
                          t_bar=t_bar, total_rate=total, std_error=se)
