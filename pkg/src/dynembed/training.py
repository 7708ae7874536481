"""Likelihood training: per-event negative log intensity plus a sampled
estimate of the survival integral, minimized by minibatch SGD.

Minibatches are contiguous time slices (the recurrent update needs
temporal order).  Within a batch, each event contributes -log(rate) for
the pair that fired plus, for survival, the rates of sampled non-event
pairs that share one endpoint with it, all evaluated on the state just
before the event.  Gradients stop at batch boundaries.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff
from .events import Event, EventLog, ValidationError
from .model import GradientSet, ModelParams, ReplayContext

logger = logging.getLogger(__name__)

UNDERFLOW_RATE = 1e-300


@dataclass
class TrainConfig:
    batch_size: int = 200
    survival_samples: int = 5
    learning_rate: float = 0.01
    epochs: int = 10
    seed: int = 0
    clip_norm: float | None = 5.0
    patience: int = 3
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1 or self.survival_samples < 1:
            raise ValidationError("batch_size and survival_samples must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be non-negative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValidationError("clip_norm must be positive when set")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError("val_fraction must be in [0, 1)")


@dataclass
class LossReport:
    event_nll: float
    survival: float
    total: float
    events_processed: int
    epoch: int = 0
    seconds: float = 0.0
    underflows: int = 0
    val_total: float | None = None


class TapeScalar(NamedTuple):
    """A scalar loss term: its tape node (None when not recorded) and value."""
    node: int | None
    value: float


@dataclass
class TrainResult:
    params: ModelParams
    reports: list[LossReport]
    best_epoch: int


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last finite parameters."""

    def __init__(self, params: ModelParams, reports: list[LossReport]):
        super().__init__("training diverged (non-finite loss)")
        self.params = params
        self.reports = reports


@dataclass
class BatchResult:
    nll: TapeScalar | None
    survival: TapeScalar | None
    underflows: int
    survival_skipped: int = 0


def replay_batch(ctx: ReplayContext, batch: Sequence[Event], *,
                 nll: bool = True,
                 survival: tuple[Sequence[int], int, np.random.Generator] | None = None,
                 record: bool = True,
                 state_rates: Sequence[float] | None = None,
                 strict_survival: bool = True) -> BatchResult:
    """Advance the context through a batch, accumulating loss terms.

    Every rate is evaluated on the pre-event state; the attention and
    embedding updates then advance the state before the next event.
    With ``record=False`` the same arithmetic runs without the tape.

    ``state_rates`` optionally pins the per-event rate fed to the
    attention-matrix update.  Gradients treat that rate (and hence the
    whole S trajectory) as data, so a finite-difference oracle must pin
    it to the base point's values to differentiate the same function.

    With ``strict_survival`` off, an event whose exclusion set leaves no
    sampling candidates contributes nothing to the survival term instead
    of raising (degenerate batches on pair-dominated logs).
    """
    tape = ctx.tape
    log_nodes: list[int] = []
    nll_acc = 0.0
    surv_nodes: list[int] = []
    surv_acc = 0.0
    underflows = 0
    survival_skipped = 0
    for pos, e in enumerate(batch):
        if max(e.u, e.v) >= ctx.n:
            ctx.grow(max(e.u, e.v) + 1, e.t)
        if record:
            lam_node = ctx.intensity_node(e.u, e.v, e.k)
            lam = tape.value(lam_node)
        else:
            lam_node = None
            lam = ctx.intensity_value(e.u, e.v, e.k)
        if nll:
            if lam < UNDERFLOW_RATE:
                underflows += 1
            if record:
                log_nodes.append(tape.log_guarded(lam_node))
            else:
                nll_acc = nll_acc + math.log(lam + 1e-30)
        if survival is not None:
            node_list, n_samples, rng = survival
            eligible = [w for w in node_list if w != e.u and w != e.v]
            if not eligible:
                if strict_survival:
                    raise ValidationError(
                        f"node list of size {len(node_list)} too small to exclude "
                        f"the endpoints ({e.u},{e.v})")
                survival_skipped += 1
                ctx.advance(e, lam if state_rates is None else state_rates[pos], record)
                continue
            idx = rng.integers(0, len(eligible), size=(n_samples, 2))
            if record:
                terms = []
                for j in range(n_samples):
                    u_other = eligible[idx[j, 0]]
                    v_other = eligible[idx[j, 1]]
                    for k in (0, 1):
                        terms.append(ctx.intensity_node(e.u, v_other, k))
                        terms.append(ctx.intensity_node(u_other, e.v, k))
                surv_nodes.append(tape.scale(tape.add(*terms), 1.0 / n_samples))
            else:
                acc = 0.0
                for j in range(n_samples):
                    u_other = eligible[idx[j, 0]]
                    v_other = eligible[idx[j, 1]]
                    for k in (0, 1):
                        acc = acc + ctx.intensity_value(e.u, v_other, k)
                        acc = acc + ctx.intensity_value(u_other, e.v, k)
                surv_acc = surv_acc + acc * (1.0 / n_samples)
        ctx.advance(e, lam if state_rates is None else state_rates[pos], record)

    nll_out = None
    if nll:
        if record:
            node = tape.neg(tape.add(*log_nodes)) if log_nodes else tape.const(0.0)
            nll_out = TapeScalar(node, float(tape.value(node)))
        else:
            nll_out = TapeScalar(None, -nll_acc)
    surv_out = None
    if survival is not None:
        if record:
            node = tape.add(*surv_nodes) if surv_nodes else tape.const(0.0)
            surv_out = TapeScalar(node, float(tape.value(node)))
        else:
            surv_out = TapeScalar(None, surv_acc)
    return BatchResult(nll_out, surv_out, underflows, survival_skipped)


def event_nll(ctx: ReplayContext, batch: Sequence[Event], record: bool = True) -> TapeScalar:
    """-sum(log rate) over the batch, each rate from the pre-event state."""
    return replay_batch(ctx, batch, nll=True, survival=None, record=record).nll


def survival_mc(ctx: ReplayContext, batch: Sequence[Event], node_list: Sequence[int],
                n_samples: int, rng: np.random.Generator,
                record: bool = True) -> TapeScalar:
    """Sampled survival term.

    Per event, N pairs (u_other, v_other) are drawn uniformly from the
    node list excluding the endpoints; rates of (u, v_other) and
    (u_other, v) accumulate over both event types and are averaged over
    the N draws.
    """
    if n_samples < 1:
        raise ValidationError("need at least one survival sample")
    return replay_batch(ctx, batch, nll=False,
                        survival=(node_list, n_samples, rng), record=record).survival


def survival_exact(ctx: ReplayContext, batch: Sequence[Event],
                   node_list: Sequence[int] | None = None) -> float:
    """Exact expectation of the sampled survival term (test oracle).

    Averages, over the eligible candidate set of each event, the summed
    rates of the one-shared-endpoint pairs on both event types.  Guarded
    to small graphs; it exists to pin the estimator's mean.
    """
    if ctx.n > 512:
        raise ValidationError(f"survival_exact is a small-graph oracle (n={ctx.n} > 512)")
    if node_list is None:
        node_list = sorted({x for e in batch for x in (e.u, e.v)})
    total = 0.0
    for e in batch:
        eligible = [w for w in node_list if w != e.u and w != e.v]
        if eligible:
            acc = 0.0
            for w in eligible:
                for k in (0, 1):
                    acc = acc + ctx.intensity_value(e.u, w, k)
                    acc = acc + ctx.intensity_value(w, e.v, k)
            total += acc / len(eligible)
        ctx.advance(e, ctx.intensity_value(e.u, e.v, e.k), record=False)
    return total


def _batches(events: Sequence[Event], m: int):
    for i in range(0, len(events), m):
        yield events[i:i + m]


def train(log: EventLog, config: TrainConfig, *, a0=None, params: ModelParams | None = None,
          d: int = 32, time_scale: float = 1.0, log_gaps: bool = False,
          dense: bool | None = None) -> TrainResult:
    """Minibatch SGD on the event/survival objective.

    Each epoch replays the log from the initial state.  The chronological
    tail (``val_fraction``) is held out of the updates and scores early
    stopping; the returned parameters are the best-on-validation ones
    when validation is enabled, otherwise the final ones.  Deterministic
    for a fixed (log, config) pair.
    """
    if len(log) == 0:
        raise ValidationError("cannot train on an empty log")
    if params is None:
        params = ModelParams.initialize(log.n_nodes, d, seed=config.seed,
                                        time_scale=time_scale, log_gaps=log_gaps)
    events = log.events
    n_val = int(round(config.val_fraction * len(events)))
    fit_events = events[: len(events) - n_val] if n_val else events
    val_events = events[len(events) - n_val:] if n_val else ()
    if not fit_events:
        raise ValidationError("validation fraction leaves no training events")

    reports: list[LossReport] = []
    best_val = math.inf
    best_params = params
    best_epoch = 0
    bad_epochs = 0
    last_good = params

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        ctx = ReplayContext(params, n=log.n_nodes, a0=a0,
                            t_start=log.horizon[0], dense=dense)
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, 101, epoch)))
        nll_sum = 0.0
        surv_sum = 0.0
        underflows = 0
        for batch in _batches(fit_events, config.batch_size):
            ctx.params = params
            ctx.truncate()
            node_list = sorted({x for e in batch for x in (e.u, e.v)})
            res = replay_batch(ctx, batch,
                               survival=(node_list, config.survival_samples, rng),
                               strict_survival=False)
            loss_node = ctx.tape.add(res.nll.node, res.survival.node)
            loss_val = float(ctx.tape.value(loss_node))
            if not math.isfinite(loss_val):
                raise TrainingDiverged(last_good, reports)
            try:
                grads = GradientSet(**autodiff.gradients(ctx.tape, loss_node,
                                                         ctx.leaf_nodes()))
            except autodiff.AutodiffError as exc:
                raise TrainingDiverged(last_good, reports) from exc
            if config.clip_norm is not None:
                norm = grads.global_norm()
                if norm > config.clip_norm:
                    grads = grads.scaled(config.clip_norm / norm)
            last_good = params
            params = params.step(grads, config.learning_rate)
            if (not all(np.all(np.isfinite(g)) for g in
                        (params.v_init, params.w_struct, params.w_rec, params.w_t,
                         params.w_h, params.b_h, params.omega_0, params.omega_1))
                    or not math.isfinite(params.rho_0) or not math.isfinite(params.rho_1)
                    or params.psi_0 <= 0.0 or params.psi_1 <= 0.0):
                raise TrainingDiverged(last_good, reports)
            nll_sum += res.nll.value
            surv_sum += res.survival.value
            underflows += res.underflows

        val_total = None
        if val_events:
            # held-out loss with a fixed sample stream so epochs compare cleanly
            ctx.params = params
            ctx.truncate()
            vrng = np.random.default_rng(np.random.SeedSequence((config.seed, 202)))
            vlist = sorted({x for e in val_events for x in (e.u, e.v)})
            vres = replay_batch(ctx, val_events,
                                survival=(vlist, config.survival_samples, vrng),
                                record=False, strict_survival=False)
            val_total = vres.nll.value + vres.survival.value

        report = LossReport(
            event_nll=nll_sum, survival=surv_sum, total=nll_sum + surv_sum,
            events_processed=len(fit_events), epoch=epoch,
            seconds=time.perf_counter() - t0, underflows=underflows, val_total=val_total,
        )
        reports.append(report)
        if underflows:
            logger.warning("epoch %d: %d event rates underflowed the log guard", epoch, underflows)
        logger.info("epoch %d: nll=%.4f survival=%.4f total=%.4f%s",
                    epoch, report.event_nll, report.survival, report.total,
                    "" if val_total is None else f" val={val_total:.4f}")

        if val_events:
            if val_total < best_val:
                best_val, best_params, best_epoch = val_total, params, epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    logger.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
                    break
        else:
            best_params, best_epoch = params, epoch

    return TrainResult(best_params, reports, best_epoch)


def step_complexity_probe(config: TrainConfig, sizes: Sequence[int],
                          gen_config=None) -> list[tuple[int, float]]:
    """Wall-time of one training epoch at several synthetic log sizes.

    The node count and every training hyperparameter stay fixed; only
    the horizon scales, so event count is the lone variable.  Returns
    (actual event count, seconds) rows for a scaling fit.
    """
    from .synthetic import GeneratorConfig, generate, planted_config

    if gen_config is None:
        gen_config = planted_config(n=30, seed=config.seed)
    base_rate = _expected_rate(gen_config)
    rows = []
    for size in sizes:
        cfg = gen_config.with_horizon(size / base_rate)
        log, a0 = generate(cfg)
        if len(log) == 0:
            raise ValidationError(f"probe size {size}: generator produced no events")
        probe_cfg = TrainConfig(
            batch_size=config.batch_size, survival_samples=config.survival_samples,
            learning_rate=config.learning_rate, epochs=1, seed=config.seed,
            clip_norm=config.clip_norm, val_fraction=0.0,
        )
        t0 = time.perf_counter()
        train(log, probe_cfg, a0=a0, d=16)
        rows.append((len(log), time.perf_counter() - t0))
        logger.info("probe: %d events in %.3fs", rows[-1][0], rows[-1][1])
    return rows


def _expected_rate(gen_config) -> float:
    """Rough stationary event rate of a generator config (events/hour)."""
    mu_total = float(np.sum(np.triu(gen_config.base_rates, k=1)))
    branching = gen_config.excitation / gen_config.decay
    boost = 1.0 / max(1.0 - branching, 0.1)
    return max(mu_total * boost, 1e-9)


def fit_loglog(rows: Sequence[tuple[int, float]]) -> tuple[float, float]:
    """Least-squares slope and R^2 of log(time) against log(events)."""
    x = np.log(np.array([r[0] for r in rows], dtype=np.float64))
    y = np.log(np.array([r[1] for r in rows], dtype=np.float64))
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), r2
