import numpy as np
import pytest

from dynembed import Event, ModelParams, ReplayContext
from dynembed.model import TRAINABLE_FIELDS
from dynembed.numerics import inverse_softplus


def zero_params(n0: int, d: int, psi: float = 1.0) -> ModelParams:
    """All-zero weights with an exact time-scale value."""
    rho = inverse_softplus(psi)
    return ModelParams(
        v_init=np.zeros((n0, d)), w_struct=np.zeros((d, d)), w_rec=np.zeros((d, d)),
        w_t=np.zeros(d), w_h=np.zeros((d, d)), b_h=np.zeros(d),
        omega_0=np.zeros(2 * d), omega_1=np.zeros(2 * d), rho_0=rho, rho_1=rho,
    )


def five_node_events() -> list[Event]:
    """Ten events over five nodes: both types, growing structure, reuse."""
    return [
        Event(0, 1, 0.5, 0, 0), Event(1, 2, 0.7, 0, 1), Event(0, 1, 0.9, 1, 1),
        Event(3, 4, 1.0, 0, 0), Event(2, 3, 1.2, 0, 1), Event(0, 2, 1.5, 0, 0),
        Event(0, 2, 1.7, 1, 1), Event(1, 4, 1.9, 0, 1), Event(2, 4, 2.0, 0, 1),
        Event(3, 4, 2.2, 1, 1),
    ]


def full_gradient_check(params: ModelParams, events, n: int, n_samples: int,
                        seed: int, h: float = 1e-5):
    """AD gradients of the batch loss against central finite differences.

    The attention-matrix trajectory is treated as data by the gradient,
    so the finite-difference oracle pins the per-event rates fed to the
    state update at their base-point values; everything else (rates in
    the loss, embedding recursion, aggregation weights) varies freely.
    Returns (worst relative error, gradient dict).
    """
    from dynembed.autodiff import gradients
    from dynembed.training import replay_batch

    node_list = sorted({x for e in events for x in (e.u, e.v)})

    base = ReplayContext(params, n=n)
    state_rates = []
    for e in events:
        state_rates.append(base.intensity_value(e.u, e.v, e.k))
        base.advance(e, state_rates[-1], record=False)

    def loss_value(p: ModelParams) -> float:
        ctx = ReplayContext(p, n=n)
        rng = np.random.default_rng(seed)
        res = replay_batch(ctx, events, survival=(node_list, n_samples, rng),
                           record=False, state_rates=state_rates)
        return res.nll.value + res.survival.value

    ctx = ReplayContext(params, n=n)
    rng = np.random.default_rng(seed)
    res = replay_batch(ctx, events, survival=(node_list, n_samples, rng))
    loss = ctx.tape.add(res.nll.node, res.survival.node)
    assert ctx.tape.value(loss) == loss_value(params)
    grads = gradients(ctx.tape, loss, ctx.leaf_nodes())

    worst = 0.0
    for name in TRAINABLE_FIELDS:
        arr = getattr(params, name)
        ga = grads[name]
        if isinstance(arr, float):
            entries = [((), float(ga))]
        else:
            entries = [(idx, float(ga[idx])) for idx in np.ndindex(arr.shape)]
        for idx, g_ad in entries:
            pp, pm = params.copy(), params.copy()
            if idx == () and isinstance(arr, float):
                setattr(pp, name, arr + h)
                setattr(pm, name, arr - h)
            else:
                getattr(pp, name)[idx] += h
                getattr(pm, name)[idx] -= h
            g_fd = (loss_value(pp) - loss_value(pm)) / (2.0 * h)
            denom = max(abs(g_ad), abs(g_fd))
            if denom > 1e-6:
                worst = max(worst, abs(g_ad - g_fd) / denom)
            else:
                # below the central-difference noise floor; require agreement
                assert abs(g_ad - g_fd) < 1e-7, f"{name}{idx}: {g_ad} vs {g_fd}"
    return worst, grads
