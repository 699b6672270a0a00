"""Finite-difference verification of every differentiable operation.

Each registered check builds a random scalar-valued computation around one
primitive (or one composed loss), runs the tape backward, and compares the
analytic gradients against central differences at 64-bit precision.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .errors import ContractError


def finite_difference_check(fn: Callable[[], Tensor], wrt: list[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` must build a scalar from the (64-bit) tensors in ``wrt``; it is
    re-evaluated forward-only for each probe coordinate.
    """
    for t in wrt:
        if t.data.dtype != np.float64:
            raise ContractError("finite_difference_check requires float64 tensors")
        t.grad = None
    with Tape() as tape:
        loss = fn()
        if loss.data.shape != ():
            raise ContractError(f"finite_difference_check needs a scalar, got shape {loss.shape}")
        backward(loss, tape)
    worst = 0.0
    for t in wrt:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        a_flat = np.asarray(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            rel = abs(a_flat[i] - numeric) / (abs(a_flat[i]) + abs(numeric) + 1e-12)
            worst = max(worst, rel)
    return worst


def _param(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True, dtype=np.float64)


def _functional(rng, t: Tensor) -> Callable[[Tensor], Tensor]:
    """Fixed random linear functional collapsing an op output to a scalar."""
    w = Tensor(rng.normal(size=t.shape), dtype=np.float64)

    def reduce(out: Tensor) -> Tensor:
        return ad.sum_(ad.mul(out, w))

    return reduce


def _simplex(rng, n: int) -> np.ndarray:
    x = rng.uniform(0.2, 1.0, size=n)
    return x / x.sum()


# Each entry: name -> builder(rng) returning (fn, wrt). The builders keep
# probe points away from kinks (|x| floors for abs/maximum, interior clip).
def _check_add(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4)
    f = _functional(rng, Tensor(np.zeros((3, 4))))
    return lambda: f(ad.add(a, b)), [a, b]


def _check_sub(rng):
    a, b = _param(rng, 2, 3), _param(rng, 2, 3)
    f = _functional(rng, a)
    return lambda: f(ad.sub(a, b)), [a, b]


def _check_mul(rng):
    a, b = _param(rng, 3, 2), _param(rng, 2)
    f = _functional(rng, a)
    return lambda: f(ad.mul(a, b)), [a, b]


def _check_div(rng):
    a = _param(rng, 3, 2)
    b = Tensor(rng.uniform(0.5, 1.5, size=(3, 2)), requires_grad=True, dtype=np.float64)
    f = _functional(rng, a)
    return lambda: f(ad.div(a, b)), [a, b]


def _check_neg(rng):
    a = _param(rng, 5)
    f = _functional(rng, a)
    return lambda: f(ad.neg(a)), [a]


def _check_power(rng):
    a = Tensor(rng.uniform(0.5, 2.0, size=4), requires_grad=True, dtype=np.float64)
    f = _functional(rng, a)
    return lambda: f(ad.power(a, 3.0)), [a]


def _check_matmul(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4, 2)
    f = _functional(rng, Tensor(np.zeros((3, 2))))
    return lambda: f(ad.matmul(a, b)), [a, b]


def _check_matmul_batched(rng):
    a, b = _param(rng, 2, 3, 4), _param(rng, 4, 2)
    f = _functional(rng, Tensor(np.zeros((2, 3, 2))))
    return lambda: f(ad.matmul(a, b)), [a, b]


def _check_tanh(rng):
    a = _param(rng, 6)
    f = _functional(rng, a)
    return lambda: f(ad.tanh(a)), [a]


def _check_sigmoid(rng):
    a = _param(rng, 6)
    f = _functional(rng, a)
    return lambda: f(ad.sigmoid(a)), [a]


def _check_exp(rng):
    a = _param(rng, 5)
    f = _functional(rng, a)
    return lambda: f(ad.exp(a)), [a]


def _check_log(rng):
    a = Tensor(rng.uniform(0.5, 3.0, size=5), requires_grad=True, dtype=np.float64)
    f = _functional(rng, a)
    return lambda: f(ad.log(a)), [a]


def _check_sqrt(rng):
    a = Tensor(rng.uniform(0.5, 3.0, size=5), requires_grad=True, dtype=np.float64)
    f = _functional(rng, a)
    return lambda: f(ad.sqrt(a)), [a]


def _check_abs(rng):
    vals = rng.uniform(0.2, 2.0, size=6) * rng.choice([-1.0, 1.0], size=6)
    a = Tensor(vals, requires_grad=True, dtype=np.float64)
    f = _functional(rng, a)
    return lambda: f(ad.absolute(a)), [a]


def _check_maximum(rng):
    vals = rng.normal(size=6)
    vals[np.abs(vals) < 0.1] += 0.5
    a = Tensor(vals, requires_grad=True, dtype=np.float64)
    f = _functional(rng, a)
    return lambda: f(ad.maximum(a, 0.0)), [a]


def _check_clip(rng):
    a = Tensor(rng.uniform(-0.8, 0.8, size=6), requires_grad=True, dtype=np.float64)
    f = _functional(rng, a)
    return lambda: f(ad.clip(a, -1.0, 1.0)), [a]


def _check_sum(rng):
    a = _param(rng, 3, 4)
    f = _functional(rng, Tensor(np.zeros(3)))
    return lambda: f(ad.sum_(a, axis=1)), [a]


def _check_mean(rng):
    a = _param(rng, 3, 4)
    f = _functional(rng, Tensor(np.zeros(4)))
    return lambda: f(ad.mean(a, axis=0)), [a]


def _check_reshape_transpose(rng):
    a = _param(rng, 3, 4)
    f = _functional(rng, Tensor(np.zeros((4, 3))))
    return lambda: f(ad.transpose(ad.reshape(a, (3, 4)), (1, 0))), [a]


def _check_concat(rng):
    a, b = _param(rng, 2, 3), _param(rng, 2, 2)
    f = _functional(rng, Tensor(np.zeros((2, 5))))
    return lambda: f(ad.concat([a, b], axis=1)), [a, b]


def _check_softmax(rng):
    a = _param(rng, 7)
    f = _functional(rng, a)
    return lambda: f(ad.softmax(a)), [a]


def _check_softmax_composed(rng):
    # softmax over a dot-product chain, the shape attention uses
    a, b = _param(rng, 4, 3), _param(rng, 3, 4)
    f = _functional(rng, Tensor(np.zeros((4, 4))))
    return lambda: f(ad.softmax(ad.matmul(a, b), axis=-1)), [a, b]


def _check_cosine(rng):
    u, v = _param(rng, 6), _param(rng, 6)
    return lambda: ad.cosine_similarity(u, v), [u, v]


def _check_kl(rng):
    p = Tensor(_simplex(rng, 5), requires_grad=True, dtype=np.float64)
    q = Tensor(_simplex(rng, 5), requires_grad=True, dtype=np.float64)
    # probe step must stay inside the op's 1e-6 simplex tolerance
    return lambda: ad.kl_divergence(p, q), [p, q], 5e-7


def _check_avg_pool(rng):
    a = _param(rng, 2, 3, 4, 4)
    f = _functional(rng, Tensor(np.zeros((2, 3))))
    return lambda: f(ad.avg_pool_spatial(a)), [a]


def _check_weighted_sum(rng):
    xs = [_param(rng, 5) for _ in range(3)]
    logits = _param(rng, 3)
    f = _functional(rng, xs[0])
    return lambda: f(ad.weighted_sum(xs, logits)), xs + [logits]


def _check_l2_norm(rng):
    a = _param(rng, 4, 5)
    f = _functional(rng, Tensor(np.zeros(4)))
    return lambda: f(ad.l2_norm(a, axis=-1)), [a]


def _check_loss_dis(rng):
    from .motion import disentanglement_loss

    z_s = _param(rng, 2, 8)
    z_d = _param(rng, 2, 8)
    # keep the hinge active so the gradient is informative
    z_d.data = 0.7 * z_s.data + 0.3 * z_d.data
    return lambda: disentanglement_loss(z_s, z_d, xi=0.1), [z_s, z_d]


def _check_loss_dmem(rng):
    from .memory import memory_loss

    a, b = _param(rng, 3, 6), _param(rng, 3, 6)
    return lambda: memory_loss(a, b), [a, b]


def _check_loss_align(rng):
    from .memory import MemoryBanks, address_driven, address_motion_source, alignment_loss

    banks = MemoryBanks(5, 4, 3, rng, dtype=np.float64)
    f_d = _param(rng, 2, 4)
    f_s = _param(rng, 2, 4)
    z = _param(rng, 2, 3)

    def fn():
        return alignment_loss(address_motion_source(f_s, z, banks), address_driven(f_d, banks))

    return fn, [f_s, z, banks.m_ms]


def _check_loss_rec(rng):
    from .model import reconstruction_loss

    a, b = _param(rng, 3, 7), _param(rng, 3, 7)
    return lambda: reconstruction_loss(a, b), [a, b]


def _check_loss_adv(rng):
    from .model import adversarial_loss, generator_adversarial_loss

    logits_r = _param(rng, 4)
    logits_f = _param(rng, 4)

    def fn():
        d_real = ad.sigmoid(logits_r)
        d_fake = ad.sigmoid(logits_f)
        return ad.add(adversarial_loss(d_real, d_fake), generator_adversarial_loss(d_fake))

    return fn, [logits_r, logits_f]


CHECKS = {
    "add": _check_add,
    "sub": _check_sub,
    "mul": _check_mul,
    "div": _check_div,
    "neg": _check_neg,
    "power": _check_power,
    "matmul": _check_matmul,
    "matmul_batched": _check_matmul_batched,
    "tanh": _check_tanh,
    "sigmoid": _check_sigmoid,
    "exp": _check_exp,
    "log": _check_log,
    "sqrt": _check_sqrt,
    "abs": _check_abs,
    "maximum": _check_maximum,
    "clip": _check_clip,
    "sum": _check_sum,
    "mean": _check_mean,
    "reshape_transpose": _check_reshape_transpose,
    "concat": _check_concat,
    "softmax": _check_softmax,
    "softmax_dot_chain": _check_softmax_composed,
    "cosine_similarity": _check_cosine,
    "kl_divergence": _check_kl,
    "avg_pool_spatial": _check_avg_pool,
    "weighted_sum": _check_weighted_sum,
    "l2_norm": _check_l2_norm,
    "loss_dis": _check_loss_dis,
    "loss_dmem": _check_loss_dmem,
    "loss_align": _check_loss_align,
    "loss_rec": _check_loss_rec,
    "loss_adv": _check_loss_adv,
}


def run_gradcheck(probes: int = 100, tolerance: float = 1e-4, seed: int = 0) -> dict:
    """Run every registered check at ``probes`` random points.

    Returns a machine-readable report with the worst relative error per check.
    """
    rng = np.random.default_rng(seed)
    results = {}
    for name, builder in CHECKS.items():
        worst = 0.0
        for _ in range(probes):
            built = builder(rng)
            fn, wrt = built[0], built[1]
            h = built[2] if len(built) > 2 else 1e-5
            worst = max(worst, finite_difference_check(fn, wrt, h=h))
        results[name] = {"max_rel_error": worst, "passed": bool(worst < tolerance)}
    report = {
        "probes": probes,
        "tolerance": tolerance,
        "all_passed": all(r["passed"] for r in results.values()),
        "checks": results,
    }
    return report
