"""Randomized self-checks of the loss gradients, run by ``dgz gradcheck``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dgz.grad_analysis import (
    ce_grad_decomposition,
    finite_diff_check,
    max_relative_error,
    rce_unseen_grad,
)
from dgz.losses import (
    LogitContext,
    center_mse,
    cross_entropy,
    incremental_ce,
    l2_penalty,
    revised_ce,
    wgan_gp_losses,
)
from dgz.nets import Mlp, MlpSpec, init_mlp
from dgz.tensor_core import Rng, Tape, Tensor, grad


@dataclass
class CheckResult:
    name: str
    instances: int
    worst: float
    tol: float

    @property
    def passed(self):
        return bool(self.worst < self.tol)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<28} {self.instances:>5} {self.worst:>12.3e} {self.tol:>9.1e}  {status}"


def random_context(rng, max_classes=20, max_n=200, max_d=16, requires_grad=True):
    """Random raw-logit context with at least one seen and one unseen class."""
    k = int(rng.integers(2, max_classes + 1))
    n = int(rng.integers(2, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    n_unseen = int(rng.integers(1, k))
    perm = rng.permutation(k)
    unseen = np.sort(perm[:n_unseen])
    seen = np.sort(perm[n_unseen:])
    labels = rng.integers(0, k, n)
    x = rng.normal((n, d))
    w = rng.normal((k, d))
    tau = float(0.05 + rng.uniform())
    return LogitContext(x, Tensor(w, requires_grad=requires_grad), tau, labels, seen, unseen)


def _weight_grad(ctx, loss_fn):
    with Tape() as tape:
        loss = loss_fn(ctx)
    (g,) = grad(tape, loss, [ctx.class_weights])
    return g


def check_ce_identity(rng, instances=100):
    worst = 0.0
    for _ in range(instances):
        ctx = random_context(rng)
        g = _weight_grad(ctx, cross_entropy)
        k = int(rng.integers(0, ctx.n_classes))
        pull, push = ce_grad_decomposition(ctx, k)
        worst = max(worst, max_relative_error(-g[k], pull + push))
    return CheckResult("ce pull/push identity", instances, worst, 1e-8)


def check_unseen_identity(rng, instances=100):
    worst = 0.0
    for _ in range(instances):
        ctx = random_context(rng)
        lam1 = float(rng.uniform() * 2.0)
        lam2 = float(rng.uniform() * 2.0)
        g = _weight_grad(ctx, lambda c: incremental_ce(c, lam1, lam2))
        u = int(ctx.unseen_ids[rng.integers(0, ctx.unseen_ids.size)])
        terms = rce_unseen_grad(ctx, lam1, lam2, u)
        worst = max(worst, max_relative_error(-g[u], terms.total()))
    return CheckResult("unseen-weight identity", instances, worst, 1e-8)


def check_incremental_reduction(rng, instances=100):
    worst = 0.0
    for _ in range(instances):
        ctx = random_context(rng, requires_grad=False)
        a = float(incremental_ce(ctx, 1.0, 1.0).value)
        b = float(cross_entropy(ctx).value)
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    return CheckResult("incremental(1,1) == ce", instances, worst, 1e-10)


def _small_context(rng, params):
    x, w = params
    return LogitContext(x, w, 0.3, rng["labels"], rng["seen"], rng["unseen"])


def check_finite_differences(rng, instances=5):
    """Tape vs central differences for every classifier loss and the center loss."""
    worst = 0.0
    for _ in range(instances):
        k, n, d = 5, 12, 4
        fixed = {
            "labels": rng.integers(0, k, n),
            "seen": np.array([0, 1, 2]),
            "unseen": np.array([3, 4]),
        }
        x = rng.normal((n, d))
        w = rng.normal((k, d))
        losses = [
            cross_entropy,
            lambda c: incremental_ce(c, 0.3, 0.7),
            lambda c: revised_ce(c, 0.3, "code"),
            lambda c: revised_ce(c, 0.3, "paper"),
        ]
        for fn in losses:
            worst = max(worst, finite_diff_check(lambda ps, fn=fn: fn(_small_context(fixed, ps)), [x, w]))

        def normalized(ps):
            ctx = LogitContext.normalized(ps[0], ps[1], 0.3, fixed["labels"], fixed["seen"], fixed["unseen"])
            return revised_ce(ctx, 0.3)

        worst = max(worst, finite_diff_check(normalized, [x, w]))
        spec = MlpSpec((3, 6, d))
        mapper = init_mlp(spec, rng.substream(1))
        attrs = rng.normal((k, 3))

        def mse(ps):
            net = Mlp(spec, [ps[0], ps[2]], [ps[1], ps[3]])
            return center_mse(net, attrs, x, fixed["labels"]) + l2_penalty(net, 0.01)

        worst = max(worst, finite_diff_check(mse, mapper.arrays()))
    return CheckResult("losses vs finite diff", instances, worst, 1e-5)


def check_wgan_double_backprop(rng, instances=3):
    """Critic-loss gradient (through the gradient penalty) vs central differences."""
    worst = 0.0
    for _ in range(instances):
        d_x, d_a, n = 3, 2, 5
        g = init_mlp(MlpSpec((2 + d_a, 6, d_x)), rng.substream(10))
        d_spec = MlpSpec((d_x + d_a, 6, 1))
        d = init_mlp(d_spec, rng.substream(11))
        x = rng.normal((n, d_x))
        a = rng.normal((n, d_a))
        seed = int(rng.integers(0, 2**31))

        def d_loss(ps):
            net = Mlp(d_spec, [ps[0], ps[2]], [ps[1], ps[3]])
            loss, _ = wgan_gp_losses(g, net, x, a, Rng(seed), 10.0)
            return loss

        worst = max(worst, finite_diff_check(d_loss, d.arrays(), eps=1e-6))
    return CheckResult("wgan-gp double backprop", instances, worst, 1e-4)


def run_all(seed=0, instances=100):
    rng = Rng(seed)
    return [
        check_ce_identity(rng.substream(1), instances),
        check_unseen_identity(rng.substream(2), instances),
        check_incremental_reduction(rng.substream(3), instances),
        check_finite_differences(rng.substream(4)),
        check_wgan_double_backprop(rng.substream(5)),
    ]
