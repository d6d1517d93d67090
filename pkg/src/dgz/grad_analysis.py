"""Closed-form gradient decompositions of the classifier losses.

The functions here compute the per-class gradient terms analytically from
softmax probabilities (no autodiff), so they can be checked against tape
gradients.  Signs follow the negative gradient ``-dL/dW_k``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from dgz.errors import ContractError, NumericalError
from dgz.tensor_core import Tape, Tensor, grad


def softmax_probs(ctx):
    logits = ctx.features.value @ ctx.class_weights.value.T / ctx.tau
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _check_class(ctx, k):
    known = np.union1d(ctx.seen_ids, ctx.unseen_ids)
    if k not in known:
        raise ContractError(f"class id {k} is neither seen nor unseen")


def ce_grad_decomposition(ctx, k):
    """Split ``-dL_ce/dW_k`` into a pull toward class k's samples and a push by all samples.

    ``pull = sum_{y_i = k} x_i / (n tau)`` and
    ``push = -sum_j p_k(x_j) x_j / (n tau)``.
    """
    _check_class(ctx, k)
    x = ctx.features.value
    scale = 1.0 / (ctx.n * ctx.tau)
    p = softmax_probs(ctx)
    pull = x[ctx.labels == k].sum(axis=0) * scale
    push = -(p[:, k] @ x) * scale
    return pull, push


class UnseenGradTerms(NamedTuple):
    pull: np.ndarray
    push: np.ndarray
    leakage: np.ndarray

    def total(self):
        return self.pull + self.push + self.leakage


def rce_unseen_grad(ctx, lam1, lam2, u):
    """The three terms of ``-dL_inc/dW_u`` for an unseen class ``u``.

    ``pull`` and ``push`` come from pseudo-unseen samples (weighted by
    ``lam2``); ``leakage`` is the push exerted by seen samples, each scaled
    by ``lam1 p_u / (P_seen + lam1 P_unseen)``.
    """
    if u not in set(ctx.unseen_ids.tolist()):
        raise ContractError(f"class {u} is not an unseen class")
    x = ctx.features.value
    n, tau = ctx.n, ctx.tau
    p = softmax_probs(ctx)
    seen_rows = ctx.seen_rows()
    unseen_rows = ~seen_rows
    pull = lam2 / (n * tau) * x[ctx.labels == u].sum(axis=0)
    push = -lam2 / (n * tau) * (p[unseen_rows, u] @ x[unseen_rows])
    p_seen = p[:, ctx.seen_ids].sum(axis=1)
    p_unseen = p[:, ctx.unseen_ids].sum(axis=1)
    share = lam1 * p[:, u] / (p_seen + lam1 * p_unseen)
    leakage = -1.0 / (n * tau) * (share[seen_rows] @ x[seen_rows])
    return UnseenGradTerms(pull, push, leakage)


def max_relative_error(a, b):
    """``max|a - b| / max(max|a|, max|b|)`` over all coordinates."""
    a = np.concatenate([np.ravel(v) for v in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(v) for v in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    diff = np.abs(a - b).max(initial=0.0)
    if scale == 0.0:
        return diff
    return diff / scale


def numeric_gradient(loss_fn, params, eps=1e-5):
    """Central differences of ``loss_fn`` over every coordinate of ``params``."""
    if not eps > 0:
        raise ContractError("eps must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]

    def value(ps):
        out = loss_fn([Tensor(p) for p in ps])
        v = float(out.value if isinstance(out, Tensor) else out)
        if not np.isfinite(v):
            raise NumericalError("loss is not finite")
        return v

    grads = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = value(params)
            flat[j] = orig - eps
            lo = value(params)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def tape_gradient(loss_fn, params):
    leaves = [Tensor(np.array(p, dtype=np.float64), requires_grad=True) for p in params]
    with Tape() as tape:
        out = loss_fn(leaves)
    if not np.all(np.isfinite(out.value)):
        raise NumericalError("loss is not finite")
    return grad(tape, out, leaves)


def finite_diff_check(loss_fn, params, eps=1e-5):
    """Worst relative error between tape gradients and central differences.

    ``loss_fn`` takes a list of tensors (one per entry of ``params``) and
    returns a scalar tensor.  Meant for small instances: it costs two loss
    evaluations per coordinate.
    """
    if not eps > 0:
        raise ContractError("eps must be positive")
    analytic = tape_gradient(loss_fn, params)
    numeric = numeric_gradient(loss_fn, params, eps)
    return max_relative_error(analytic, numeric)
