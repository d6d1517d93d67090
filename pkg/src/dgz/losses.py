"""Loss functions: cross-entropy variants, WGAN-GP, and generator regularizers.

All losses return scalar :class:`~dgz.tensor_core.Tensor` values and are
recorded on the active tape, so parameter gradients come from
:func:`dgz.tensor_core.grad`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dgz.errors import ContractError, NumericalError, ShapeError
from dgz.nets import mlp_apply
from dgz.tensor_core import (
    Tape,
    Tensor,
    as_tensor,
    concat_cols,
    current_tape,
    exp,
    grad,
    log,
    matmul,
    mean,
    mul,
    normalize_rows,
    row_norm,
    sub,
    transpose,
    tsum,
)


@dataclass
class LogitContext:
    """Features, class weight rows and temperature defining ``logits = X W^T / tau``.

    Class ids index rows of ``class_weights``.  Use :meth:`normalized` to
    build a context with unit-norm feature and weight rows.
    """

    features: object
    class_weights: object
    tau: float
    labels: np.ndarray
    seen_ids: np.ndarray
    unseen_ids: np.ndarray

    def __post_init__(self):
        self.features = as_tensor(self.features)
        self.class_weights = as_tensor(self.class_weights)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.seen_ids = np.asarray(self.seen_ids, dtype=np.int64).reshape(-1)
        self.unseen_ids = np.asarray(self.unseen_ids, dtype=np.int64).reshape(-1)
        if not self.tau > 0:
            raise ContractError(f"tau must be positive, got {self.tau}")
        if self.features.ndim != 2 or self.class_weights.ndim != 2:
            raise ShapeError("features and class_weights must be 2-D")
        if self.features.shape[1] != self.class_weights.shape[1]:
            raise ShapeError(
                f"feature dim {self.features.shape[1]} != weight dim {self.class_weights.shape[1]}"
            )
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError("one label per feature row required")
        if np.intersect1d(self.seen_ids, self.unseen_ids).size:
            raise ContractError("seen and unseen class ids overlap")
        known = np.union1d(self.seen_ids, self.unseen_ids)
        k = self.n_classes
        if known.size and (known.min() < 0 or known.max() >= k):
            raise ContractError(f"class ids must index the {k} weight rows")
        bad = ~np.isin(self.labels, known)
        if bad.any():
            raise ContractError(f"label {int(self.labels[bad][0])} is outside the class set")

    @classmethod
    def normalized(cls, features, class_weights, tau, labels, seen_ids, unseen_ids):
        return cls(
            normalize_rows(features),
            normalize_rows(class_weights),
            tau,
            labels,
            seen_ids,
            unseen_ids,
        )

    @property
    def n(self):
        return self.labels.shape[0]

    @property
    def n_classes(self):
        return self.class_weights.shape[0]

    def logits(self):
        return mul(matmul(self.features, transpose(self.class_weights)), 1.0 / self.tau)

    def seen_rows(self):
        return np.isin(self.labels, self.seen_ids)

    def onehot(self):
        out = np.zeros((self.n, self.n_classes))
        out[np.arange(self.n), self.labels] = 1.0
        return out


def masked_ce(logits, labels, mask, row_weights=None):
    """Mean of ``w_i * (log sum_c M_ic exp(l_ic) - l_iy)``.

    ``mask`` and ``row_weights`` are constants.  The shift used for
    stability is the row max over unmasked entries; masked entries are
    clamped before exponentiation so they cannot overflow.
    """
    logits = as_tensor(logits)
    lv = logits.value
    n, k = lv.shape
    mask = np.asarray(mask, dtype=lv.dtype)
    labels = np.asarray(labels, dtype=np.int64)
    if mask[np.arange(n), labels].min(initial=1.0) <= 0:
        raise ContractError("mask must keep the true class of every row")
    active = mask > 0
    shift = np.where(active, lv, -np.inf).max(axis=1, keepdims=True)
    clamp = np.where(active, 0.0, np.maximum(lv - shift, 0.0))
    z = sub(logits, shift + clamp)
    onehot = np.zeros_like(lv)
    onehot[np.arange(n), labels] = 1.0
    lse = log(tsum(mul(exp(z), mask), axis=1, keepdims=True))
    true = tsum(mul(z, onehot), axis=1, keepdims=True)
    per = sub(lse, true)
    if row_weights is not None:
        per = mul(per, np.asarray(row_weights, dtype=lv.dtype).reshape(n, 1))
    return mean(per)


def cross_entropy(ctx):
    """Softmax cross-entropy over all classes, averaged over samples."""
    logits = ctx.logits()
    return masked_ce(logits, ctx.labels, np.ones(logits.shape))


def incremental_mask(ctx, lam1, lam2):
    """Mask and row weights expressing the seen-increment form of the loss."""
    if lam1 < 0 or lam2 < 0:
        raise ContractError("lambda_1 and lambda_2 must be non-negative")
    mask = np.ones((ctx.n, ctx.n_classes))
    seen = ctx.seen_rows()
    mask[np.ix_(seen, ctx.unseen_ids)] = lam1
    weights = np.where(seen, 1.0, lam2)
    return mask, weights


def incremental_ce(ctx, lam1, lam2):
    """Seen samples: ``-log(p_y / (P_seen + lam1 * P_unseen))``; pseudo-unseen samples: ``lam2 * -log p_y``."""
    mask, weights = incremental_mask(ctx, lam1, lam2)
    return masked_ce(ctx.logits(), ctx.labels, mask, weights)


def revised_mask(logit_values, labels, seen_ids, unseen_ids, lam1, indicator="code"):
    """Per-entry weights of the revised cross-entropy denominator.

    For a seen-labeled row, unseen columns are dropped except one: with
    ``indicator="code"`` the global argmax column when it is unseen, with
    ``indicator="paper"`` the top-scoring unseen column when it beats the
    true class.  That column gets weight ``lam1``.  Unseen-labeled rows keep
    every column.
    """
    if lam1 < 0:
        raise ContractError("lambda_1 must be non-negative")
    lv = np.asarray(logit_values)
    n, k = lv.shape
    labels = np.asarray(labels)
    mask = np.ones((n, k))
    seen = np.isin(labels, seen_ids)
    rows = np.flatnonzero(seen)
    mask[np.ix_(rows, unseen_ids)] = 0.0
    if rows.size and len(unseen_ids):
        if indicator == "code":
            top = np.argmax(lv[rows], axis=1)
            hit = np.isin(top, unseen_ids)
        elif indicator == "paper":
            sub_l = lv[np.ix_(rows, unseen_ids)]
            top = np.asarray(unseen_ids)[np.argmax(sub_l, axis=1)]
            hit = sub_l.max(axis=1) > lv[rows, labels[rows]]
        else:
            raise ContractError(f"unknown indicator variant {indicator!r}")
        mask[rows[hit], top[hit]] = lam1
    return mask


def revised_ce(ctx, lam1, indicator="code"):
    """Revised cross-entropy; the gating mask is treated as a constant."""
    logits = ctx.logits()
    mask = revised_mask(logits.value, ctx.labels, ctx.seen_ids, ctx.unseen_ids, lam1, indicator)
    return masked_ce(logits, ctx.labels, mask)


def classifier_loss(kind, ctx, lam1=0.0, lam2=1.0, indicator="code"):
    if kind == "revised":
        return revised_ce(ctx, lam1, indicator)
    if kind == "incremental":
        return incremental_ce(ctx, lam1, lam2)
    if kind == "vanilla":
        return cross_entropy(ctx)
    raise ContractError(f"unknown classifier loss {kind!r}")


# --- WGAN-GP -----------------------------------------------------------------


def noise_dim(g, attr_dim):
    nz = g.d_in - attr_dim
    if nz < 0:
        raise ShapeError(f"generator input {g.d_in} is narrower than attributes {attr_dim}")
    return nz


def generate(g, attrs, rng, z=None):
    """``G(z0, attrs)`` with ``z0`` standard normal; recorded if a tape is active."""
    attrs = as_tensor(attrs)
    nz = noise_dim(g, attrs.shape[1])
    if nz == 0:
        return mlp_apply(g, attrs)
    if z is None:
        z = rng.normal((attrs.shape[0], nz)).astype(attrs.dtype)
    return mlp_apply(g, concat_cols([Tensor(z), attrs]))


def critic(d, x, attrs):
    return mlp_apply(d, concat_cols([as_tensor(x), as_tensor(attrs)]))


def gradient_penalty(tape, d, x_real, x_fake, attrs, rng):
    """``mean((||grad_xhat D(xhat, a)||_2 - 1)^2)`` on random interpolates."""
    n = x_real.shape[0]
    alpha = rng.uniform((n, 1)).astype(x_real.dtype)
    x_hat = Tensor(alpha * x_real + (1.0 - alpha) * x_fake, requires_grad=True)
    with tape:
        out = critic(d, x_hat, attrs)
        (gx,) = grad(tape, tsum(out), [x_hat], create_graph=True)
        dev = sub(row_norm(gx), 1.0)
        pen = mean(mul(dev, dev))
    if not np.isfinite(pen.value).all():
        raise NumericalError("gradient penalty is not finite")
    return pen


def wgan_gp_losses(g, d, x_real, attrs, rng, lam0, tape=None, g_attrs=None, detach_fake=False):
    """Critic and generator losses of conditional WGAN-GP.

    ``d_loss = E[D(fake)] - E[D(real)] + lam0 * penalty`` and
    ``g_loss = -E[D(fake)]``, both conditioned on ``attrs``.  ``g_attrs``
    replaces the generator's attribute input (attribute augmentation).
    Without ``tape`` the active tape is used, or a fresh one.
    Draw order from ``rng``: generator noise, then interpolation weights.
    """
    if lam0 < 0:
        raise ContractError("lambda_0 must be non-negative")
    x_real = np.asarray(x_real)
    attrs = np.asarray(attrs, dtype=x_real.dtype)
    if attrs.shape[0] != x_real.shape[0]:
        raise ShapeError("one attribute row per real sample required")
    if tape is None:
        tape = current_tape()
    if tape is None:
        tape = Tape()
    g_in = attrs if g_attrs is None else np.asarray(g_attrs, dtype=x_real.dtype)
    with tape:
        fake = generate(g, g_in, rng)
        fake_for_d = Tensor(fake.value) if detach_fake else fake
        d_real = mean(critic(d, x_real, attrs))
        d_fake = mean(critic(d, fake_for_d, attrs))
    pen = gradient_penalty(tape, d, x_real, fake.value, attrs, rng)
    with tape:
        d_loss = sub(d_fake, d_real) + mul(pen, lam0)
        g_loss = -mean(critic(d, fake, attrs)) if detach_fake else -d_fake
    return d_loss, g_loss


def attribute_augment(attrs, sigma, rng):
    """``attrs + sigma * N(0, I)``; draws nothing when ``sigma == 0``."""
    if sigma < 0:
        raise ContractError("sigma must be non-negative")
    attrs = np.asarray(attrs)
    if sigma == 0:
        return attrs.copy()
    return attrs + sigma * rng.normal(attrs.shape).astype(attrs.dtype)


# --- regularizers and auxiliary losses ----------------------------------------


def center_mse(mapper, attrs_by_class, x, labels, squared=True):
    """Mean (squared) distance between ``mapper(a_y)`` and each sample."""
    attrs_by_class = np.asarray(attrs_by_class)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= attrs_by_class.shape[0]):
        raise ContractError("center_mse: a label has no attribute row")
    centers = mlp_apply(mapper, Tensor(attrs_by_class[labels].astype(mapper.weights[0].dtype)))
    diff = sub(centers, x)
    if squared:
        return mean(tsum(mul(diff, diff), axis=1))
    return mean(row_norm(diff))


def l2_penalty(net, coeff):
    """``coeff`` times the summed squared Frobenius norms of the weight matrices."""
    if coeff < 0:
        raise ContractError("coeff must be non-negative")
    total = None
    for w in net.weights:
        term = tsum(mul(w, w))
        total = term if total is None else total + term
    return mul(total, float(coeff))


def fgm_attribute(loss_fn, attrs, step):
    """One row-normalized gradient-ascent step on the attributes.

    ``loss_fn`` maps an attribute tensor to a scalar tensor.  Rows whose
    gradient is zero are returned unchanged.
    """
    if step < 0:
        raise ContractError("step must be non-negative")
    attrs = np.asarray(attrs)
    if step == 0:
        return attrs.copy()
    a = Tensor(attrs, requires_grad=True)
    with Tape() as tape:
        loss = loss_fn(a)
    (g,) = grad(tape, loss, [a])
    norms = np.sqrt((g * g).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    return attrs + step * np.where(norms > 0, g / safe, 0.0)
