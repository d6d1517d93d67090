"""Training loops for the generator, the center mapper and the classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dgz.errors import ContractError, PoisonedGradientError, TrainingDivergedError
from dgz.losses import (
    LogitContext,
    attribute_augment,
    center_mse,
    classifier_loss,
    critic,
    fgm_attribute,
    generate,
    l2_penalty,
    wgan_gp_losses,
)
from dgz.metrics import MetricsReport, gzsl_accuracy, intra_accuracy, per_class_accuracy
from dgz.nets import Adam, Mlp, MlpSpec, init_mlp, mlp_apply, mlp_forward
from dgz.tensor_core import Tape, Tensor, grad, mean, no_record


def _dtype(cfg):
    return np.dtype(cfg.dtype)


def _batches(n, batch, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch):
        yield perm[start : start + batch]


def _step(opt, tape, loss, stage, epoch):
    if not np.isfinite(loss.value).all():
        raise TrainingDivergedError(stage, epoch, "loss is not finite")
    grads = grad(tape, loss, opt.net.parameters())
    try:
        opt.step(grads)
    except PoisonedGradientError as exc:
        raise TrainingDivergedError(stage, epoch, str(exc)) from None
    return float(loss.value)


# --- generator ---------------------------------------------------------------------


def generator_specs(d_x, d_a, cfg):
    nz = (cfg.noise_dim if cfg.noise_dim >= 0 else d_a) if cfg.use_prior else 0
    out_act = "relu" if cfg.output_relu else "none"
    g_spec = MlpSpec((nz + d_a,) + tuple(cfg.g_hidden) + (d_x,), "leaky_relu", cfg.slope, out_act)
    d_spec = MlpSpec((d_x + d_a,) + tuple(cfg.d_hidden) + (1,), "leaky_relu", cfg.slope, "none")
    return g_spec, d_spec


def fit_wgan(x, labels, attrs, cfg, curves=None, stage="generator"):
    """Conditional WGAN-GP on ``x`` whose rows belong to classes ``labels``.

    Each generator step follows ``cfg.critic_iters`` critic steps, all on
    fresh random batches.  The generator's attribute input is augmented
    with ``cfg.sigma`` Gaussian noise; the critic sees clean attributes.
    With ``cfg.g_ema > 0`` the returned generator is the exponential moving
    average of the generator weights over the updates.  Returns ``(G, D)``.
    """
    dt = _dtype(cfg)
    x = np.asarray(x, dtype=dt)
    attrs = np.asarray(attrs, dtype=dt)
    labels = np.asarray(labels)
    n = x.shape[0]
    if n == 0:
        raise ContractError("generator training needs seen-class samples")
    g_spec, d_spec = generator_specs(x.shape[1], attrs.shape[1], cfg)
    init = cfg.rng(f"{stage}-init")
    g = init_mlp(g_spec, init, dt)
    d = init_mlp(d_spec, init, dt)
    rng = cfg.rng(f"{stage}-train")
    opt_g = Adam(g, cfg.lr, cfg.gan_beta1, cfg.beta2)
    opt_d = Adam(d, cfg.lr, cfg.gan_beta1, cfg.beta2)
    batch = min(cfg.batch_size, n)
    steps = math.ceil(n / batch)
    hist = {"epoch": [], "d_loss": [], "g_loss": []}
    avg = [a.copy() for a in g.arrays()] if cfg.g_ema > 0 else None

    for epoch in range(cfg.gen_epochs):
        d_losses, g_losses = [], []
        for _ in range(steps):
            for _ in range(cfg.critic_iters):
                idx = rng.choice(n, batch)
                ab = attrs[labels[idx]]
                ga = attribute_augment(ab, cfg.sigma, rng)
                tape = Tape()
                d_loss, _ = wgan_gp_losses(g, d, x[idx], ab, rng, cfg.lam0, tape, g_attrs=ga, detach_fake=True)
                d_losses.append(_step(opt_d, tape, d_loss, stage, epoch))
            idx = rng.choice(n, batch)
            ab = attrs[labels[idx]]
            ga = attribute_augment(ab, cfg.sigma, rng)
            nz = g.d_in - ab.shape[1]
            z = rng.normal((batch, nz)).astype(dt) if nz else None
            if cfg.gen_reg == "fgm":
                ga = fgm_attribute(lambda a: -mean(critic(d, generate(g, a, rng, z), ab)), ga, cfg.fgm_step)
            with Tape() as tape:
                fake = generate(g, ga, rng, z)
                g_loss = -mean(critic(d, fake, ab))
                if cfg.gen_reg == "l2":
                    g_loss = g_loss + l2_penalty(g, cfg.l2_coeff)
            g_losses.append(_step(opt_g, tape, g_loss, stage, epoch))
            if avg is not None:
                for a, p in zip(avg, g.arrays()):
                    a *= cfg.g_ema
                    a += (1.0 - cfg.g_ema) * p
        hist["epoch"].append(epoch)
        hist["d_loss"].append(float(np.mean(d_losses)))
        hist["g_loss"].append(float(np.mean(g_losses)))
    if curves is not None:
        curves[stage] = hist
    if avg is not None:
        g = g.copy()
        g.load_arrays(avg)
    return g, d


def train_generator(dataset, cfg, curves=None):
    """Train G on the seen training split; returns the generator."""
    x, y = dataset.part("train_seen")
    g, _ = fit_wgan(x, y, dataset.attributes, cfg, curves)
    return g


def generate_samples(g, attrs, n_per_row, rng, z=None):
    """``n_per_row`` generated rows for each attribute row, in row order."""
    attrs = np.asarray(attrs, dtype=g.weights[0].dtype)
    rep = np.repeat(attrs, n_per_row, axis=0)
    with no_record():
        return generate(g, Tensor(rep), rng, z).value.astype(np.float64)


# --- center mapper -------------------------------------------------------------------


def train_center_mapper(dataset, cfg, curves=None):
    """Attribute -> visual center regressor fit by mean squared distance."""
    dt = _dtype(cfg)
    x, y = dataset.part("train_seen")
    if x.shape[0] == 0:
        raise ContractError("center mapper training needs seen-class samples")
    x = x.astype(dt)
    attrs = dataset.attributes.astype(dt)
    spec = MlpSpec((dataset.d_a,) + tuple(cfg.mapper_hidden) + (dataset.d_x,), "leaky_relu", cfg.slope, "none")
    mapper = init_mlp(spec, cfg.rng("mapper-init"), dt)
    rng = cfg.rng("mapper-train")
    opt = Adam(mapper, cfg.lr, cfg.beta1, cfg.beta2)
    batch = min(cfg.batch_size, x.shape[0])
    hist = {"epoch": [], "loss": []}
    for epoch in range(cfg.mapper_epochs):
        losses = []
        for idx in _batches(x.shape[0], batch, rng):
            with Tape() as tape:
                loss = center_mse(mapper, attrs, x[idx], y[idx], cfg.mapper_squared)
            losses.append(_step(opt, tape, loss, "center_mapper", epoch))
        hist["epoch"].append(epoch)
        hist["loss"].append(float(np.mean(losses)))
    if curves is not None:
        curves["center_mapper"] = hist
    return mapper


# --- classifier -------------------------------------------------------------------------


@dataclass
class TrainedModel:
    """Exactly one of ``mapping_net`` / ``free_weights`` produces class weight rows."""

    config: object
    mapping_net: Mlp | None = None
    free_weights: np.ndarray | None = None
    generator: Mlp | None = None
    center_mapper: Mlp | None = None
    curves: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.mapping_net is None) == (self.free_weights is None):
            raise ContractError("a model needs exactly one of mapping_net or free_weights")

    def class_weights(self, attrs):
        if self.mapping_net is not None:
            return mlp_forward(self.mapping_net, np.asarray(attrs)).astype(np.float64)
        return np.asarray(self.free_weights, dtype=np.float64)


def train_classifier(dataset, pseudo, cfg, curves=None, resample=None):
    """Fit class weight rows on real seen plus pseudo-unseen rows.

    Weights are ``M(a_c)`` for every class (or a free matrix when
    ``cfg.use_mapping_net`` is off); features and weights are unit-normalized
    and logits divided by ``tau``.  The pseudo set stays fixed unless a
    ``resample`` callable is given and ``cfg.resample_pseudo`` is on.
    """
    dt = _dtype(cfg)
    x, y = dataset.part("train_seen")
    if pseudo is not None:
        if not np.isin(pseudo.labels, dataset.unseen_ids).all():
            raise ContractError("pseudo labels must be unseen class ids")
    attrs = dataset.attributes.astype(dt)
    k, d_x = dataset.n_classes, dataset.d_x
    init = cfg.rng("classifier-init")
    if cfg.use_mapping_net:
        spec = MlpSpec((dataset.d_a,) + tuple(cfg.m_hidden) + (d_x,), "leaky_relu", cfg.slope, "none")
        net = init_mlp(spec, init, dt)
        params_owner = net
    else:
        w0 = (init.normal((k, d_x)) / np.sqrt(d_x)).astype(dt)
        net = None
        params_owner = _FreeWeights(Tensor(w0, requires_grad=True))
    opt = Adam(params_owner, cfg.lr, cfg.beta1, cfg.beta2)
    rng = cfg.rng("classifier-train")
    hist = {"epoch": [], "loss": []}

    def pool(ps):
        if ps is None:
            return x.astype(dt), y
        return (
            np.concatenate([x, ps.features]).astype(dt),
            np.concatenate([y, ps.labels]),
        )

    xs, ys = pool(pseudo)
    for epoch in range(cfg.cls_epochs):
        if epoch and cfg.resample_pseudo and resample is not None:
            xs, ys = pool(resample(epoch))
        losses = []
        for idx in _batches(xs.shape[0], min(cfg.batch_size, xs.shape[0]), rng):
            with Tape() as tape:
                w = mlp_apply(net, Tensor(attrs)) if net is not None else params_owner.weights[0]
                ctx = LogitContext.normalized(
                    Tensor(xs[idx]), w, cfg.tau, ys[idx], dataset.seen_ids, dataset.unseen_ids
                )
                loss = classifier_loss(cfg.cls_loss, ctx, cfg.lam1, cfg.lam2, cfg.indicator)
            losses.append(_step(opt, tape, loss, "classifier", epoch))
        hist["epoch"].append(epoch)
        hist["loss"].append(float(np.mean(losses)))
    if curves is not None:
        curves["classifier"] = hist
    if net is not None:
        return TrainedModel(cfg, mapping_net=net, curves=dict(curves or {}))
    return TrainedModel(cfg, free_weights=params_owner.weights[0].value.copy(), curves=dict(curves or {}))


class _FreeWeights:
    """Adapter giving a bare weight matrix the parameter interface Adam expects."""

    def __init__(self, w):
        self.weights = [w]

    def parameters(self):
        return list(self.weights)

    def arrays(self):
        return [self.weights[0].value]

    def load_arrays(self, arrays):
        (w,) = arrays
        self.weights[0] = Tensor(w, requires_grad=True)


# --- inference and evaluation ----------------------------------------------------------


def class_scores(model, attrs, x):
    """Cosine similarity of each feature row with each class weight row."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ContractError("a feature row has zero norm; its direction is undefined")
    w = model.class_weights(attrs)
    wn = np.linalg.norm(w, axis=1, keepdims=True)
    if (wn == 0).any():
        raise ContractError("a class weight row has zero norm")
    return (x / norms) @ (w / wn).T


def predict(model, attrs, x):
    """Most similar class per row; ties go to the lowest class id."""
    return np.argmax(class_scores(model, attrs, x), axis=1)


def evaluate(model, dataset, cmmd_value=None, cacd_value=None, meta=None):
    """GZSL and intra-class accuracies on the test partitions."""
    xs, ys = dataset.part("test_seen")
    xu, yu = dataset.part("test_unseen")
    x = np.concatenate([xs, xu])
    y = np.concatenate([ys, yu])
    scores = class_scores(model, dataset.attributes, x)
    pred = np.argmax(scores, axis=1)
    a_u, a_s, h = gzsl_accuracy(pred, y, dataset.seen_ids, dataset.unseen_ids)
    n_s = ys.shape[0]
    a_is = intra_accuracy(scores[:n_s], ys, dataset.seen_ids) if n_s else 0.0
    a_iu = intra_accuracy(scores[n_s:], yu, dataset.unseen_ids) if yu.size else 0.0
    per_class = per_class_accuracy(pred, y, np.unique(y))
    info = dict(meta or {})
    info["seen_to_unseen"] = int(np.isin(pred[:n_s], dataset.unseen_ids).sum())
    info["unseen_to_seen"] = int(np.isin(pred[n_s:], dataset.seen_ids).sum())
    return MetricsReport(
        A_u=a_u,
        A_s=a_s,
        H=h,
        T1=a_iu,
        cmmd=cmmd_value,
        cacd=cacd_value,
        A_is=a_is,
        A_iu=a_iu,
        per_class=per_class,
        curves=dict(model.curves),
        meta=info,
    )


def seen_to_unseen_errors(model, dataset):
    """Seen test samples assigned to an unseen class."""
    xs, _ = dataset.part("test_seen")
    pred = predict(model, dataset.attributes, xs)
    return int(np.isin(pred, dataset.unseen_ids).sum())
