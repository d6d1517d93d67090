"""Experiment flows built on the training loops: DGZ, ablations, sweeps and studies."""

from __future__ import annotations

import numpy as np

from dgz.distributions import PseudoParams, build_pseudo_unseen, substitute_centers
from dgz.errors import ContractError
from dgz.losses import attribute_augment
from dgz.metrics import MetricsReport, cacd, cmmd
from dgz.pipelines.config import TrainConfig
from dgz.pipelines.training import (
    evaluate,
    fit_wgan,
    generate_samples,
    train_center_mapper,
    train_classifier,
    train_generator,
)
from dgz.tensor_core import Rng

ABLATIONS = ("i", "ii", "iii", "iv", "v", "vi")


def pseudo_params(cfg):
    return PseudoParams(svg_scale=cfg.svg_scale, lvg_scale=cfg.lvg_scale, covariance=cfg.covariance)


def build_pseudo(dataset, cfg, kind=None, generator=None, mapper=None, centers=None, stage="pseudo"):
    """Pseudo-unseen set of ``cfg.per_class_gen`` rows per unseen class.

    GEN needs ``generator``; GC_SCG needs ``mapper``.  SVG/LVG/SCG are
    placed on ``centers`` (rows in ascending unseen id order), by default
    the centers of a GEN set drawn from ``generator``.
    """
    kind = kind or cfg.dist_kind
    ids = np.sort(dataset.unseen_ids)
    attrs = dataset.attributes[ids]
    xs, ys = dataset.part("train_seen")
    rng = cfg.rng(stage)
    if kind in ("SVG", "LVG", "SCG") and centers is None:
        if generator is None:
            raise ContractError(f"{kind} needs class centers or a generator to take them from")
        gen = build_pseudo_unseen("GEN", ids, cfg.per_class_gen, rng, generator=generator, attrs=attrs)
        centers = gen.centers()
    return build_pseudo_unseen(
        kind,
        ids,
        cfg.per_class_gen,
        rng,
        centers=centers,
        train_features=xs,
        train_labels=ys,
        params=pseudo_params(cfg),
        generator=generator,
        mapper=mapper,
        attrs=attrs,
    )


def pseudo_fitness(dataset, pseudo, rng=None):
    """``(cmmd, cacd)`` of a pseudo set against the unseen test data.

    Each class compares ``min(n_real, n_pseudo)`` rows from both sides,
    the real rows drawn without replacement when there are more.
    """
    rng = rng or Rng(0)
    xu, yu = dataset.part("test_unseen")
    real, fake, real_c, fake_c = {}, {}, [], []
    for c, rows in sorted(pseudo.by_class().items()):
        r = xu[yu == c]
        if r.shape[0] == 0:
            raise ContractError(f"unseen class {c} has no test samples")
        k = min(r.shape[0], rows.shape[0])
        real[c] = r[np.sort(rng.substream(c).choice(r.shape[0], k))]
        fake[c] = rows[:k]
        real_c.append(r.mean(axis=0))
        fake_c.append(rows.mean(axis=0))
    return cmmd(real, fake), cacd(np.array(fake_c), np.array(real_c))


def run_dgz(dataset, cfg, generator=None, mapper=None):
    """Full pipeline for ``cfg.dist_kind``; returns ``(model, report)``.

    A trained ``generator`` (or center ``mapper``) may be passed in to be
    shared across runs; it is trained here otherwise.
    """
    curves = {}
    kind = cfg.dist_kind
    if kind == "GC_SCG":
        mapper = mapper or train_center_mapper(dataset, cfg, curves)
    else:
        generator = generator or train_generator(dataset, cfg, curves)
    pseudo = build_pseudo(dataset, cfg, kind, generator=generator, mapper=mapper)
    resample = None
    if cfg.resample_pseudo:
        def resample(epoch):
            return build_pseudo(dataset, cfg, kind, generator, mapper, stage=f"pseudo-{epoch}")
    model = train_classifier(dataset, pseudo, cfg, curves, resample)
    model.generator = generator
    model.center_mapper = mapper
    cm, cd = pseudo_fitness(dataset, pseudo)
    meta = {"dist_kind": kind, "cls_loss": cfg.cls_loss, "mapping_net": cfg.use_mapping_net, "sigma": cfg.sigma}
    if kind in ("SCG", "GC_SCG"):
        meta["center_source"] = "mapper" if kind == "GC_SCG" else "generator"
    return model, evaluate(model, dataset, cm, cd, meta)


def ablation_config(cfg, variant):
    """Configuration of ablation variant ``i``..``vi`` derived from ``cfg``."""
    changes = {
        "i": {"sigma": 0.0},
        "ii": {"cls_loss": "vanilla"},
        "iii": {"use_mapping_net": False},
        "iv": {"cls_loss": "vanilla", "use_mapping_net": False},
        "v": {"dist_kind": "SCG"},
        "vi": {"dist_kind": "GC_SCG"},
    }
    if variant not in changes:
        raise ContractError(f"ablation variant must be one of {ABLATIONS}, got {variant!r}")
    return cfg.replace(**changes[variant])


def run_ablation(dataset, variant, cfg, generator=None):
    """Report of one ablation variant; ``variant="full"`` runs the unablated model."""
    vcfg = cfg if variant == "full" else ablation_config(cfg, variant)
    _, report = run_dgz(dataset, vcfg, generator=generator if vcfg.sigma == cfg.sigma else None)
    report.meta["variant"] = variant
    return report


def ablation_suite(dataset, cfg, variants=("full",) + ABLATIONS):
    """Reports for several variants, sharing one generator where the config allows."""
    shared = None
    out = {}
    for v in variants:
        vcfg = cfg if v == "full" else ablation_config(cfg, v)
        gen = None
        if vcfg.dist_kind != "GC_SCG" and vcfg.sigma == cfg.sigma:
            shared = shared or train_generator(dataset, cfg)
            gen = shared
        out[v] = run_ablation(dataset, v, cfg, generator=gen)
    return out


def lambda1_sweep(dataset, cfg, values, generator=None):
    """Reports (one per ``lam1``) sharing a generator and every seed."""
    generator = generator or train_generator(dataset, cfg)
    pseudo = build_pseudo(dataset, cfg, "GEN", generator=generator)
    reports = []
    for lam1 in values:
        c = cfg.replace(lam1=float(lam1))
        model = train_classifier(dataset, pseudo, c)
        rep = evaluate(model, dataset, meta={"lam1": float(lam1)})
        reports.append(rep)
    return reports


def probe_dist(dataset, cfg, kinds=("GEN", "SVG", "LVG", "SCG"), generator=None):
    """One report per pseudo distribution; Gaussians sit on the GEN centers."""
    generator = generator or train_generator(dataset, cfg)
    ids = np.sort(dataset.unseen_ids)
    gen = build_pseudo(dataset, cfg, "GEN", generator=generator)
    centers = gen.centers()
    out = {}
    for kind in kinds:
        if kind == "GEN":
            pseudo = gen
        else:
            pseudo = build_pseudo(dataset, cfg, kind, generator=generator, centers=centers)
            pseudo = substitute_centers(pseudo, centers)
        model = train_classifier(dataset, pseudo, cfg.replace(dist_kind=kind))
        cm, cd = pseudo_fitness(dataset, pseudo)
        out[kind] = evaluate(model, dataset, cm, cd, {"dist_kind": kind, "classes": ids.tolist()})
    return out


# --- toy 2-D study -------------------------------------------------------------------


TOY_SIGMAS = (0.0, 0.04, 1.0)


TOY_PROTOCOLS = ("augment", "prior", "sweep")


def toy2d(cfg, sigmas=TOY_SIGMAS, n_points=2000, n_samples=300, protocol="augment"):
    """WGAN on ``n_points`` unit-Gaussian 2-D points sharing the attribute (0, 0).

    Sampling after training, per ``protocol``:

    * ``augment``: attribute drawn from the training augmentation
      ``N((0, 0), sigma^2 I)``, noise (if any) fixed at zero
    * ``prior``: attribute fixed at (0, 0), noise drawn from the prior
    * ``sweep``: attribute drawn from ``N(0, I)``, noise fixed at zero

    For each augmentation strength returns the ``n_samples`` generated
    points with their mean, per-axis std and covariance.
    """
    if protocol not in TOY_PROTOCOLS:
        raise ContractError(f"protocol must be one of {TOY_PROTOCOLS}")
    if n_samples < 2:
        raise ContractError("n_samples must be at least 2")
    data = cfg.rng("toy2d-data").normal((n_points, 2))
    labels = np.zeros(n_points, dtype=np.int64)
    attrs = np.zeros((1, 2))
    out = {}
    for s in sigmas:
        c = cfg.replace(sigma=float(s))
        g, _ = fit_wgan(data, labels, attrs, c, stage="toy2d")
        rng = cfg.rng(f"toy2d-sample-{s}")
        nz = g.d_in - 2
        z0 = np.zeros((n_samples, nz)) if nz else None
        if protocol == "augment":
            samples = generate_samples(g, attribute_augment(np.zeros((n_samples, 2)), s, rng), 1, rng, z0)
        elif protocol == "sweep":
            samples = generate_samples(g, rng.normal((n_samples, 2)), 1, rng, z0)
        else:
            samples = generate_samples(g, attrs, n_samples, rng)
        out[float(s)] = {
            "samples": samples,
            "mean": samples.mean(axis=0),
            "std": samples.std(axis=0, ddof=1),
            "cov": np.cov(samples, rowvar=False),
        }
    return out


def toy2d_config(seed=0, **changes):
    """Settings for the 2-D study.

    One 256-unit hidden layer, batch 64, weight-averaged generator, and no
    noise prior, so the augmented attribute is the generator's only source
    of spread.
    """
    base = TrainConfig(
        seed=seed,
        g_hidden=(256,),
        d_hidden=(256,),
        batch_size=64,
        gen_epochs=64,
        lr=1e-3,
        g_ema=0.99,
        use_prior=False,
    )
    return base.replace(**changes)


# --- attribute generalization study ------------------------------------------------


def genbound_study(
    dataset,
    cfg,
    class_counts=(10, 20, 30, 40),
    instances=600,
    per_class_counts=(5, 10, 15),
    per_class_classes=40,
    sigmas=(0.0, None),
):
    """H and CMMD over three sweeps: class count, instances per class, ATA off/on.

    The first sweep keeps ``instances`` training rows in total spread over
    the chosen classes; the second keeps ``per_class_classes`` classes.
    ``None`` in ``sigmas`` stands for ``cfg.sigma``.  Returns rows of
    ``(sweep, value, H, cmmd)``.
    """
    seen = np.sort(dataset.seen_ids)
    for k in tuple(class_counts) + (per_class_classes,):
        if k <= 0:
            raise ContractError("class counts must be positive")
        if k > seen.size:
            raise ContractError(f"{k} classes requested but only {seen.size} seen classes")
    rng = cfg.rng("genbound")
    rows = []

    def cell(ds, c):
        _, rep = run_dgz(ds, c.replace(dist_kind="GEN"))
        return rep.H, rep.cmmd

    for k in class_counts:
        classes = np.sort(seen[rng.choice(seen.size, k)])
        ds = dataset.subsample_train(classes, max(1, instances // k), rng)
        rows.append(("classes", k) + cell(ds, cfg))
    for m in per_class_counts:
        classes = np.sort(seen[rng.choice(seen.size, per_class_classes)])
        ds = dataset.subsample_train(classes, m, rng)
        rows.append(("per_class", m) + cell(ds, cfg))
    for s in sigmas:
        s = cfg.sigma if s is None else float(s)
        rows.append(("sigma", s) + cell(dataset, cfg.replace(sigma=s)))
    return rows


def report_table(reports):
    """``{name: MetricsReport}`` to rows for :func:`dgz.dataio.write_table`."""
    return [(name, rep) for name, rep in reports.items() if isinstance(rep, MetricsReport)]
