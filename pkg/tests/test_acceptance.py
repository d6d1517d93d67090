"""Acceptance suite: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are written
straight to the terminal even when output capture is on.  The end-to-end
training criteria are marked ``slow``.  The real-data criterion runs only when
``DGZ_AWA2_DIR`` names a dataset directory in the DGZM layout.
"""

import math
import os
import time

import numpy as np
import pytest

from dgz.dataio import SynthSpec, load_dataset_dir, synth_dataset
from dgz.grad_analysis import finite_diff_check
from dgz.losses import LogitContext, revised_ce, wgan_gp_losses
from dgz.metrics import cacd, cmmd, harmonic_mean, im_kernel
from dgz.nets import Mlp, MlpSpec, init_mlp
from dgz.pipelines import (
    TrainConfig,
    lambda1_sweep,
    run_ablation,
    run_dgz,
    toy2d,
    toy2d_config,
    train_generator,
)
from dgz.selfcheck import (
    check_ce_identity,
    check_finite_differences,
    check_incremental_reduction,
    check_unseen_identity,
    check_wgan_double_backprop,
)
from dgz.tensor_core import Rng

SEEDS = (0, 1, 2)


@pytest.fixture
def verdict(capsys):
    """Print ``PASS``/``FAIL`` for a criterion, then assert it."""

    def emit(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail

    return emit


# ---------------------------------------------------------------- oracles


def fig_a_revised(logits, labels, seen, unseen, lam1):
    """Scalar revised cross-entropy, one sample and one class at a time."""
    losses = []
    for i in range(len(labels)):
        row = logits[i]
        k = len(row)
        mask = [0.0 if (labels[i] in seen and c in unseen) else 1.0 for c in range(k)]
        top = 0
        for c in range(1, k):
            if row[c] > row[top]:
                top = c
        filled = mask[:]
        filled[top] = lam1
        mask = [(1.0 - mask[c]) * filled[c] + mask[c] for c in range(k)]
        acc = 0.0
        for c in range(k):
            acc += mask[c] * math.exp(row[c] - row[labels[i]])
        losses.append(math.log(acc))
    return sum(losses) / len(losses)


def direct_cmmd(real, pseudo):
    total = 0.0
    for c in real:
        xs, ys = real[c], pseudo[c]
        n = len(xs)
        within = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    within += im_kernel(xs[i], xs[j]) + im_kernel(ys[i], ys[j])
        cross = sum(im_kernel(xs[i], ys[j]) for i in range(n) for j in range(n))
        total += within / (n * (n - 1)) - 2.0 * cross / n**2
    return total / len(real)


# ---------------------------------------------------------------- fast criteria


class TestFastCriteria:
    def test_gradient_identities(self, verdict):
        t0 = time.perf_counter()
        rng = Rng(2024)
        results = [check_ce_identity(rng.substream(1), 100), check_unseen_identity(rng.substream(2), 100)]
        dt = time.perf_counter() - t0
        worst = max(r.worst for r in results)
        verdict(
            "gradient identities (pull/push and unseen weights vs tape)",
            all(r.passed for r in results) and worst < 1e-8 and dt < 60,
            f"{sum(r.instances for r in results)} instances, worst rel err {worst:.2e}, {dt:.1f} s",
        )

    def test_loss_reduction(self, verdict):
        t0 = time.perf_counter()
        rng = Rng(77)
        reduction = check_incremental_reduction(rng.substream(1), 1000)
        worst = 0.0
        for _ in range(1000):
            k = int(rng.integers(2, 11))
            n = int(rng.integers(1, 21))
            n_seen = int(rng.integers(1, k))
            perm = rng.permutation(k)
            seen, unseen = sorted(perm[:n_seen].tolist()), sorted(perm[n_seen:].tolist())
            labels = rng.integers(0, k, n).tolist()
            logits = rng.normal((n, k)) * (0.1 + 7.9 * rng.uniform())
            lam1 = 5.0 * rng.uniform()
            ctx = LogitContext(logits, np.eye(k), 1.0, labels, seen, unseen)
            got = revised_ce(ctx, lam1, "code").value.item()
            ref = fig_a_revised(logits, labels, set(seen), set(unseen), lam1)
            worst = max(worst, abs(got - ref) / max(abs(ref), 1.0))
        dt = time.perf_counter() - t0
        verdict(
            "loss reduction (incremental(1,1) == ce, revised == scalar reference)",
            reduction.passed and worst < 1e-10 and dt < 30,
            f"ce worst {reduction.worst:.2e}, revised worst {worst:.2e} over 1000 instances, {dt:.1f} s",
        )

    def test_autodiff_finite_differences(self, verdict):
        t0 = time.perf_counter()
        rng = Rng(5)
        losses = check_finite_differences(rng.substream(1))
        critic = check_wgan_double_backprop(rng.substream(2))
        # generator side of the adversarial loss, critic held fixed
        gen_worst = 0.0
        for i in range(3):
            sub = rng.substream(10 + i)
            g_spec = MlpSpec((2 + 2, 6, 3))
            g = init_mlp(g_spec, sub.substream(1))
            d = init_mlp(MlpSpec((3 + 2, 6, 1)), sub.substream(2))
            x, a = sub.normal((5, 3)), sub.normal((5, 2))

            def g_loss(ps, seed=int(sub.integers(0, 2**31))):
                net = Mlp(g_spec, [ps[0], ps[2]], [ps[1], ps[3]])
                return wgan_gp_losses(net, d, x, a, Rng(seed), 10.0)[1]

            gen_worst = max(gen_worst, finite_diff_check(g_loss, g.arrays(), eps=1e-6))
        dt = time.perf_counter() - t0
        ok = losses.worst < 1e-5 and critic.worst < 1e-4 and gen_worst < 1e-5 and dt < 300
        verdict(
            "autodiff vs central differences",
            ok,
            f"losses {losses.worst:.2e}, critic (double backprop) {critic.worst:.2e}, "
            f"generator {gen_worst:.2e}, {dt:.1f} s",
        )

    def test_cmmd_oracle(self, verdict):
        rng = Rng(31)
        explicit = {
            0: (np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]), np.array([[1.0, 1.0], [2.0, 0.0], [0.5, 0.5]])),
            4: (np.array([[3.0, -1.0], [2.0, 2.0], [1.0, 1.0]]), np.array([[0.0, 0.0], [3.0, 3.0], [-1.0, 2.0]])),
        }
        real = {c: v[0] for c, v in explicit.items()}
        pseudo = {c: v[1] for c, v in explicit.items()}
        err = abs(cmmd(real, pseudo) - direct_cmmd(real, pseudo))
        rand_real = {c: rng.normal((7, 3)) for c in range(3)}
        rand_pseudo = {c: rng.normal((7, 3)) + 0.7 for c in range(3)}
        err = max(err, abs(cmmd(rand_real, rand_pseudo) - direct_cmmd(rand_real, rand_pseudo)))

        g = Rng(0)
        base_real = {c: g.normal((500, 8)) for c in range(2)}
        base_pseudo = {c: g.normal((500, 8)) for c in range(2)}
        curve = [cmmd(base_real, {c: v + off for c, v in base_pseudo.items()}) for off in (0, 1, 2, 4)]
        monotone = all(a <= b for a, b in zip(curve, curve[1:]))

        x = rng.normal((11, 4))
        n = len(x)
        s = sum(im_kernel(x[i], x[j]) for i in range(n) for j in range(n) if i != j)
        residual_err = abs(cmmd([x], [x]) - (2 * s / (n * n * (n - 1)) - 2.0 / n))
        verdict(
            "cmmd oracle, translation monotonicity, self residual",
            err < 1e-10 and monotone and residual_err < 1e-10,
            f"oracle err {err:.1e}, offsets 0/1/2/4 -> {[round(v, 5) for v in curve]}, residual err {residual_err:.1e}",
        )

    def test_metric_arithmetic(self, verdict):
        h = harmonic_mean(60.0, 80.0)
        unit = cacd([[0.0, 1.0]], [[0.0, 0.0]])
        k = im_kernel([0.3, -2.0, 5.0], [0.3, -2.0, 5.0])
        verdict(
            "metric arithmetic (H, CACD, IM kernel)",
            abs(h - 68.57) <= 0.01 and unit == 1.0 and k == 1.0,
            f"H(60,80)={h:.4f}, CACD unit offset={unit}, k(x,x)={k}",
        )


# ---------------------------------------------------------------- training criteria


@pytest.mark.slow
class TestTrainingCriteria:
    def test_toy_2d(self, verdict):
        t0 = time.perf_counter()
        rows = []
        passed = 0
        for seed in SEEDS:
            out = toy2d(toy2d_config(seed), sigmas=(0.0, 0.04))
            ata, plain = out[0.04], out[0.0]
            ok = (
                np.all((ata["std"] >= 0.7) & (ata["std"] <= 1.3))
                and np.all(np.abs(ata["mean"]) < 0.2)
                and plain["std"].min() < ata["std"].min()
            )
            passed += bool(ok)
            rows.append(f"seed {seed}: std {np.round(ata['std'], 3).tolist()} mean {np.round(ata['mean'], 3).tolist()} "
                        f"no-ATA min std {plain['std'].min():.3g}")
        dt = time.perf_counter() - t0
        verdict("toy 2-D unit Gaussian with attribute augmentation", passed == 3 and dt < 600,
                f"{passed}/3 seeds; " + "; ".join(rows) + f"; {dt:.0f} s")

    def test_ablation_direction(self, verdict):
        t0 = time.perf_counter()
        wins = 0
        rows = []
        for seed in SEEDS:
            ds = synth_dataset(SynthSpec(seed=seed))
            cfg = TrainConfig(seed=seed)
            g = train_generator(ds, cfg)
            full = run_ablation(ds, "full", cfg, generator=g)
            plain = run_ablation(ds, "ii", cfg, generator=g)
            wins += full.H - plain.H >= 5.0 and full.A_u > plain.A_u
            rows.append(f"seed {seed}: full H {full.H:.1f} A_u {full.A_u:.1f} | vanilla-CE H {plain.H:.1f} A_u {plain.A_u:.1f}")
        dt = time.perf_counter() - t0
        verdict("ablation: full model vs vanilla cross-entropy", wins >= 2 and dt < 900,
                f"{wins}/3 seeds; " + "; ".join(rows) + f"; {dt:.0f} s")

    def test_lambda1_bias(self, verdict):
        lams = (0.0, 0.04, 4.0)
        ok = True
        rows = []
        for seed in SEEDS:
            ds = synth_dataset(SynthSpec(seed=seed))
            reports = lambda1_sweep(ds, TrainConfig(seed=seed), lams)
            counts = [r.meta["seen_to_unseen"] for r in reports]
            ok &= all(a >= b for a, b in zip(counts, counts[1:]))
            rows.append(f"seed {seed}: {counts}")
        verdict("lambda_1 seen-to-unseen errors nonincreasing over 0, 0.04, 4", ok, "; ".join(rows))


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("DGZ_AWA2_DIR"), reason="DGZ_AWA2_DIR not set (real AWA2 features absent)")
def test_awa2_real_data(verdict):
    ds = load_dataset_dir(os.environ["DGZ_AWA2_DIR"])
    cfg = TrainConfig(tau=0.04, sigma=0.08, lam1=0.005, per_class_gen=100).paper_scale()
    _, report = run_dgz(ds, cfg)
    verdict("AWA2 real features", report.H >= 70.0, f"A_u {report.A_u:.1f} A_s {report.A_s:.1f} H {report.H:.1f}")
