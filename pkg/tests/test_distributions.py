import numpy as np
import pytest

from dgz.distributions import (
    PseudoParams,
    PseudoSet,
    build_pseudo_unseen,
    class_centers,
    statistical_covariance,
    substitute_centers,
    within_class_std,
)
from dgz.errors import ContractError, ShapeError
from dgz.nets import MlpSpec, init_mlp
from dgz.tensor_core import Rng


def isotropic_data(rng, classes=4, per_class=2500, d=8, sigma=0.5):
    centers = rng.normal((classes, d)) * 3.0
    labels = np.repeat(np.arange(classes), per_class)
    x = centers[labels] + sigma * rng.normal((labels.size, d))
    return x, labels


class TestCenters:
    def test_one_sample_per_class(self, rng):
        x = rng.normal((3, 2))
        assert np.array_equal(class_centers(x, [0, 1, 2]), x)

    def test_midpoint(self):
        assert class_centers([[0.0, 0.0], [2.0, 2.0]], [5, 5]).tolist() == [[1.0, 1.0]]

    def test_accumulation_oracle(self, rng):
        x = rng.normal((40, 3))
        labels = rng.integers(0, 4, 40)
        classes = np.unique(labels)
        sums = {int(c): np.zeros(3) for c in classes}
        counts = {int(c): 0 for c in classes}
        for row, y in zip(x, labels):
            sums[int(y)] += row
            counts[int(y)] += 1
        expected = np.array([sums[int(c)] / counts[int(c)] for c in classes])
        assert np.allclose(class_centers(x, labels), expected, atol=1e-14)

    def test_empty_class(self):
        with pytest.raises(ContractError):
            class_centers(np.zeros((2, 2)), [0, 0], classes=[0, 1])


class TestCovariance:
    def test_at_centers_is_zero(self):
        x = np.array([[1.0, 2.0], [1.0, 2.0], [5.0, 0.0], [5.0, 0.0]])
        assert not statistical_covariance(x, [0, 0, 1, 1]).any()

    def test_pooled_hand_value(self):
        assert statistical_covariance([[-1.0], [1.0]], [0, 0]).item() == 2.0

    def test_global_variant(self):
        x = np.array([[0.0], [2.0], [10.0], [12.0]])
        assert statistical_covariance(x, [0, 0, 1, 1], pooled=False).item() == pytest.approx(np.var(x, ddof=1))
        assert statistical_covariance(x, [0, 0, 1, 1]).item() == pytest.approx(2.0)

    def test_isotropic_estimate(self):
        x, labels = isotropic_data(Rng(0), classes=2, per_class=5000, d=4, sigma=0.5)
        cov = statistical_covariance(x, labels)
        assert np.all(np.abs(np.diag(cov) / 0.25 - 1.0) < 0.1)
        assert np.abs(cov - np.diag(np.diag(cov))).max() < 0.025

    def test_degenerate(self):
        with pytest.raises(ContractError):
            statistical_covariance(np.zeros((2, 2)), [0, 1])

    def test_within_class_std(self):
        x, labels = isotropic_data(Rng(1), classes=3, per_class=3000, d=5, sigma=0.7)
        assert within_class_std(x, labels) == pytest.approx(0.7, rel=0.05)


class TestBuild:
    def setup_method(self):
        self.rng = Rng(7)
        self.x, self.labels = isotropic_data(Rng(2), classes=4, per_class=500, d=8, sigma=0.5)
        self.centers = Rng(3).normal((3, 8))
        self.ids = np.array([10, 11, 12])

    def build(self, kind, per_class=50, **kw):
        return build_pseudo_unseen(
            kind, self.ids, per_class, self.rng, centers=self.centers,
            train_features=self.x, train_labels=self.labels, **kw,
        )

    def test_svg_zero_variance(self):
        ps = self.build("SVG", params=PseudoParams(svg_std=0.0))
        for i, c in enumerate(self.ids):
            assert np.array_equal(ps.features[ps.labels == c], np.tile(self.centers[i], (50, 1)))

    @pytest.mark.parametrize("kind", ["SVG", "LVG", "SCG"])
    def test_counts(self, kind):
        ps = self.build(kind, per_class=13)
        assert ps.kind == kind and ps.per_class_count == 13
        assert {c: int((ps.labels == c).sum()) for c in self.ids} == {10: 13, 11: 13, 12: 13}

    def test_small_and_large_spread(self):
        svg = self.build("SVG", per_class=2000)
        lvg = self.build("LVG", per_class=2000)
        assert within_class_std(svg.features, svg.labels) == pytest.approx(0.05, rel=0.1)
        assert within_class_std(lvg.features, lvg.labels) == pytest.approx(1.5, rel=0.1)

    def test_scg_covariance(self):
        a = Rng(4).normal((8, 8))
        cov = a @ a.T / 8 + 0.1 * np.eye(8)
        chol = np.linalg.cholesky(cov)
        labels = np.repeat(np.arange(3), 4000)
        x = Rng(5).normal((labels.size, 8)) @ chol.T
        target = statistical_covariance(x, labels)
        ps = build_pseudo_unseen("SCG", [0], 10_000, Rng(6), centers=np.zeros((1, 8)),
                                 train_features=x, train_labels=labels)
        emp = np.cov(ps.features, rowvar=False)
        assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.15

    @pytest.mark.parametrize("kind", ["SVG", "LVG", "SCG"])
    def test_centers_converge(self, kind):
        n = 10_000
        ps = self.build(kind, per_class=n)
        emp = class_centers(ps.features, ps.labels, self.ids)
        sigma_max = np.sqrt(np.linalg.eigvalsh(np.cov(ps.features[ps.labels == 10], rowvar=False)).max())
        assert np.abs(emp - self.centers).max() < 3 * sigma_max / np.sqrt(n)

    def test_deterministic_per_class_streams(self):
        a = build_pseudo_unseen("SVG", [4, 9], 5, Rng(1), centers=np.zeros((2, 3)), params=PseudoParams(svg_std=1.0))
        b = build_pseudo_unseen("SVG", [9], 5, Rng(1), centers=np.zeros((1, 3)), params=PseudoParams(svg_std=1.0))
        assert np.array_equal(a.features[a.labels == 9], b.features)

    def test_gen_and_gc_scg(self, rng):
        g = init_mlp(MlpSpec((2 + 3, 8, 8)), rng)
        attrs = rng.normal((3, 3))
        gen = build_pseudo_unseen("GEN", self.ids, 7, rng, generator=g, attrs=attrs)
        assert gen.features.shape == (21, 8)
        mapper = init_mlp(MlpSpec((3, 8)), rng)
        gc = build_pseudo_unseen("GC_SCG", self.ids, 7, rng, mapper=mapper, attrs=attrs,
                                 train_features=self.x, train_labels=self.labels)
        assert gc.kind == "GC_SCG" and gc.features.shape == (21, 8)

    def test_missing_inputs(self):
        with pytest.raises(ContractError):
            build_pseudo_unseen("GEN", self.ids, 5, self.rng)
        with pytest.raises(ContractError):
            build_pseudo_unseen("GC_SCG", self.ids, 5, self.rng)
        with pytest.raises(ContractError):
            build_pseudo_unseen("SCG", self.ids, 5, self.rng, centers=self.centers)
        with pytest.raises(ContractError):
            build_pseudo_unseen("SVG", self.ids, 0, self.rng, centers=self.centers)
        with pytest.raises(ContractError):
            build_pseudo_unseen("XYZ", self.ids, 5, self.rng)
        with pytest.raises(ShapeError):
            build_pseudo_unseen("SVG", self.ids, 5, self.rng, centers=self.centers[:2],
                                params=PseudoParams(svg_std=1.0))


class TestPseudoSet:
    def test_unequal_counts_rejected(self):
        with pytest.raises(ContractError):
            PseudoSet(np.zeros((3, 2)), [1, 1, 2], "SVG", 2)

    def test_substitute_centers(self, rng):
        ps = build_pseudo_unseen("LVG", [3, 8], 40, rng, centers=rng.normal((2, 5)), params=PseudoParams(lvg_std=2.0))
        target = rng.normal((2, 5)) * 10
        moved = substitute_centers(ps, target)
        assert np.abs(moved.centers() - target).max() < 1e-10
        spread_before = ps.features[ps.labels == 3] - ps.features[ps.labels == 3].mean(axis=0)
        spread_after = moved.features[moved.labels == 3] - target[0]
        assert np.allclose(spread_before, spread_after)

    def test_substitute_shape(self, rng):
        ps = build_pseudo_unseen("SVG", [1], 4, rng, centers=np.zeros((1, 2)), params=PseudoParams(svg_std=1.0))
        with pytest.raises(ShapeError):
            substitute_centers(ps, np.zeros((2, 2)))
