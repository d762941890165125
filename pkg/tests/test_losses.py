import numpy as np
import pytest

from fscil_lab import autodiff as ad
from fscil_lab import losses
from fscil_lab.losses import LossConfig
from conftest import gradcheck


def _t(a):
    return ad.Tensor(np.asarray(a, dtype=np.float64))


def _random_rotation(d, rng):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return q


class TestSceLoss:
    def test_symmetric_logits_give_log_c(self, rng):
        # feature orthogonal to the plane spanned by all classifier vectors
        # is equidistant from each of them
        c = 4
        phi = np.zeros((c, 5))
        phi[:, :4] = np.eye(4)
        z = np.zeros((1, 5))
        z[0, 4] = 1.0
        val = losses.sce_loss(_t(z), [0], _t(phi), tau=1.0).item()
        assert val == pytest.approx(np.log(c), abs=1e-12)

    def test_two_class_orthogonal(self):
        val = losses.sce_loss(_t(np.eye(2)[:1]), [0], _t(np.eye(2)), tau=1.0).item()
        assert val == pytest.approx(np.log(1 + np.exp(-1)), abs=1e-9)

    def test_negative_margin_case(self):
        val = losses.sce_loss(_t(np.eye(2)[:1]), [0], _t(np.eye(2)),
                              tau=1.0, margin=-0.2).item()
        expected = -np.log(np.exp(1.2) / (np.exp(1.2) + 1.0))
        assert val == pytest.approx(expected, abs=1e-9)

    def test_nonnegative(self, rng):
        for _ in range(20):
            f = rng.normal(size=(4, 3))
            phi = rng.normal(size=(3, 3))
            y = rng.integers(0, 3, size=4)
            assert losses.sce_loss(_t(f), y, _t(phi), tau=0.2).item() >= 0.0

    def test_monotone_in_margin(self, rng):
        f = rng.normal(size=(5, 4))
        phi = rng.normal(size=(3, 4))
        y = rng.integers(0, 3, size=5)
        vals = [losses.sce_loss(_t(f), y, _t(phi), tau=0.5, margin=m).item()
                for m in (-0.4, -0.2, 0.0, 0.2, 0.4)]
        assert all(v2 >= v1 for v1, v2 in zip(vals, vals[1:]))

    def test_label_out_of_range(self, rng):
        with pytest.raises(ValueError):
            losses.sce_loss(_t(rng.normal(size=(2, 3))), [0, 3],
                            _t(rng.normal(size=(3, 3))), tau=1.0)

    def test_too_few_classes(self, rng):
        with pytest.raises(ValueError):
            losses.sce_loss(_t(rng.normal(size=(2, 3))), [0, 0],
                            _t(rng.normal(size=(1, 3))), tau=1.0)

    def test_nonpositive_tau(self, rng):
        with pytest.raises(ValueError):
            losses.sce_loss(_t(rng.normal(size=(2, 3))), [0, 1],
                            _t(rng.normal(size=(2, 3))), tau=0.0)

    def test_low_temperature_stable(self, rng):
        # tau = 1/32 scales cosine logits by 32; must not overflow
        f = rng.normal(size=(8, 6))
        phi = rng.normal(size=(5, 6))
        y = rng.integers(0, 5, size=8)
        val = losses.sce_loss(_t(f), y, _t(phi), tau=1.0 / 32.0).item()
        assert np.isfinite(val)


class TestSscLoss:
    def test_two_sample_degenerate_zero(self, rng):
        f = rng.normal(size=(2, 4))
        assert losses.ssc_loss(_t(f), [(0, 1)], tau=0.7).item() == pytest.approx(0.0, abs=1e-12)

    def test_three_sample_analytic(self):
        f = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        val = losses.ssc_loss(_t(f), [(0, 1)], tau=1.0).item()
        assert val == pytest.approx(-np.log(np.e / (np.e + 1.0)), abs=1e-9)

    def test_pair_order_invariant(self, rng):
        f = rng.normal(size=(6, 3))
        pairs = [(0, 3), (1, 4), (2, 5), (3, 0)]
        a = losses.ssc_loss(_t(f), pairs, tau=0.5).item()
        b = losses.ssc_loss(_t(f), list(reversed(pairs)), tau=0.5).item()
        assert a == pytest.approx(b, abs=1e-12)

    def test_empty_pairs_rejected(self, rng):
        with pytest.raises(ValueError):
            losses.ssc_loss(_t(rng.normal(size=(3, 2))), [], tau=1.0)

    def test_bad_index_rejected(self, rng):
        with pytest.raises(ValueError):
            losses.ssc_loss(_t(rng.normal(size=(3, 2))), [(0, 3)], tau=1.0)
        with pytest.raises(ValueError):
            losses.ssc_loss(_t(rng.normal(size=(3, 2))), [(1, 1)], tau=1.0)

    def test_nonnegative(self, rng):
        for _ in range(10):
            f = rng.normal(size=(6, 4))
            val = losses.ssc_loss(_t(f), [(i, i + 3) for i in range(3)], tau=0.3).item()
            assert val >= -1e-12


class TestInterIntra:
    def test_inter_orthogonal_zero(self):
        f = np.eye(2)
        assert losses.inter_loss(_t(f), [0, 1]).item() == pytest.approx(0.0, abs=1e-12)

    def test_inter_identical_minus_one(self):
        f = np.array([[0.3, 0.4], [0.3, 0.4]])
        assert losses.inter_loss(_t(f), [0, 1]).item() == pytest.approx(-1.0, abs=1e-12)

    def test_inter_single_class_rejected(self, rng):
        with pytest.raises(ValueError):
            losses.inter_loss(_t(rng.normal(size=(3, 2))), [1, 1, 1])

    def test_intra_identical_minus_one(self):
        f = np.array([[1.0, 1.0], [2.0, 2.0]])
        assert losses.intra_loss(_t(f), [0, 0]).item() == pytest.approx(-1.0, abs=1e-12)

    def test_intra_orthogonal_zero(self):
        assert losses.intra_loss(_t(np.eye(2)), [0, 0]).item() == pytest.approx(0.0, abs=1e-12)

    def test_intra_all_distinct_rejected(self, rng):
        with pytest.raises(ValueError):
            losses.intra_loss(_t(rng.normal(size=(3, 2))), [0, 1, 2])

    def test_relabeling_invariance(self, rng):
        f = rng.normal(size=(8, 3))
        y = rng.integers(0, 3, size=8)
        perm = {0: 2, 1: 0, 2: 1}
        y2 = np.array([perm[int(v)] for v in y])
        assert (losses.inter_loss(_t(f), y).item()
                == pytest.approx(losses.inter_loss(_t(f), y2).item(), abs=1e-14))
        assert (losses.intra_loss(_t(f), y).item()
                == pytest.approx(losses.intra_loss(_t(f), y2).item(), abs=1e-14))

    def test_range(self, rng):
        for _ in range(20):
            f = rng.normal(size=(6, 4))
            y = np.array([0, 1, *rng.integers(0, 2, size=4)])
            v = losses.inter_loss(_t(f), y).item()
            assert -1.0 - 1e-12 <= v <= 1.0 + 1e-12


class TestRotationInvariance:
    def test_pairwise_losses_rotation_invariant(self, rng):
        f = rng.normal(size=(8, 5))
        y = np.array([0, 0, 1, 1, 2, 2, 0, 1])
        r = _random_rotation(5, rng)
        fr = f @ r.T
        assert (losses.inter_loss(_t(f), y).item()
                == pytest.approx(losses.inter_loss(_t(fr), y).item(), abs=1e-10))
        assert (losses.intra_loss(_t(f), y).item()
                == pytest.approx(losses.intra_loss(_t(fr), y).item(), abs=1e-10))
        pairs = [(i, 7 - i) for i in range(4)]
        assert (losses.ssc_loss(_t(f), pairs, 0.5).item()
                == pytest.approx(losses.ssc_loss(_t(fr), pairs, 0.5).item(), abs=1e-10))


class TestGradients:
    def test_all_losses_finite_difference(self, rng):
        # random batches, B <= 8, d <= 8, C <= 5
        for _ in range(5):
            b = int(rng.integers(3, 9))
            d = int(rng.integers(2, 9))
            c = int(rng.integers(2, 6))
            f = rng.normal(size=(b, d))
            phi = rng.normal(size=(c, d))
            y = rng.integers(0, c, size=b)
            y[:2] = [0, 0]  # guarantee intra pairs
            y[2] = 1        # and inter pairs
            gradcheck(lambda ft, pt: losses.sce_loss(ft, y, pt, tau=0.5, margin=0.1),
                      [f, phi])
            pairs = [(0, 1), (1, 2)]
            gradcheck(lambda ft: losses.ssc_loss(ft, pairs, tau=0.5), [f])
            gradcheck(lambda ft: losses.inter_loss(ft, y), [f])
            gradcheck(lambda ft: losses.intra_loss(ft, y), [f])


class TestTotalLoss:
    def test_collapses_to_sce(self, rng):
        f = rng.normal(size=(4, 3))
        phi = rng.normal(size=(3, 3))
        y = np.array([0, 1, 2, 0])
        cfg = LossConfig(tau=0.25)
        total, terms = losses.total_loss(_t(f), y, _t(phi), cfg)
        assert total.item() == pytest.approx(
            losses.sce_loss(_t(f), y, _t(phi), tau=0.25).item(), abs=1e-14)
        assert set(terms) == {"ce", "total"}

    def test_inter_weight_linearity(self, rng):
        f = rng.normal(size=(4, 3))
        phi = rng.normal(size=(3, 3))
        y = np.array([0, 1, 2, 0])
        t1 = losses.total_loss(_t(f), y, _t(phi), LossConfig(tau=0.25, lambda_inter=0.5))[1]
        t2 = losses.total_loss(_t(f), y, _t(phi), LossConfig(tau=0.25, lambda_inter=1.0))[1]
        assert t2["inter"] == pytest.approx(2.0 * t1["inter"], abs=1e-12)

    def test_full_preset_scale_config_accepted(self, rng):
        cfg = LossConfig(tau=1.0 / 32.0, lambda_ssc=0.1, lambda_inter=1.0)
        f = rng.normal(size=(6, 4))
        aug = rng.normal(size=(6, 4))
        y = np.array([0, 0, 1, 1, 2, 2])
        phi = rng.normal(size=(3, 4))
        total, terms = losses.total_loss(_t(f), y, _t(phi), cfg, aug_features=_t(aug))
        assert {"ce", "ssc", "inter", "total"} <= set(terms)
        assert np.isfinite(total.item())

    def test_ssc_requires_views(self, rng):
        cfg = LossConfig(tau=0.5, lambda_ssc=0.1)
        with pytest.raises(ValueError):
            losses.total_loss(_t(rng.normal(size=(3, 2))), [0, 1, 0],
                              _t(rng.normal(size=(2, 2))), cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(tau=-1.0)
        with pytest.raises(ValueError):
            LossConfig(lambda_ssc=-0.1)
