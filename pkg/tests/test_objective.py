import math

import numpy as np
import pytest

from convqg import Graph, Tensor, backward
from convqg.model import QuestionModel
from convqg.objective import (
    Fixed,
    Geometric10,
    LossConfig,
    batch_loss,
    beta_at,
    cl_img,
    cl_txt,
    combine_cl,
    prepare_example,
    schedule_from_json,
    schedule_to_json,
    total_loss,
)
from conftest import TINY_CONFIG
from gradcheck import fd_grad, rel_err


def _t(v):
    return Tensor(np.asarray(v, dtype=np.float64))


def _cl_oracle(q_it, q_gt, q_neg, m):
    """Independent scalar formula for the margin hinge."""
    d_pos = math.sqrt(sum((a - b) ** 2 for a, b in zip(q_it, q_gt)))
    d_neg = math.sqrt(sum((a - b) ** 2 for a, b in zip(q_it, q_neg)))
    return max(d_pos - d_neg + m, 0.0)


def _unit(rng, d=8):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


class TestClImg:
    def test_satisfied_margin_is_zero(self):
        q = [1.0, 0.0, 0.0]
        q_i = [0.0, 1.0, 0.0]  # distance sqrt(2) ~ 1.414 > 1.0 used below
        # construct exact distances: q_it == q_gt, ||q_it - q_i|| == 1
        q_i = [1.0, 1.0, 0.0]
        value = cl_img(_t(q), _t(q), _t(q_i), 0.5).item()
        assert value == 0.0

    def test_direct_substitution(self):
        # distances 1.0 and 0.2 with margin 0.5 -> 1.3
        q_it = _t([0.0, 0.0])
        q_gt = _t([1.0, 0.0])
        q_i = _t([0.2, 0.0])
        assert cl_img(q_it, q_gt, q_i, 0.5).item() == pytest.approx(1.3, abs=1e-12)

    def test_matches_scalar_oracle_and_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            q_it = Tensor(_unit(rng), requires_grad=True, dtype=np.float64)
            q_gt, q_i = _t(_unit(rng)), _t(_unit(rng))
            with Graph():
                loss = cl_img(q_it, q_gt, q_i, 0.5)
            assert loss.item() == pytest.approx(
                _cl_oracle(q_it.data, q_gt.data, q_i.data, 0.5), abs=1e-12
            )
            backward(loss)
            fd = fd_grad(lambda: cl_img(q_it, q_gt, q_i, 0.5).item(), q_it.data, h=1e-6)
            assert rel_err(fd, q_it.grad) < 1e-6

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            cl_img(_t([1.0, 2.0]), _t([1.0]), _t([1.0, 2.0]), 0.5)


class TestClTxt:
    def test_satisfied_margin(self):
        q = _t([0.0, 1.0])
        far = _t([5.0, 1.0])
        assert cl_txt(q, q, far, 0.5).item() == 0.0

    def test_negative_swap_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            q_it, q_gt, x = (_t(_unit(rng)) for _ in range(3))
            assert cl_txt(q_it, q_gt, x, 0.5).item() == cl_img(q_it, q_gt, x, 0.5).item()

    def test_oracle_and_gradient(self):
        rng = np.random.default_rng(2)
        q_it = Tensor(_unit(rng), requires_grad=True, dtype=np.float64)
        q_gt, q_t = _t(_unit(rng)), _t(_unit(rng))
        with Graph():
            loss = cl_txt(q_it, q_gt, q_t, 0.3)
        assert loss.item() == pytest.approx(_cl_oracle(q_it.data, q_gt.data, q_t.data, 0.3), abs=1e-12)
        backward(loss)
        fd = fd_grad(lambda: cl_txt(q_it, q_gt, q_t, 0.3).item(), q_it.data, h=1e-6)
        assert rel_err(fd, q_it.grad) < 1e-6


class TestCombineAndTotal:
    def test_weighted_sum(self):
        assert combine_cl(_t(1.0), _t(0.5), 0.2).item() == pytest.approx(0.6, abs=1e-12)

    def test_endpoints(self):
        ct, ci = _t(0.7), _t(0.3)
        assert combine_cl(ct, ci, 0.0).item() == ci.item()
        assert combine_cl(ct, ci, 1.0).item() == ct.item()

    def test_symmetry_at_half(self):
        c = _t(0.42)
        assert combine_cl(c, c, 0.5).item() == pytest.approx(0.42, abs=1e-12)

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            combine_cl(_t(1.0), _t(1.0), 1.5)

    def test_total_direct(self):
        assert total_loss(_t(0.6), _t(2.0), 10.0).item() == pytest.approx(4.0, abs=1e-12)

    def test_total_beta_zero(self):
        assert total_loss(_t(123.0), _t(2.0), 0.0).item() == 1.0

    def test_total_cl_zero(self):
        assert total_loss(_t(0.0), _t(2.0), 1e6).item() == 1.0

    def test_negative_beta(self):
        with pytest.raises(ValueError):
            total_loss(_t(1.0), _t(1.0), -0.1)


class TestBetaSchedule:
    def test_geometric10_first_epochs(self):
        s = Geometric10()
        assert [beta_at(s, e) for e in (0, 1, 2)] == [10.0, 100.0, 1000.0]

    def test_fixed(self):
        assert beta_at(Fixed(100.0), 0) == beta_at(Fixed(100.0), 17) == 100.0

    def test_geometric10_epoch_4(self):
        assert beta_at(Geometric10(), 4) == 100_000.0

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            beta_at(Geometric10(), -1)

    def test_json_roundtrip(self):
        assert schedule_from_json(schedule_to_json(Geometric10())) == Geometric10()
        assert schedule_from_json(schedule_to_json(Fixed(10.0))) == Fixed(10.0)
        with pytest.raises(ValueError):
            schedule_from_json("linear")


class TestProperties:
    def test_non_negativity(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            q_it, q_gt, q_n = (_unit(rng) for _ in range(3))
            assert _cl_oracle(q_it, q_gt, q_n, 0.5) >= 0.0
            assert cl_img(_t(q_it), _t(q_gt), _t(q_n), 0.5).item() >= 0.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            q_it, q_gt, q_n, v = (rng.standard_normal(8) for _ in range(4))
            a = cl_img(_t(q_it), _t(q_gt), _t(q_n), 0.5).item()
            b = cl_img(_t(q_it + v), _t(q_gt + v), _t(q_n + v), 0.5).item()
            assert abs(a - b) < 1e-9

    def test_zero_loss_region(self):
        rng = np.random.default_rng(5)
        hit = 0
        for _ in range(1000):
            q_it, q_gt, q_n = (_unit(rng) for _ in range(3))
            d_pos = np.linalg.norm(q_it - q_gt)
            d_neg = np.linalg.norm(q_it - q_n)
            value = cl_img(_t(q_it), _t(q_gt), _t(q_n), 0.5).item()
            if d_pos + 0.5 <= d_neg:
                hit += 1
                assert value == 0.0
        assert hit > 0  # the region is actually exercised

    def test_monotonic_in_margin(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            q_it, q_gt, q_n = (_unit(rng) for _ in range(3))
            values = [
                cl_img(_t(q_it), _t(q_gt), _t(q_n), m).item()
                for m in (0.1, 0.2, 0.5, 0.8, 1.5)
            ]
            assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))


class TestLossConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            LossConfig(alpha=1.5)
        with pytest.raises(ValueError):
            LossConfig(margin=0.0)
        with pytest.raises(ValueError):
            LossConfig(variant="X")
        with pytest.raises(ValueError):
            Geometric10(start=0.0)


class TestBatchLoss:
    def test_empty_batch(self, tiny_model):
        with pytest.raises(ValueError, match="empty"):
            batch_loss([], tiny_model, LossConfig(), 0)

    def test_variant_b_equals_it_with_zero_beta(self, tiny_prepared, tiny_model):
        cfg_b = LossConfig(variant="B")
        cfg_it0 = LossConfig(variant="IT", beta_schedule=Fixed(0.0))
        loss_b, bd_b = batch_loss(tiny_prepared, tiny_model, cfg_b, epoch=2)
        loss_it, bd_it = batch_loss(tiny_prepared, tiny_model, cfg_it0, epoch=2)
        assert loss_b.item() == loss_it.item()
        assert bd_b.total == bd_it.total
        assert bd_b.beta_used == 0.0

    def test_variant_i_gating(self, tiny_prepared, tiny_model):
        _, bd = batch_loss(tiny_prepared, tiny_model, LossConfig(variant="I"), epoch=0)
        assert bd.cl == bd.cl_img
        assert bd.cl_txt > 0  # reported but excluded

    def test_variant_t_gating(self, tiny_prepared, tiny_model):
        _, bd = batch_loss(tiny_prepared, tiny_model, LossConfig(variant="T"), epoch=0)
        assert bd.cl == bd.cl_txt

    def test_breakdown_identities(self, tiny_prepared, tiny_model):
        cfg = LossConfig(alpha=0.3)
        _, bd = batch_loss(tiny_prepared, tiny_model, cfg, epoch=1)
        assert bd.cl == pytest.approx(0.3 * bd.cl_txt + 0.7 * bd.cl_img, abs=1e-9)
        assert bd.total == pytest.approx((bd.beta_used * bd.cl + bd.cel) / 2, abs=1e-9)
        assert bd.beta_used == 100.0
        assert bd.cl_img >= 0 and bd.cl_txt >= 0

    def test_gradient_gate_variant_b(self, tiny_prepared, tiny_model):
        with Graph():
            loss, _ = batch_loss(tiny_prepared, tiny_model, LossConfig(variant="B"), 0)
        backward(loss)
        head = tiny_model.params["sent.w"].grad
        assert head is None or not np.any(head)

    def test_full_gradient_check_batch_of_4(self, tiny_world, tiny_vocab, tiny_embedder):
        model = QuestionModel(TINY_CONFIG, len(tiny_vocab), seed=2, dtype=np.float64)
        prep = [
            prepare_example(ex, tiny_vocab, tiny_embedder, np.float64)
            for ex in tiny_world[:4]
        ]
        cfg = LossConfig()

        def value():
            loss, _ = batch_loss(prep, model, cfg, epoch=0)
            return loss.item()

        with Graph():
            loss, _ = batch_loss(prep, model, cfg, epoch=0)
        backward(loss)
        for name in ("sent.w", "out.w", "dec.0.self.wq", "txt.0.cross.wo",
                     "img.0.ffn.w2", "img.proj.w", "tok_emb", "dec.pos"):
            t = model.params[name]
            fd = fd_grad(value, t.data, h=1e-5)
            an = t.grad if t.grad is not None else np.zeros_like(t.data)
            assert rel_err(fd, an) < 1e-5, name

    def test_featureless_example_rejected_for_image_variants(
        self, tiny_prepared, tiny_model
    ):
        import dataclasses

        broken = [dataclasses.replace(tiny_prepared[0], q_i=None)]
        with pytest.raises(ValueError, match="image contrastive"):
            batch_loss(broken, tiny_model, LossConfig(variant="IT"), 0)
        # but the text-only and baseline variants accept it
        batch_loss(broken, tiny_model, LossConfig(variant="T"), 0)
        batch_loss(broken, tiny_model, LossConfig(variant="B"), 0)
