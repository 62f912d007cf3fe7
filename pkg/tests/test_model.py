from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from seqdenoise.errors import ConfigError
from seqdenoise.model import (
    fuse_user_rep,
    l2_penalty,
    predict_probs,
    predict_scores,
    rec_loss,
    sequence_user_rep,
    total_loss,
)
from seqdenoise.nn import GRUEncoder, gradient_check

from .conftest import tiny_model, two_user_batch

D = torch.float64


def _t(a):
    return torch.tensor(a, dtype=D)


class TestHead:
    def test_gru_single_step(self):
        torch.manual_seed(0)
        gru = GRUEncoder(3, std=0.5).double()
        G = torch.randn(1, 4, 3, dtype=D)
        mask = torch.tensor([[False, False, False, True]])
        expect = gru.step(G[:, 3], torch.zeros(1, 3, dtype=D))
        assert torch.equal(sequence_user_rep(G, mask, gru), expect)

    def test_fuse_is_sum(self):
        a, b, c = _t([1.0, 2.0]), _t([0.5, -1.0]), _t([0.0, 3.0])
        assert fuse_user_rep(a, b, c).tolist() == [1.5, 4.0]

    def test_probs_sum_to_one_and_skip_pad(self):
        y = predict_probs(torch.randn(3, 4, dtype=D), torch.randn(6, 4, dtype=D))
        assert_allclose(y.sum(-1).numpy(), 1.0, atol=1e-15)
        assert (y[:, 0] == 0).all()

    def test_three_item_softmax(self):
        table = _t([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        user = _t([[1.0, 2.0]])
        logits = np.array([1.0, 2.0, 3.0])
        expect = np.exp(logits) / np.exp(logits).sum()
        assert_allclose(predict_probs(user, table)[0, 1:].numpy(), expect, atol=1e-15)
        assert predict_scores(user, table)[0, 0] == float("-inf")


class TestRecLoss:
    def test_certain_target_zero(self):
        logits = _t([[float("-inf"), 50.0, -50.0]])
        assert float(rec_loss(logits, torch.tensor([1]))) == pytest.approx(0.0, abs=1e-15)

    def test_uniform_is_log_v(self):
        logits = torch.zeros(2, 7, dtype=D)
        assert float(rec_loss(logits, torch.tensor([3, 6]))) == pytest.approx(math.log(7), abs=1e-15)

    def test_quarter(self):
        logits = torch.log(_t([[0.25, 0.5, 0.25]]))
        assert float(rec_loss(logits, torch.tensor([0]))) == pytest.approx(1.3862943611198906, abs=1e-15)

    def test_floor_keeps_finite(self):
        logits = _t([[0.0, -1e6]])
        assert float(rec_loss(logits, torch.tensor([1]))) == pytest.approx(-math.log(1e-12))


class TestTotalLoss:
    def test_zero_weights_is_rec(self):
        b = total_loss(_t(1.5), _t(2.0), _t(3.0), _t(4.0), _t(5.0), 0, 0, 0, 0)
        assert float(b.total) == 1.5

    def test_l2_25_rho(self):
        l2 = l2_penalty([_t([3.0, 4.0])])
        b = total_loss(_t(0.0), _t(0.0), _t(0.0), _t(0.0), l2, 0, 0, 0, 0.01)
        assert float(b.total) == pytest.approx(0.25, abs=1e-15)

    def test_resum(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            terms = rng.uniform(0, 5, size=5)
            w = rng.uniform(0, 2, size=4)
            b = total_loss(*map(_t, terms), *w)
            expect = terms[0] + w[0] * terms[1] + w[1] * terms[2] + w[2] * terms[3] + w[3] * terms[4]
            assert abs(float(b.total) - expect) <= 1e-12

    def test_negative_weight(self):
        with pytest.raises(ConfigError):
            total_loss(_t(0.0), _t(0.0), _t(0.0), _t(0.0), _t(0.0), -1, 0, 0, 0)


class TestModel:
    def test_forward_shapes(self, batch):
        out = tiny_model()(batch, tau=0.5, mode="sample", generator=torch.Generator().manual_seed(0))
        assert out.scores.shape == (2, 8)
        assert out.losses is not None and math.isfinite(float(out.losses.total.detach()))

    @pytest.mark.parametrize("flag,term", [("no_itsd", "itscl"), ("no_insd", "inscl"), ("no_and", "mse")])
    def test_ablation_zeroes_term(self, batch, flag, term):
        full = tiny_model()(batch, mode="argmax").losses.scalars()
        ablated = tiny_model(**{"train.ablate": flag})(batch, mode="argmax").losses.scalars()
        assert ablated[term] == 0.0 and full[term] != 0.0

    def test_no_itsd_zero_e_it(self, batch):
        out = tiny_model(**{"train.ablate": "no_itsd"})(batch, mode="argmax")
        assert torch.equal(out.e_it, torch.zeros_like(out.e_it)) and out.item_gate is None

    def test_zero_weights_objective_is_rec_plus_l2(self, batch):
        model = tiny_model(**{"itscl.weight": 0.0, "inscl.weight": 0.0, "mse.weight": 0.0, "l2.weight": 0.0})
        s = model(batch, mode="argmax").losses.scalars()
        assert s["total"] == s["rec"]

    @pytest.mark.parametrize("term", ["rec", "itscl", "inscl", "mse", "l2", "total"])
    def test_gradient_check_soft_mode(self, term):
        model = tiny_model(seed=1)
        b = two_user_batch()
        params = list(model.parameters())

        def loss():
            return getattr(model(b, tau=0.5, mode="soft").losses, term)

        gen = torch.Generator().manual_seed(0)
        err = gradient_check(loss, params, max_coords=12, generator=gen)
        assert err <= 1e-4

    def test_straight_through_reaches_discriminator(self, batch):
        model = tiny_model()
        out = model(batch, tau=0.5, mode="sample", generator=torch.Generator().manual_seed(3))
        (out.e_it.sum() + out.e_in.sum()).backward()
        assert model.discriminator.out.weight.grad.abs().sum() > 0
        assert model.interests.w5.grad.abs().sum() > 0
