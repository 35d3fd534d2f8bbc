import math

import numpy as np
import pytest

from helpers import toy_batch, toy_config, toy_model, toy_triplets
from tmrl.errors import ConfigError, TrainingError
from tmrl.temporal_data import parse_record
from tmrl.trainer import (
    OptimizerState,
    TextItem,
    TrainConfig,
    TrainingTriplet,
    adamw_step,
    batch_loss,
    grad_check_model,
    locate_spans,
    make_batches,
    train,
    triplets_from_records,
)


def _triplets(n):
    return [TrainingTriplet(TextItem(f"a{i}"), TextItem(f"p{i}"), (TextItem(f"n{i}"),), group=i) for i in range(n)]


class TestBatching:
    def test_floor_division(self):
        assert len(make_batches(_triplets(17), TrainConfig(batch_size=8, n_neg=1))) == 2

    def test_seeded_order(self):
        cfg = TrainConfig(batch_size=4, n_neg=1, seed=3)
        assert make_batches(_triplets(12), cfg, 1) == make_batches(_triplets(12), cfg, 1)
        assert make_batches(_triplets(12), cfg, 1) != make_batches(_triplets(12), cfg, 2)

    def test_no_hard_negatives(self):
        for b in make_batches(_triplets(8), TrainConfig(batch_size=4, n_neg=0)):
            assert all(negs == () for negs in b.negatives)

    def test_too_few_triplets(self):
        with pytest.raises(ConfigError):
            make_batches(_triplets(3), TrainConfig(batch_size=4))

    def test_negatives_sampled_with_replacement_when_short(self):
        (b,) = make_batches(_triplets(4), TrainConfig(batch_size=4, n_neg=3))
        assert all(len(n) == 3 for n in b.negatives)


class TestTriplets:
    def test_locate_spans(self):
        assert locate_spans("Did it happen In 1972?", ["in 1972"]) == ((14, 21),)
        assert locate_spans("nothing", ["1999", ""]) == ()

    def test_one_triplet_per_positive(self):
        line = ('{"query_id":3,"query":"In 1972 he won.","temporal":["In 1972"],'
                '"positive_passages":[{"docid":1,"text":"Did he win in 1972?","temporal":["in 1972"],'
                '"temporal_query_type":"Explicit","allen_relation":"Equals"},'
                '{"docid":1,"text":"When did he win?","temporal":[],'
                '"temporal_query_type":"TemporalAnswer","allen_relation":"Empty"}],'
                '"negative_passages":[]}')
        trips = triplets_from_records([parse_record(line)])
        assert len(trips) == 2 and {t.group for t in trips} == {3}
        assert trips[0].anchor.spans == ((0, 7),)
        assert trips[1].positive.spans == ()


class TestAdamW:
    def test_zero_gradient_zero_decay(self):
        p = {"w": np.array([1.0, -2.0])}
        adamw_step(p, {"w": np.zeros(2)}, OptimizerState(), TrainConfig(weight_decay=0.0))
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_sign(self):
        p = {"w": np.array([1.0])}
        adamw_step(p, {"w": np.array([1.0])}, OptimizerState(), TrainConfig(lr=0.1, weight_decay=0.0))
        assert p["w"][0] < 1.0

    def test_three_step_trace_on_square(self):
        cfg = TrainConfig(lr=0.1, weight_decay=0.01)
        p = {"w": np.array([1.0])}
        st = OptimizerState()
        # scalar reference for f(w) = w^2
        w, m, v = 1.0, 0.0, 0.0
        for t in range(1, 4):
            g = 2 * w
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.1 * 0.01 * w
            w = w - 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            adamw_step(p, {"w": 2 * p["w"]}, st, cfg)
            assert p["w"][0] == pytest.approx(w, abs=1e-15)
        assert st.step == 3

    def test_non_finite_gradient_names_block(self):
        with pytest.raises(TrainingError, match="projector.W1"):
            adamw_step({"projector.W1": np.ones(2)}, {"projector.W1": np.array([1.0, np.inf])},
                       OptimizerState(), TrainConfig())


class TestBatchLoss:
    def test_mrl_only_gradcheck(self):
        cfg = toy_config(alpha=0, beta=0, gamma=0)
        rep = grad_check_model(toy_model(), toy_batch(cfg), cfg, n_coords=120)
        assert rep.passed, rep

    @pytest.mark.parametrize("pooling", ["mean", "cls", "eos"])
    def test_full_gradcheck(self, pooling):
        cfg = toy_config()
        rep = grad_check_model(toy_model(pooling), toy_batch(cfg), cfg, n_coords=120, seed=1)
        assert rep.passed, rep

    def test_corrupted_gradient_fails_and_names_coordinate(self):
        cfg = toy_config()
        model = toy_model()
        rep = grad_check_model(model, toy_batch(cfg), cfg, n_coords=30, corrupt=("layers.1.W.B", 5))
        assert not rep.passed
        r, c = np.unravel_index(5, model.adapters["layers.1.W"].B.shape)
        assert rep.worst_name == f"layers.1.W.B[{r},{c}]"

    def test_stop_grad_only_zeroes_encoder_part_of_temporal_path(self):
        cfg = toy_config(beta=0, gamma=0)
        model, batch = toy_model(), toy_batch(cfg)
        full = batch_loss(model, batch, cfg).grads
        sg = batch_loss(model, batch, toy_config(beta=0, gamma=0, stop_grad_encoder=True)).grads
        np.testing.assert_allclose(sg["projector.W1"], full["projector.W1"], atol=1e-14)
        assert not np.allclose(sg["layers.0.W.B"], full["layers.0.W.B"])

    def test_items_without_spans_counted(self):
        cfg = toy_config()
        out = batch_loss(toy_model(), toy_batch(cfg), cfg, need_grad=False)
        batch = toy_batch(cfg)
        items = list(batch.anchors) + list(batch.positives) + [x for n in batch.negatives for x in n]
        assert out.empty_temporal == sum(1 for x in items if not x.spans)


class TestTrain:
    def test_lr_zero_keeps_parameters(self):
        model = toy_model()
        before = {k: v.copy() for k, v in model.trainable().items()}
        train(model, list(toy_triplets()), toy_config(lr=0.0, weight_decay=0.0))
        for k, v in model.trainable().items():
            np.testing.assert_array_equal(v, before[k])

    def test_base_frozen_and_reproducible(self, tmp_path):
        cfg = toy_config()
        m1, m2 = toy_model(perturb=False), toy_model(perturb=False)
        base = {k: v.copy() for k, v in m1.params.arrays.items()}
        r1 = train(m1, list(toy_triplets()), cfg, tmp_path / "a")
        r2 = train(m2, list(toy_triplets()), cfg, tmp_path / "b")
        for k, v in m1.params.arrays.items():
            assert v.tobytes() == base[k].tobytes()
        assert r1.curve_csv() == r2.curve_csv()
        assert all(math.isfinite(row["total"]) for row in r1.curve)
        for name in ("checkpoint.unmerged.tmrl", "checkpoint.merged.tmrl", "loss_curve.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_mismatched_projector(self):
        with pytest.raises(ConfigError):
            train(toy_model(), list(toy_triplets()), toy_config(loss=toy_config().loss.with_(t=4)))
