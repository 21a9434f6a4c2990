import json

import numpy as np
import pytest

from madvex.attack import (INSTRUMENTED, ORIGINAL, AttackConfig, attack_binary,
                           attack_instrumented, craft, instrument, transfer_evaluate)
from madvex.cnn import Architecture, CnnModel, forward
from madvex.errors import EmptyCorpus, InvalidConfig, InvalidDensity, NothingEditable
from madvex.external import validate
from madvex.imaging import classify_transform, image_for_crafting
from madvex.report import aggregate
from madvex.wasm import encode_module, parse_module

TINY = Architecture(filters=(2, 3, 4))


def biased_model(bias, seed=0):
    m = CnnModel.initialize(TINY, seed=seed)
    m.params["dense_b"][0] = bias
    return m


class TestConfig:
    def test_defaults(self):
        c = AttackConfig()
        assert (c.epsilon, c.tau, c.max_iterations, c.target_class) == (0.05, 1e-13, 10_000, 0)

    @pytest.mark.parametrize("kw", [
        {"epsilon": 0}, {"tau": 0}, {"tau": 0.5}, {"max_iterations": 0},
        {"target_class": 2}, {"bounds": "box"}, {"compute_dtype": "float16"},
    ])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfig):
            AttackConfig(**kw)

    def test_reached(self):
        assert AttackConfig(tau=0.1).reached(0.1)
        assert not AttackConfig(tau=0.1).reached(0.11)
        assert AttackConfig(tau=0.1, target_class=1).reached(0.9)


class TestCraft:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.image = rng.uniform(0, 1, (100, 100))
        self.mask = np.zeros((100, 100), dtype=np.uint8)
        self.mask[10:60, 10:60] = 1

    def test_already_below_tau(self):
        model = biased_model(-100.0)
        adv, rep = craft(model, self.image, self.mask)
        assert rep.iterations_used == 0 and rep.reached_tau
        assert np.array_equal(adv, self.image)

    def test_empty_mask(self):
        with pytest.raises(NothingEditable):
            craft(biased_model(0.0), self.image, np.zeros((100, 100)))

    def test_mask_discipline_and_progress(self):
        model = biased_model(0.5, seed=1)
        cfg = AttackConfig(tau=0.3, max_iterations=200, compute_dtype="float64")
        adv, rep = craft(model, self.image, self.mask, cfg)
        outside = self.mask == 0
        assert np.array_equal(adv[outside], self.image[outside])
        assert adv.min() >= 0.0 and adv.max() <= 1.0
        assert rep.final_substitute_score <= rep.initial_score
        assert rep.final_substitute_score == pytest.approx(forward(model, adv), rel=1e-9)
        assert rep.iterations_used <= cfg.max_iterations
        assert rep.editable_pixels == int(self.mask.sum())

    def test_bounds_respected(self):
        model = biased_model(0.5, seed=1)
        lo = np.clip(self.image - 0.01, 0, 1)
        hi = np.clip(self.image + 0.01, 0, 1)
        adv, _ = craft(model, self.image, self.mask, AttackConfig(max_iterations=30), (lo, hi))
        assert np.all(adv >= lo) and np.all(adv <= hi)

    def test_unit_bounds_ignore_tight_ones(self):
        model = biased_model(0.5, seed=1)
        flat = (self.image, self.image)
        cfg = AttackConfig(max_iterations=5, bounds="unit")
        adv, _ = craft(model, self.image, self.mask, cfg, flat)
        assert not np.array_equal(adv, self.image)

    def test_pinned_pixels_end_early(self):
        # zero-width bounds: every step is clipped away, so the result is final at once
        model = biased_model(0.5, seed=1)
        adv, rep = craft(model, self.image, self.mask, AttackConfig(max_iterations=500),
                         (self.image, self.image))
        assert rep.iterations_used == 500 and not rep.reached_tau
        assert np.array_equal(adv, self.image)

    def test_target_one(self):
        model = biased_model(-0.5, seed=1)
        cfg = AttackConfig(tau=0.3, target_class=1, max_iterations=200)
        _, rep = craft(model, self.image, self.mask, cfg)
        assert rep.final_substitute_score >= rep.initial_score

    def test_deterministic(self):
        model = biased_model(0.5, seed=1)
        cfg = AttackConfig(max_iterations=20)
        a, _ = craft(model, self.image, self.mask, cfg)
        b, _ = craft(model, self.image, self.mask, cfg)
        assert np.array_equal(a, b)


class TestAttackBinary:
    @pytest.mark.parametrize("kind", ["se", "or"])
    def test_payload_only_diff(self, small_corpus, kind):
        model = biased_model(0.5, seed=2)
        data = small_corpus[0].data
        inst, pmap = instrument(data, kind, 0.05, 0)
        adv, rep = attack_instrumented(inst, pmap, model, AttackConfig(max_iterations=30))
        assert len(adv) == len(inst)
        diff = {i for i in range(len(inst)) if inst[i] != adv[i]}
        assert diff and diff <= set(pmap.offsets)
        assert encode_module(parse_module(adv)) == adv
        assert validate(adv) in (True, None)
        assert rep.inference_score == pytest.approx(forward(model, classify_transform(adv)))
        assert rep.kind == kind and rep.density == 0.05 and rep.gadget_count == pmap.gadget_count
        json.dumps(rep.to_json())

    def test_end_to_end_deterministic(self, small_corpus):
        model = biased_model(0.5, seed=2)
        cfg = AttackConfig(max_iterations=10)
        a, _ = attack_binary(small_corpus[1].data, model, "se", 0.02, 4, cfg)
        b, _ = attack_binary(small_corpus[1].data, model, "se", 0.02, 4, cfg)
        assert a == b

    def test_zero_density(self, small_corpus):
        with pytest.raises(InvalidDensity):
            attack_binary(small_corpus[0].data, biased_model(0.0), "se", 0.0)

    def test_inference_score_near_crafting_score(self, small_corpus):
        # feasible bounds leave only quantization between the two paths
        model = biased_model(0.3, seed=3)
        inst, pmap = instrument(small_corpus[2].data, "se", 0.1, 0)
        img, rec = image_for_crafting(inst, pmap.offsets)
        adv, rep = attack_instrumented(inst, pmap, model, AttackConfig(max_iterations=50))
        assert rep.clamp_deviation_count == 0
        assert abs(rep.inference_score - rep.final_substitute_score) < 1e-2


class TestTransfer:
    def test_records(self, small_corpus):
        mal = [s for s in small_corpus if s.label == 1][:3]
        subs = [[biased_model(0.5, seed=1)], [biased_model(0.5, seed=2)]]
        target = biased_model(0.0, seed=5)
        records, reports = transfer_evaluate(mal, subs, target, [0.02, 0.1],
                                             config=AttackConfig(max_iterations=5))
        series = {r["series"] for r in records}
        assert series == {ORIGINAL, INSTRUMENTED, "Adv. M-0"}
        assert len(reports) == 2 * 2 * 3
        assert all(0.0 <= r["value"] <= 1.0 for r in records)
        table = aggregate(records)
        row = table.get(kind="se", density=0.1, series=ORIGINAL)
        assert row.n == 2 and row.std == 0.0

    def test_empty(self):
        with pytest.raises(EmptyCorpus):
            transfer_evaluate([], [[biased_model(0.0)]], biased_model(0.0), [0.02])
