import math

import pytest

import trajprint as tp


@pytest.fixture(scope="module")
def setup():
    model = tp.random_gmm_model(seed=3)
    key = tp.make_key(seed=7)
    carrier = [5.0 * math.sin(i + 1.0) for i in range(16)]
    anchor = tp.make_anchor(carrier, tp.random_message(1, 16), key)
    return model, key, anchor


def test_codec_roundtrip():
    key = tp.make_key(seed=11, bits=12)
    image = tp.embed([0.3 * i for i in range(16)], "101100111000", key)
    assert tp.decode(image, key) == "101100111000"
    assert all(abs(abs(l) - 4.0) < 1e-12 for l in tp.decode_soft(image, key))


def test_sample_and_invert(setup):
    model, _, anchor = setup
    assert model.dim == 16 and model.kind == "analytic_gmm"
    xt = tp.invert(model, anchor.watermarked, refine=5)
    back = tp.sample(model, xt)
    assert len(back) == 16
    assert model.model_id == tp.Model.from_json(model.to_json()).model_id


def test_synthesize_and_verify(setup):
    model, key, anchor = setup
    config = tp.OptimConfig()
    config.seed = 4
    recs = [tp.synthesize(model, anchor, key, config)]
    config.seed = 5
    recs.append(tp.synthesize(model, anchor, key, config))
    assert recs[0].target_bit_accuracy >= 0.95
    assert recs[0].model_id == model.model_id
    assert len(recs[0].trace) >= 1

    report = tp.verify(model, recs, key)
    assert report["verdict"] == "infringing"
    assert report["n"] == 2

    calls = []

    def generate(z):
        calls.append(1)
        return tp.sample(model, z)

    closure_report = tp.verify_closure(generate, model.model_id, recs, key)
    assert len(calls) == 2
    assert closure_report["bit_accuracies"] == report["bit_accuracies"]

    baseline = tp.synthesize(model, anchor, key, config, baseline=True)
    assert baseline.baseline


def test_statistics():
    r = tp.t_test([0.5] * 4)
    assert r["t"] == 0.0 and r["p"] == 0.5
    assert tp.bit_accuracy("1010", "1000") == 0.75
    assert tp.student_t_upper_tail(1.3, 1.0) == pytest.approx(0.20871440016015271, abs=1e-12)


def test_attacks(setup):
    model, _, _ = setup
    q = tp.quantize(model, 10)
    assert q.model_id != model.model_id
    assert tp.round_mantissa(1.0 / 3.0, 10) == 0.333251953125
    with pytest.raises(tp.TrajprintError) as info:
        tp.prune(model, 0.1)
    assert info.value.kind == "unsupported_kind" and info.value.code == 6


def test_errors_carry_codes(setup):
    model, _, _ = setup
    with pytest.raises(tp.TrajprintError) as info:
        tp.sample(model, [0.0] * 3)
    assert info.value.code == 10


def test_config_hash_is_order_independent():
    cfg = tp.default_config()
    reordered = dict(reversed(list(cfg.items())))
    assert tp.config_hash(cfg) == tp.config_hash(reordered)
    assert tp.config_hash({}) == tp.config_hash(cfg)
