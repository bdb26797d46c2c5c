import numpy as np
import pytest

from spatial_fsod import numerics as nx
from spatial_fsod.config import TINY, RunConfig
from spatial_fsod.evaluation import infer
from spatial_fsod.heads import loss_base
from spatial_fsod.model import (enhanced_width, forward, init_params, initial_checkpoint, leaves, predict,
                                trainable_names)
from spatial_fsod.numerics import Tape
from spatial_fsod.scenegen import build_category_space, sample_scene, stream

from helpers import full_model_gradcheck, random_batch


def test_full_model_gradient_default_batch():
    check = full_model_gradcheck(TINY, n=6, seed=0)
    assert check.passed(1e-5, 1e-8), check


@pytest.mark.parametrize("seed", range(1, 6))
@pytest.mark.parametrize("overrides", [{}, {"edge_mode": "dense"}, {"edge_embed": "fc"}, {"proj_relu": True}],
                         ids=["sparse-aux", "dense", "fc", "proj-relu"])
def test_full_model_gradient_above_difference_noise(seed, overrides):
    """Across batches, entries whose difference error exceeds 1e-5 relative must
    be explainable by rounding in the central difference itself."""
    cfg = TINY.replace(**overrides)
    params = init_params(cfg, cfg.n_base, seed)
    names = trainable_names(params, cfg, "base")
    features, geo, labels, targets = random_batch(cfg, 6, seed)

    def run(values):
        tape = Tape()
        p = leaves(tape, {**params, **values}, names)
        fw = forward(tape, p, features, geo, cfg)
        return tape, p, loss_base(fw.out, labels, targets).total

    tape, p, loss = run({})
    grads = tape.backward(loss)
    h = 1e-6
    numeric = nx.finite_difference(lambda v: float(run(v)[2].value[0, 0]), {n: params[n] for n in names}, h=h)
    # rounding in L(x+h) - L(x-h) is a few ulps of |L|, divided by 2h
    noise = 64 * np.finfo(float).eps * abs(float(loss.value[0, 0])) / (2 * h)
    for n in names:
        a, b = grads[p[n]], numeric[n]
        np.testing.assert_array_less(np.abs(a - b), 1e-5 * np.maximum(np.abs(a), np.abs(b)) + noise, err_msg=n)


def test_reasoning_off_uses_raw_features():
    cfg = TINY.replace(reasoning=False)
    params = init_params(cfg, cfg.n_base, 0)
    assert not any(k.startswith(("edge.", "gcn.")) for k in params)
    assert params["head.main_W"].shape[1] == enhanced_width(cfg) == cfg.d
    f, geo, _, _ = random_batch(cfg, 4, 0)
    tape = Tape()
    fw = forward(tape, leaves(tape, params), f, geo, cfg)
    assert fw.e.value.tobytes() == f.tobytes()
    assert fw.graph is None


def test_init_is_seeded():
    a = init_params(TINY, 4, 3)
    b = init_params(TINY, 4, 3)
    c = init_params(TINY, 4, 4)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a if k != "head.alpha")
    assert a["head.alpha"][0, 0] == 20.0 == RunConfig().alpha


def test_predict_outputs_distributions():
    params = init_params(TINY, 4, 0)
    f, geo, _, _ = random_batch(TINY, 5, 1)
    probs, offsets = predict(params, f, geo, TINY)
    assert probs.shape == (5, 5) and offsets.shape == (5, 4)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_freeze_sets():
    params = init_params(TINY, 4, 0)
    assert "head.alpha" not in trainable_names(params, TINY, "base")
    assert trainable_names(params, TINY, "finetune") == ["head.main_W", "head.reg_W"]
    assert trainable_names(params, TINY.replace(finetune_reg=False), "finetune") == ["head.main_W"]
    assert set(trainable_names(params, TINY.replace(finetune_gcn=True), "finetune")) == {
        "head.main_W", "head.reg_W", "gcn.theta0", "gcn.theta1"}


def test_infer_contracts():
    space = build_category_space(TINY, 0)
    ckpt = initial_checkpoint(TINY, space.base_ids, 0)
    scene = sample_scene(space, TINY, stream(0, "s"), allowed=set(space.base_ids))
    dets = infer(ckpt, scene, space, TINY)
    assert dets
    conf = [d.confidence for d in dets]
    assert conf == sorted(conf, reverse=True)
    assert all(0.0 < c < 1.0 for c in conf)
    assert all(d.category in space.base_ids for d in dets)


def test_infer_all_background_is_empty():
    space = build_category_space(TINY, 0)
    ckpt = initial_checkpoint(TINY, space.base_ids, 0)
    flat = {k: v.copy() for k, v in ckpt.tensors.items()}
    flat["head.alpha"][0, 0] = 0.0  # every logit ties, and ties resolve to background
    scene = sample_scene(space, TINY, stream(0, "s"), allowed=set(space.base_ids))
    assert infer(ckpt.copy(tensors=flat), scene, space, TINY) == []
