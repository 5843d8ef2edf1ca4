import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_episode, tiny_run_config
from fsrvos import tensor as T
from fsrvos.config import ConfigError, TrainConfig
from fsrvos.ism import InstancePredictionSet
from fsrvos.model import FewShotRVOS
from fsrvos.objective import (
    Adam,
    Assignment,
    GroundTruthSequence,
    dice_loss,
    downsample_target,
    focal_loss,
    kernel_loss,
    match_for_training,
    sequence_iou,
    total_loss,
)
from fsrvos.tensor.core import NonFiniteError
from fsrvos.train import ground_truth


def t(x):
    return T.Tensor(np.asarray(x, dtype=float))


def test_focal_closed_form():
    assert focal_loss(t(0.5), np.array(1.0)).item() == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-15)
    assert focal_loss(t(0.5), np.array(1.0)).item() == pytest.approx(0.043321, abs=1e-6)


def test_focal_limits_and_clamp():
    assert focal_loss(t(1 - 1e-12), np.array(1.0)).item() < 1e-12
    assert np.isfinite(focal_loss(t(0.0), np.array(1.0)).item())
    assert np.isfinite(focal_loss(t(1.0), np.array(0.0)).item())


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.sampled_from([0.0, 1.0]))
def test_focal_reduces_to_half_bce(p, target):
    bce = -(target * math.log(p) + (1 - target) * math.log(1 - p))
    assert focal_loss(t(p), np.array(target), alpha=0.5, gamma=0.0).item() == pytest.approx(bce / 2, rel=1e-12)


def test_focal_soft_target_is_linear_mix():
    p = t([0.3, 0.8])
    soft = focal_loss(p, np.array([0.25, 0.25])).item()
    pos = focal_loss(p, np.array([1.0, 1.0])).item()
    neg = focal_loss(p, np.array([0.0, 0.0])).item()
    assert soft == pytest.approx(0.25 * pos + 0.75 * neg, rel=1e-12)


def test_focal_shape_mismatch():
    with pytest.raises(ValueError):
        focal_loss(t([0.5, 0.5]), np.array([1.0]))


def test_dice_examples():
    g = np.array([[1.0, 1.0], [0.0, 0.0]])
    assert dice_loss(t(g), g).item() == 0.0
    assert dice_loss(t(np.ones((2, 2))), g).item() == pytest.approx(2 / 7, abs=1e-15)
    assert dice_loss(t(np.zeros((2, 2))), np.zeros((2, 2))).item() == 0.0


def _kernel_oracle(logits, target, alpha=0.25, gamma=2.0):
    n, h, w = logits.shape
    dice_total, focal_total = 0.0, 0.0
    for i in range(n):
        inter = ps = gs = 0.0
        for y in range(h):
            for x in range(w):
                p = 1.0 / (1.0 + math.exp(-logits[i, y, x]))
                g = target[i, y, x]
                inter += p * g
                ps += p
                gs += g
                pc = min(max(p, 1e-7), 1 - 1e-7)
                focal_total += g * (-alpha * (1 - pc) ** gamma * math.log(pc))
                focal_total += (1 - g) * (-(1 - alpha) * pc ** gamma * math.log(1 - pc))
        dice_total += 1 - (2 * inter + 1) / (ps + gs + 1)
    return dice_total / n + focal_total / (n * h * w)


def test_kernel_loss_loop_oracle(rng):
    logits = rng.normal(0, 2, size=(3, 5, 6))
    target = (rng.random((3, 5, 6)) < 0.4).astype(float)
    assert kernel_loss(t(logits), target).item() == pytest.approx(_kernel_oracle(logits, target), abs=1e-9)
    soft = rng.random((3, 5, 6))
    assert kernel_loss(t(logits), soft).item() == pytest.approx(_kernel_oracle(logits, soft), abs=1e-9)


def test_kernel_loss_decomposes(rng):
    logits = rng.normal(size=(1, 4, 4))
    target = (rng.random((1, 4, 4)) < 0.5).astype(float)
    p = T.sigmoid(t(logits))
    parts = dice_loss(p, target).item() + focal_loss(p, target).item()
    assert kernel_loss(t(logits), target).item() == pytest.approx(parts, abs=1e-12)


def test_kernel_loss_perfect_and_mismatch():
    target = np.zeros((1, 4, 4))
    target[0, 1:3, 1:3] = 1.0
    logits = np.where(target > 0, 30.0, -30.0)
    assert kernel_loss(t(logits), target).item() < 1e-6
    with pytest.raises(ValueError):
        kernel_loss(t(logits), target[:, :3])


def test_downsample_target():
    m = np.zeros((8, 8), bool)
    m[0:2, 0:4] = True
    soft = downsample_target(m, 4)
    assert np.allclose(soft, [[0.5, 0.0], [0.0, 0.0]])
    near = downsample_target(m, 4, soft=False)
    assert np.array_equal(near, [[1.0, 0.0], [0.0, 0.0]])


def test_ground_truth_visibility():
    m = np.zeros((3, 8, 8), bool)
    m[0, 3, 3] = True  # a sliver invisible at H/4 in area terms is still visible
    m[2, :4, :4] = True
    gt = GroundTruthSequence.from_masks(m)
    assert gt.visible.tolist() == [True, False, True]
    assert gt.masks.shape == (3, 2, 2)


def _gt(mask_h4, visible=None):
    mask_h4 = np.asarray(mask_h4, float)
    vis = mask_h4.any(axis=(1, 2)) if visible is None else np.asarray(visible)
    return GroundTruthSequence(vis, mask_h4)


def _preds(scores_nt, logits):
    return InstancePredictionSet(np.asarray(scores_nt, float), np.asarray(logits, float))


def test_match_single():
    preds = _preds([[0.9, 0.8], [0.2, 0.3], [0.1, 0.1]], np.zeros((3, 2, 2, 2)))
    gt = _gt(np.ones((2, 2, 2)))
    a = match_for_training(preds, [gt], "single")
    assert a.pairs == {0: 0}
    assert a.targets([gt])[:, 0].tolist() == [1, 0, 0]
    with pytest.raises(ConfigError):
        match_for_training(preds, [gt, gt], "single")


def _two_objects():
    m0 = np.zeros((1, 4, 4))
    m0[0, :2, :2] = 1
    m1 = np.zeros((1, 4, 4))
    m1[0, 2:, 2:] = 1
    return m0, m1


def test_match_multi_identical_masks():
    m0, m1 = _two_objects()
    logits = np.stack([np.where(m1 > 0, 5.0, -5.0), np.where(m0 > 0, 5.0, -5.0), -5 * np.ones((1, 4, 4))])
    preds = _preds([[0.9], [0.8], [0.95]], logits)
    a = match_for_training(preds, [_gt(m0), _gt(m1)], "multi", 0.5)
    assert a.pairs == {0: 1, 1: 0}


def test_match_multi_fallback_by_score():
    m0, m1 = _two_objects()
    preds = _preds([[0.1], [0.3], [0.2], [0.05]], np.zeros((4, 1, 4, 4)))
    a = match_for_training(preds, [_gt(m0), _gt(m1)], "multi", 0.5)
    assert a.pairs == {1: 0, 2: 1}
    assert a.targets([_gt(m0), _gt(m1)])[:, 0].tolist() == [0, 1, 1, 0]


def test_match_multi_too_many_objects():
    m0, _ = _two_objects()
    preds = _preds([[0.6]], np.zeros((1, 1, 4, 4)))
    with pytest.raises(ConfigError):
        match_for_training(preds, [_gt(m0), _gt(m0)], "multi")


def test_match_permutation_equivariant(rng):
    m0, m1 = _two_objects()
    gts = [_gt(m0), _gt(m1)]
    checked = 0
    for _ in range(200):
        scores = rng.uniform(0.05, 0.95, size=(5, 1))
        logits = rng.normal(size=(5, 1, 4, 4))
        ious = [sequence_iou(logits[i], g) for i in range(5) for g in gts if scores[i, 0] > 0.5]
        if len(set(ious)) < len(ious):
            continue  # ties resolve by index, which is not permutation invariant
        checked += 1
        perm = rng.permutation(5)
        a = match_for_training(_preds(scores, logits), gts, "multi")
        b = match_for_training(_preds(scores[perm], logits[perm]), gts, "multi")
        assert {int(perm[i]): g for i, g in b.pairs.items()} == a.pairs
    assert checked >= 50


def test_total_loss_linear_law():
    cfg = TrainConfig()
    scores = T.Tensor(np.array([[0.7, 0.2]]))
    logits = T.Tensor(np.random.default_rng(0).normal(size=(1, 2, 4, 4)))
    m0, _ = _two_objects()
    loss = total_loss(scores, logits, [_gt(m0)], Assignment({0: 0}, 2), cfg)
    assert loss.total.item() == 2 * loss.cls.item() + 5 * loss.kernel.item()
    assert loss.lambda_cls == 2.0 and loss.lambda_kernel == 5.0


def test_total_loss_perfect_prediction_is_small():
    m0, _ = _two_objects()
    logits = np.stack([np.where(m0 > 0, 40.0, -40.0), -40 * np.ones((1, 4, 4))], axis=1)
    scores = T.Tensor(np.array([[1 - 1e-12, 1e-12]]))
    loss = total_loss(scores, T.Tensor(logits), [_gt(m0)], Assignment({0: 0}, 2))
    assert loss.total.item() < 1e-6


def test_invisible_frames_get_no_mask_loss():
    mask = np.zeros((2, 4, 4))
    mask[0, :2, :2] = 1
    gt = _gt(mask)
    scores = T.Tensor(np.full((2, 1), 0.5))
    base = np.random.default_rng(1).normal(size=(2, 1, 4, 4))
    other = base.copy()
    other[1] += 3.0
    a = total_loss(scores, T.Tensor(base), [gt], Assignment({0: 0}, 1)).kernel.item()
    b = total_loss(scores, T.Tensor(other), [gt], Assignment({0: 0}, 1)).kernel.item()
    assert a == b


def test_total_loss_gradient_on_tiny_model():
    cfg = tiny_run_config()
    model = FewShotRVOS(cfg.model, seed=1)
    ep = tiny_episode(seed=3)
    gts = ground_truth(ep)
    with T.no_grad():
        p = model(ep)
    assignment = match_for_training(InstancePredictionSet.from_model(p.scores.data, p.logits.data), gts, "single")

    def loss_fn():
        pr = model(ep)
        return total_loss(pr.scores, pr.logits, gts, assignment, cfg.train).total

    err = T.param_grad_check(loss_fn, model.parameters(), coords_per_param=1, seed=0)
    assert err < 1e-3


def _quad_params(seed=0):
    rng = np.random.default_rng(seed)
    return {"a": T.Tensor(rng.normal(size=(3, 2)), requires_grad=True),
            "b": T.Tensor(rng.normal(size=4), requires_grad=True)}


def _quad_step(params, opt, target):
    with T.tape_scope():
        loss = T.sum((params["a"] - target) ** 2) + T.sum(params["b"] ** 2)
        opt.zero_grad()
        T.backward(loss)
    opt.step()


def test_adam_first_step_magnitude():
    p = {"w": T.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)}
    p["w"].grad = np.array([0.5, -3.0, 1e-3])
    opt = Adam(p, lr=1e-4, weight_decay=0.0)
    opt.step()
    step = np.array([1.0, -2.0, 3.0]) - p["w"].data
    g = np.array([0.5, -3.0, 1e-3])
    assert np.allclose(step, 1e-4 * g / (np.abs(g) + 1e-8), rtol=1e-9)


def test_adam_zero_grad_no_decay_is_identity():
    p = {"w": T.Tensor(np.array([1.0, 2.0]), requires_grad=True)}
    p["w"].grad = np.zeros(2)
    Adam(p, weight_decay=0.0).step()
    assert np.array_equal(p["w"].data, [1.0, 2.0])


def test_adam_decoupled_decay_alone():
    p = {"w": T.Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    p["w"].grad = np.zeros(2)
    Adam(p, lr=0.1, weight_decay=0.5).step()
    assert np.allclose(p["w"].data, [0.95, -1.9], rtol=0, atol=1e-15)


def test_adam_rejects_non_finite():
    p = {"w": T.Tensor(np.array([1.0, 2.0]), requires_grad=True)}
    p["w"].grad = np.array([np.nan, 0.0])
    opt = Adam(p)
    with pytest.raises(NonFiniteError, match="w"):
        opt.step()
    assert np.array_equal(p["w"].data, [1.0, 2.0]) and opt.t == 0


def test_adam_deterministic_and_state_round_trip():
    target = np.ones((3, 2))
    runs = []
    for _ in range(2):
        params = _quad_params()
        opt = Adam(params, lr=1e-2)
        for _ in range(20):
            _quad_step(params, opt, target)
        runs.append({k: v.data.copy() for k, v in params.items()})
    assert all(np.array_equal(runs[0][k], runs[1][k]) for k in runs[0])

    params = _quad_params()
    opt = Adam(params, lr=1e-2)
    for _ in range(10):
        _quad_step(params, opt, target)
    clone = {k: T.Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}
    opt2 = Adam(clone, lr=1e-2)
    opt2.load_state_dict(opt.state_dict())
    for _ in range(10):
        _quad_step(params, opt, target)
        _quad_step(clone, opt2, target)
    assert all(np.array_equal(params[k].data, clone[k].data) for k in params)


def test_adam_matches_torch_adamw():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(7)
    w0 = rng.normal(size=(4, 3))
    grads = rng.normal(size=(15, 4, 3))
    p = {"w": T.Tensor(w0.copy(), requires_grad=True)}
    opt = Adam(p, lr=1e-2, weight_decay=5e-2)
    tw = torch.tensor(w0.copy(), requires_grad=True)
    topt = torch.optim.AdamW([tw], lr=1e-2, betas=(0.9, 0.999), eps=1e-8, weight_decay=5e-2)
    for g in grads:
        p["w"].grad = g
        opt.step()
        tw.grad = torch.tensor(g)
        topt.step()
    assert np.allclose(p["w"].data, tw.detach().numpy(), rtol=0, atol=1e-12)
