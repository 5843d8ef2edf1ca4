import numpy as np
import pytest

import oracles
from conftest import tiny_episode, tiny_model_config
from fsrvos import tensor as T
from fsrvos.encoders import TextFeatures
from fsrvos.maskgen import (
    CrossModalFPN,
    EncoderLayer,
    KernelHead,
    LevelLayout,
    ReferringHead,
    TransformerDecoder,
    TransformerEncoder,
    coordinate_grid,
    dynamic_conv_decode,
    dynamic_param_count,
)
from fsrvos.model import FewShotRVOS
from fsrvos.tensor.nn import record_attention


def text(rng, length, width, pad=0):
    tokens = rng.normal(size=(length + pad, width))
    valid = np.array([True] * length + [False] * pad)
    return TextFeatures(T.Tensor(tokens), T.Tensor(tokens[valid].mean(axis=0)), valid)


def test_dynamic_param_count():
    assert dynamic_param_count(8) == 169
    assert dynamic_param_count(16) == 233


def test_level_layout_split_round_trip(rng):
    maps = [T.Tensor(rng.normal(size=(2, 4, h, h))) for h in (4, 2, 1)]
    flat = T.concat([m.transpose(0, 2, 3, 1).reshape(2, -1, 4) for m in maps], axis=1)
    layout = LevelLayout([(4, 4), (2, 2), (1, 1)])
    assert layout.total == 21 and layout.offsets == [0, 16, 20]
    for a, b in zip(layout.split(flat), maps):
        assert np.array_equal(a.data, b.data)


def test_encoder_layer_attention_only_oracle(rng):
    width, s = 8, 6
    layer = EncoderLayer(width, 2, 16, rng)
    for lin in (layer.ffn.fc1, layer.ffn.fc2):
        lin.weight.data[:] = 0.0
        lin.bias.data[:] = 0.0
    x = rng.normal(size=(s, width))
    pos = rng.normal(size=(s, width))
    got = layer(T.Tensor(x), T.Tensor(pos)).data
    h = oracles.layer_norm(x + oracles.multihead(layer.attn, x + pos, x + pos, x), layer.norm1)
    want = oracles.layer_norm(h, layer.norm2)
    assert np.max(np.abs(got - want)) < 1e-10


def test_encoder_frames_independent(rng):
    enc = TransformerEncoder(8, 2, 16, 2, 3, rng)
    maps = [T.Tensor(rng.normal(size=(3, 8, h, h))) for h in (4, 2, 1)]
    mem, pos, layout = enc(maps)
    assert mem.shape == (3, 21, 8) and pos.shape == (21, 8)
    perm = [2, 0, 1]
    mem2, _, _ = enc([T.Tensor(m.data[perm]) for m in maps])
    assert np.allclose(mem2.data, mem.data[perm], atol=1e-12)


def test_decoder_shapes_and_text_sensitivity(rng):
    dec = TransformerDecoder(8, 2, 16, 2, 3, rng)
    memory = T.Tensor(np.repeat(rng.normal(size=(1, 10, 8)), 2, axis=0))
    pos = T.Tensor(rng.normal(size=(10, 8)))
    t = text(rng, 3, 8)
    out = dec(memory, pos, t)
    assert out.shape == (2, 3, 8)
    assert np.array_equal(out.data[0], out.data[1])
    zero = TextFeatures(t.tokens, T.Tensor(np.zeros(8)), t.valid)
    assert np.abs(dec(memory, pos, zero).data - out.data).max() > 1e-6


def test_decoder_single_query_self_attention_is_trivial(rng):
    dec = TransformerDecoder(8, 2, 16, 1, 1, rng)
    with record_attention() as log:
        dec(T.Tensor(rng.normal(size=(1, 5, 8))), T.Tensor(np.zeros((5, 8))), text(rng, 2, 8))
    assert np.allclose(log[0], 1.0)


def test_reference_points_clamped(rng):
    dec = TransformerDecoder(8, 2, 16, 1, 2, rng)
    dec.ref_points.data[:] = [[-0.5, 0.3], [1.7, 0.9]]
    assert np.array_equal(dec.reference_points().data, [[0.0, 0.3], [1.0, 0.9]])


def test_fpn_cross_matches_loop_oracle():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        width = int(rng.choice([4, 8]))
        fpn = CrossModalFPN(width, 3, 16, rng)
        h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        fv = rng.normal(size=(1, width, h, w))
        t = text(rng, int(rng.integers(1, 4)), width, int(rng.integers(0, 2)))
        level = int(rng.integers(0, 4))
        got = fpn.cross(T.Tensor(fv), t, level).data
        seq = fv[0].reshape(width, -1).T
        want = oracles.fpn_cross(seq, t.tokens.data, fpn.levels[level].text_proj, t.valid, 16)
        assert np.max(np.abs(got[0].reshape(width, -1).T - want)) < 1e-10


def test_fpn_single_token_adds_projected_token(rng):
    fpn = CrossModalFPN(4, 3, 16, rng)
    fv = rng.normal(size=(1, 4, 2, 3))
    t = text(rng, 1, 4)
    got = fpn.cross(T.Tensor(fv), t, 0).data
    token = oracles.linear(t.tokens.data, fpn.levels[0].text_proj)[0]
    assert np.allclose(got - fv, token[None, :, None, None], atol=1e-12)


def test_fpn_output_shape(rng):
    fpn = CrossModalFPN(8, 4, 16, rng)
    maps = [T.Tensor(rng.normal(size=(2, 8, 16 // 2 ** i, 16 // 2 ** i))) for i in range(4)]
    with record_attention() as log:
        out = fpn(maps, text(rng, 3, 8, 1))
    assert out.shape == (2, 4, 16, 16)
    assert all(np.max(np.abs(w.sum(-1) - 1)) < 1e-9 for w in log)


def test_referring_head(rng):
    head = ReferringHead(8, rng)
    emb = rng.normal(size=(3, 5, 8))
    scores = head(T.Tensor(emb)).data
    logits = emb @ head.fc.weight.data[:, 0] + head.fc.bias.data[0]
    assert scores.shape == (3, 5)
    assert np.array_equal(scores, T.sigmoid(T.Tensor(logits)).data)
    assert np.allclose(scores, 1 / (1 + np.exp(-logits)), rtol=1e-14)
    head.fc.weight.data[:] = 0.0
    head.fc.bias.data[:] = 0.0
    assert np.all(head(T.Tensor(emb)).data == 0.5)


def test_kernel_head_zero_path(rng):
    head = KernelHead(8, 169, rng)
    head.fc3.weight.data[:] = 0.0
    out = head(T.Tensor(np.zeros((2, 3, 8))))
    assert out.shape == (2, 3, 169) and not out.data.any()
    f_seg = T.Tensor(rng.normal(size=(2, 8, 4, 4)))
    logits = dynamic_conv_decode(f_seg, out, T.Tensor(rng.random((3, 2))))
    assert not logits.data.any()


def test_coordinate_grid_vanishes_at_reference():
    grid = coordinate_grid(4, 8)
    ref = np.array([(3 + 0.5) / 8, (2 + 0.5) / 4])  # pixel (y=2, x=3)
    rel = grid - ref[:, None]
    assert np.array_equal(rel[:, 2 * 8 + 3], [0.0, 0.0])


def test_dynamic_conv_loop_oracle(rng):
    c, h, w, n, f = 3, 3, 4, 2, 2
    f_seg = rng.normal(size=(f, c, h, w))
    kernels = rng.normal(size=(f, n, dynamic_param_count(c)))
    refs = rng.random((n, 2))
    got = dynamic_conv_decode(T.Tensor(f_seg), T.Tensor(kernels), T.Tensor(refs)).data
    c_in = c + 2
    for t in range(f):
        for i in range(n):
            k = kernels[t, i]
            sizes = [c_in * 8, 8, 64, 8, 8, 1]
            parts = np.split(k, np.cumsum(sizes)[:-1])
            layers = [(parts[0].reshape(8, c_in), parts[1]), (parts[2].reshape(8, 8), parts[3]),
                      (parts[4].reshape(1, 8), parts[5])]
            for y in range(h):
                for x in range(w):
                    px = [f_seg[t, ch, y, x] for ch in range(c)]
                    px += [(x + 0.5) / w - refs[i, 0], (y + 0.5) / h - refs[i, 1]]
                    assert abs(oracles.pointwise_mlp(px, layers)[0] - got[t, i, y, x]) < 1e-10


def test_dynamic_conv_length_mismatch(rng):
    with pytest.raises(ValueError, match="kernel length"):
        dynamic_conv_decode(T.Tensor(np.zeros((1, 8, 2, 2))), T.Tensor(np.zeros((1, 2, 100))),
                            T.Tensor(np.zeros((2, 2))))


def test_end_to_end_shapes_and_row_stochastic():
    cfg = tiny_model_config()
    model = FewShotRVOS(cfg, seed=0)
    ep = tiny_episode(frames=3)
    with record_attention() as log:
        p = model(ep)
    assert p.scores.shape == (3, cfg.queries)
    assert p.logits.shape == (3, cfg.queries, 8, 8)
    assert np.all((p.scores.data > 0) & (p.scores.data < 1))
    assert len(log) > 10
    for w in log:
        assert np.max(np.abs(w.sum(axis=-1) - 1.0)) < 1e-9


def test_checkpoint_prefixes():
    names = {n.split(".")[0] for n, _ in FewShotRVOS(tiny_model_config()).named_parameters()}
    assert names == {"visual", "text", "cma", "enc", "dec", "fpn", "kernel_head", "ref_head"}
