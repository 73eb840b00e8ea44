import numpy as np
import pytest

from actcluster.encoder import EncoderConfig, EncoderModel, pseudo_label_train

from util import fd_grad, rel_err


CFG = EncoderConfig()


def _model(n_channels=3, n_classes=3, seed=0, config=CFG):
    return EncoderModel(config, n_channels, n_classes,
                        np.random.default_rng(seed))


def test_conv_stack_reduces_512_to_1():
    assert CFG.conv_output_len() == 1


def test_latent_shape_c3():
    model = _model(3)
    x = np.random.default_rng(1).normal(size=(4, 3, 512))
    latent, _ = model.forward(x, mode="train")
    assert latent.shape == (4, 32)
    assert model.params["proj_w"].shape == (96, 32)


def test_dense_input_c117():
    model = _model(117)
    assert model.params["proj_w"].shape == (117 * 32, 32)
    x = np.random.default_rng(2).normal(size=(2, 117, 512))
    assert model.encode(x).shape == (2, 32)


def test_bad_stack_rejected():
    bad = EncoderConfig(conv_specs=((50, 2, 4), (40, 2, 8)))
    with pytest.raises(ValueError, match="length 1"):
        EncoderModel(bad, 3, 3, np.random.default_rng(0))


def test_wrong_input_shape_rejected():
    model = _model(3)
    with pytest.raises(ValueError, match="channels"):
        model.encode(np.zeros((2, 4, 512)))
    with pytest.raises(ValueError, match="length"):
        model.encode(np.zeros((2, 3, 500)))


def test_channel_permutation_permutes_features():
    """Shared filters: permuting input channels permutes the per-channel
    pre-dense feature blocks the same way."""
    model = _model(3)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 512))
    perm = np.array([2, 0, 1])

    def pre_dense(inp):
        latent, caches = model.forward(inp, mode="eval")
        c_proj, shape = caches[-1]
        return c_proj[0].reshape(inp.shape[0], 3, -1)

    feats = pre_dense(x)
    feats_p = pre_dense(x[:, perm])
    np.testing.assert_allclose(feats_p, feats[:, perm], atol=1e-12)


def test_head_logit_shape_and_classes():
    model = _model(3, n_classes=5)
    x = np.random.default_rng(4).normal(size=(3, 3, 512))
    latent, _ = model.forward(x, mode="train")
    logits, _ = model.head_forward(latent)
    assert logits.shape == (3, 5)


def test_encode_deterministic_and_eval_mode():
    model = _model(3)
    x = np.random.default_rng(5).normal(size=(5, 3, 512))
    z1 = model.encode(x)
    z2 = model.encode(x)
    np.testing.assert_array_equal(z1, z2)
    # different batching reorders float sums; values agree to rounding
    z3 = model.encode(x, batch_size=2)
    np.testing.assert_allclose(z1, z3, atol=1e-12)


def test_end_to_end_gradients():
    """Finite differences through the whole network on a handful of
    parameters per tensor.  Coordinates that sit on a ReLU or maxpool kink
    are detected (loss curvature jumps) and skipped."""
    small = EncoderConfig(conv_specs=((4, 2, 2), (2, 1, 3)), window_len=16,
                          latent_dim=6, head_hidden=5)
    model = EncoderModel(small, 2, 3, np.random.default_rng(6))
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 2, 16))
    targets = np.array([0, 1, 2, 1])
    weights = np.array([1.0, 2.0, 1.0, 0.5])

    def loss():
        val, _ = model.loss_and_grads(x, targets, weights, mode="train")
        return val

    _, grads = model.loss_and_grads(x, targets, weights, mode="train")
    h = 1e-6
    checked = 0
    for name, arr in model.params.values.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        idx = rng.choice(flat.size, size=min(4, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss()
            flat[i] = orig - h
            fm = loss()
            flat[i] = orig + 2 * h
            fp2 = loss()
            flat[i] = orig - 2 * h
            fm2 = loss()
            flat[i] = orig
            fd1 = (fp - fm) / (2 * h)
            fd2 = (fp2 - fm2) / (4 * h)
            if abs(fd1 - fd2) > 1e-4 * max(1.0, abs(fd1)):
                continue  # kink crossing, finite differences unreliable
            err = abs(fd1 - gflat[i]) / max(abs(fd1) + abs(gflat[i]), 1e-6)
            assert err < 1e-3, f"{name}[{i}]: fd {fd1} vs analytic {gflat[i]}"
            checked += 1
    assert checked > 30


def test_training_decreases_loss_on_pure_batch():
    model = _model(2, n_classes=2, seed=8)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(12, 2, 512))
    x[:6] += 2.0
    targets = np.array([0] * 6 + [1] * 6)
    weights = np.ones(12)
    losses = pseudo_label_train(model, x, targets, weights,
                                np.random.default_rng(10), epochs=8)
    assert np.mean(losses[-3:]) < np.mean(losses[:3])


def test_training_deterministic_per_seed():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(8, 2, 512))
    targets = np.array([0, 1] * 4)
    weights = np.ones(8)
    finals = []
    for _ in range(2):
        model = _model(2, n_classes=2, seed=12)
        pseudo_label_train(model, x, targets, weights,
                           np.random.default_rng(13), epochs=2)
        finals.append({k: v.copy() for k, v in model.params.values.items()})
    for k in finals[0]:
        np.testing.assert_array_equal(finals[0][k], finals[1][k])


def test_weight_half_duplication_equivalence():
    """Full-batch: weights all 1 equals the duplicated dataset at weight
    0.5, gradient for gradient."""
    cfg = EncoderConfig(conv_specs=((4, 2, 2), (2, 1, 3)), window_len=16,
                        latent_dim=6, head_hidden=5, batch_size=64)
    rng = np.random.default_rng(14)
    x = rng.normal(size=(5, 2, 16))
    targets = np.array([0, 1, 2, 0, 1])
    model = EncoderModel(cfg, 2, 3, np.random.default_rng(15))
    _, g_plain = model.loss_and_grads(x, targets, np.ones(5), mode="eval")
    x2 = np.concatenate([x, x])
    t2 = np.concatenate([targets, targets])
    _, g_dup = model.loss_and_grads(x2, t2, np.full(10, 0.5), mode="eval")
    for k in g_plain:
        assert rel_err(g_plain[k], g_dup[k]) < 1e-10


def test_zero_weight_windows_never_trained():
    model = _model(2, n_classes=2, seed=16)
    rng = np.random.default_rng(17)
    x = rng.normal(size=(6, 2, 512))
    x[3:] = np.nan  # would poison training if ever touched
    targets = np.array([0, 1, 0, 1, 0, 1])
    weights = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    losses = pseudo_label_train(model, x, targets, weights,
                                np.random.default_rng(18), epochs=2)
    assert np.all(np.isfinite(losses))


def test_all_zero_weights_rejected():
    model = _model(2, n_classes=2)
    with pytest.raises(ValueError, match="positive weight"):
        pseudo_label_train(model, np.zeros((4, 2, 512)), [0, 1, 0, 1],
                           np.zeros(4), np.random.default_rng(0))


def test_save_load_roundtrip(tmp_path):
    model = _model(3, seed=19)
    rng = np.random.default_rng(20)
    x = rng.normal(size=(6, 3, 512))
    pseudo_label_train(model, x, np.array([0, 1, 2] * 2), np.ones(6),
                       np.random.default_rng(21), epochs=1)
    path = str(tmp_path / "enc.npz")
    model.save(path)
    clone = _model(3, seed=99)
    clone.load(path)
    np.testing.assert_array_equal(model.encode(x), clone.encode(x))


def test_load_rejects_mismatched_checkpoint(tmp_path):
    model = _model(3)
    path = str(tmp_path / "enc.npz")
    model.save(path)
    other = _model(4)
    with pytest.raises(ValueError, match="checkpoint"):
        other.load(path)


def test_mlp_reducer_shapes():
    cfg = EncoderConfig(reducer="mlp")
    model = EncoderModel(cfg, 3, 3, np.random.default_rng(22))
    x = np.random.default_rng(23).normal(size=(4, 3, 512))
    out = model.encode_reduced(x)
    assert out.shape == (4, 2)
    latent, _ = model.forward(x, mode="eval")
    logits, _ = model.head_forward(latent)
    assert logits.shape == (4, 3)
