"""LSTM memory: streaming vs batch, the masked loss against a loop oracle, gradients, training."""
import numpy as np
import pytest

from memnav.errors import ConfigError, UndefinedLossError
from memnav.latent import VaeConfig, VaeModel, train_vae
from memnav.memory import (HEADS, LATENT_VARIANTS, MemoryConfig, MemoryModel, MemoryState, head_errors,
                           make_batch, memory_loss, reconstruct_heads, roll, train_memory)
from memnav.neural import no_grad
from memnav.neural.gradcheck import gradcheck

TINY_VAE = VaeConfig(n_e=3, channels=(2, 2, 2, 2, 3, 3))


@pytest.fixture
def vae():
    return VaeModel(TINY_VAE, np.random.default_rng(3))


def _seqs(rng, lengths):
    return [rng.uniform(0.1, 0.9, (n, 64)) for n in lengths]


def test_variant_table():
    assert len(LATENT_VARIANTS) == 7
    assert MemoryConfig.variant("cur+past20").shift == 20
    assert MemoryConfig.variant("cur+past20").active_heads == ["past", "current"]
    assert MemoryConfig.variant("past10+cur+fut10").active_heads == list(HEADS)
    with pytest.raises(ConfigError):
        MemoryConfig.variant("nope")
    with pytest.raises(ConfigError):
        MemoryConfig(offset=40, multiplier=2, seq_len=64)


def test_streaming_matches_batch(vae, rng):
    model = MemoryModel(vae, MemoryConfig(n_l=8, offset=2, seq_len=16), np.random.default_rng(0))
    seq = _seqs(rng, [12])[0]
    batch = make_batch(model, [seq])
    with no_grad():
        full = model.roll_t(batch.zvae).data[0]
    np.testing.assert_allclose(roll(model, batch.zvae[0]), full, atol=1e-12)
    # continuing a stream over two halves equals one pass
    state = MemoryState.zeros(1, 8)
    first = roll(model, batch.zvae[0, :5], state)
    second = roll(model, batch.zvae[0, 5:], state)
    np.testing.assert_allclose(np.concatenate([first, second]), full, atol=1e-12)


def _loop_oracle(model, seqs, flags, shift):
    batch = make_batch(model, seqs)
    total = 0.0
    for k, head in enumerate(HEADS):
        if not flags[k]:
            continue
        sign = (-1, 0, 1)[k]
        errs = []
        for b, seq in enumerate(seqs):
            z = roll(model, batch.zvae[b, : len(seq)])
            for t in range(len(seq)):
                src = t + sign * shift
                if 0 <= src < len(seq):
                    pred = reconstruct_heads(model, z[t])[k]
                    errs.append(np.mean((pred - seq[src]) ** 2))
        total += np.mean(errs)
    return total


@pytest.mark.parametrize("variant", ["cur", "cur+past10", "fut10", "past10+cur+fut10"])
def test_loss_matches_loop_oracle(vae, rng, variant):
    cfg = MemoryConfig.variant(variant, n_l=6, offset=3, seq_len=16)
    model = MemoryModel(vae, cfg, np.random.default_rng(1))
    seqs = _seqs(rng, [9, 5, 12])
    got = memory_loss(model, make_batch(model, seqs)).item()
    assert got == pytest.approx(_loop_oracle(model, seqs, cfg.flags, cfg.shift), abs=1e-12)


def test_all_masked_term_raises(vae, rng):
    model = MemoryModel(vae, MemoryConfig.variant("cur+past10", n_l=6, offset=5, seq_len=16))
    with pytest.raises(UndefinedLossError):
        memory_loss(model, make_batch(model, _seqs(rng, [4, 3])))


def test_memory_loss_gradient(vae, rng):
    cfg = MemoryConfig.variant("past10+cur+fut10", n_l=4, offset=1, seq_len=8)
    model = MemoryModel(vae, cfg, np.random.default_rng(2))
    batch = make_batch(model, _seqs(rng, [5, 4]))
    assert gradcheck(lambda: memory_loss(model, batch), model.parameters()) < 1e-4


def test_decoder_is_frozen_copy(vae, rng):
    before = {k: v.copy() for k, v in vae.state_dict().items()}
    cfg = MemoryConfig.variant("cur", n_l=8, offset=2, seq_len=8, epochs=2, batch_size=4)
    model, curve = train_memory(_seqs(rng, [20, 15, 12]), vae, cfg)
    for k, v in vae.state_dict().items():
        np.testing.assert_array_equal(v, before[k])
        np.testing.assert_array_equal(model.vae.state_dict()[k], before[k])
    assert len(curve) == 2
    assert "vae" not in " ".join(model.named_parameters())


def test_training_learns_current_frame(rng):
    # every scan is one of four step profiles; the current head should learn to reproduce them
    patterns = np.where(np.arange(64)[None, :] < np.array([10, 25, 40, 55])[:, None], 0.3, 0.9)
    eps = [patterns[rng.integers(4, size=40)] for _ in range(8)]
    vae, _ = train_vae(np.concatenate(eps), VaeConfig(n_e=4, channels=(4, 4, 8, 8, 8, 8), epochs=40,
                                                      lr=5e-3, batch_size=32))
    cfg = MemoryConfig.variant("cur", n_l=16, offset=2, seq_len=16, epochs=100, batch_size=8, lr=5e-3)
    untrained = head_errors(MemoryModel(vae, cfg), eps)["current"].mean()
    model, curve = train_memory(eps, vae, cfg)
    assert head_errors(model, eps)["current"].mean() < 0.2 * untrained
    assert curve[-1]["loss"] < curve[0]["loss"]


def test_no_long_episode_errors(vae, rng):
    cfg = MemoryConfig.variant("cur+past10", n_l=4, offset=10, seq_len=32, epochs=1)
    with pytest.raises(ConfigError):
        train_memory(_seqs(rng, [5, 6]), vae, cfg)
