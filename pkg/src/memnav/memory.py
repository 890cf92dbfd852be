"""LSTM memory over VAE latents with past/current/future reconstruction heads."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from memnav.errors import ConfigError, UndefinedLossError
from memnav.latent import VaeModel, encode
from memnav.neural import tensor as T
from memnav.neural.layers import Linear, LSTMCell, Module
from memnav.neural.optim import Adam
from memnav.neural.tensor import Tensor, no_grad

HEADS = ("past", "current", "future")
HEAD_SIGN = {"past": -1, "current": 0, "future": 1}

# canonical latent variants: (past, current, future) flags and offset multiplier
LATENT_VARIANTS: dict[str, tuple[tuple[int, int, int], int]] = {
    "cur": ((0, 1, 0), 1),
    "fut10": ((0, 0, 1), 1),
    "cur+fut10": ((0, 1, 1), 1),
    "cur+fut20": ((0, 1, 1), 2),
    "cur+past10": ((1, 1, 0), 1),
    "cur+past20": ((1, 1, 0), 2),
    "past10+cur+fut10": ((1, 1, 1), 1),
}


@dataclass(frozen=True)
class MemoryConfig:
    n_l: int = 256
    offset: int = 10
    flags: tuple[int, int, int] = (0, 1, 0)
    multiplier: int = 1
    seq_len: int = 64
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "flags", tuple(int(f) for f in self.flags))
        if len(self.flags) != 3 or any(f not in (0, 1) for f in self.flags):
            raise ConfigError("flags must be three 0/1 values")
        if self.multiplier not in (1, 2):
            raise ConfigError("multiplier must be 1 or 2")
        if self.n_l < 1 or self.offset < 1:
            raise ConfigError("n_l and offset must be positive")
        if self.shift >= self.seq_len:
            raise ConfigError(f"offset {self.shift} frames does not fit in seq_len {self.seq_len}")

    @classmethod
    def variant(cls, name: str, **kw) -> "MemoryConfig":
        if name not in LATENT_VARIANTS:
            raise ConfigError(f"unknown latent variant {name!r}; choose from {sorted(LATENT_VARIANTS)}")
        flags, mult = LATENT_VARIANTS[name]
        return cls(flags=flags, multiplier=mult, **kw)

    @property
    def shift(self) -> int:
        return self.offset * self.multiplier

    @property
    def active_heads(self) -> list[str]:
        return [h for h, f in zip(HEADS, self.flags) if f]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


class MemoryModel(Module):
    """LSTM (n_e -> n_l) plus an affine head splitting into three latent segments.

    The decoder is a frozen copy of the VAE decoder and is not a trainable
    parameter of this module.
    """

    def __init__(self, vae: VaeModel, config: MemoryConfig = MemoryConfig(),
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng([config.seed, 2])
        self.config = config
        self.n_e = vae.n_e
        self.lstm = LSTMCell(vae.n_e, config.n_l, rng)
        self.head = Linear(config.n_l, 3 * vae.n_e, rng)
        self._vae = vae.frozen()

    @property
    def vae(self) -> VaeModel:
        return self._vae

    def roll_t(self, zvae) -> Tensor:
        """``zvae``: (B, L, n_e) -> hidden outputs (B, L, n_l) from a zero state."""
        zvae = T.as_tensor(zvae)
        bsz, length, _ = zvae.shape
        state = self.lstm.initial_state(bsz)
        outs = []
        for t in range(length):
            state = self.lstm(zvae[:, t, :], state)
            outs.append(state[0])
        return T.stack(outs, axis=1)

    def heads_t(self, z) -> Tensor:
        """(..., n_l) -> (..., 3, n_e) latent segments (past, current, future)."""
        out = self.head(z)
        return out.reshape(*z.shape[:-1], 3, self.n_e)


# ---------------------------------------------------------------------------
# inference helpers


@dataclass
class MemoryState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, batch: int, n_l: int) -> "MemoryState":
        return cls(np.zeros((batch, n_l)), np.zeros((batch, n_l)))

    def reset(self, mask) -> None:
        self.h[mask] = 0.0
        self.c[mask] = 0.0


def step_memory(model: MemoryModel, zvae: np.ndarray, state: MemoryState) -> np.ndarray:
    """Advance streaming state by one frame; returns ``z_t`` (B, n_l)."""
    with no_grad():
        h, c = model.lstm(np.atleast_2d(zvae), (state.h, state.c))
    state.h, state.c = h.data, c.data
    return state.h


def roll(model: MemoryModel, zvae_seq, state: MemoryState | None = None) -> np.ndarray:
    """``z_t`` for every prefix of a ``(L, n_e)`` latent sequence.

    Passing ``state`` continues a stream; it is updated in place.
    """
    seq = np.asarray(zvae_seq, dtype=np.float64)
    if seq.ndim != 2 or len(seq) == 0:
        raise ConfigError("roll needs a non-empty (L, n_e) sequence")
    state = state or MemoryState.zeros(1, model.config.n_l)
    out = np.empty((len(seq), model.config.n_l))
    for t, z in enumerate(seq):
        out[t] = step_memory(model, z[None, :], state)[0]
    return out


def reconstruct_heads(model: MemoryModel, z_t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode the three head segments of ``z_t`` with the frozen decoder."""
    z = np.asarray(z_t, dtype=np.float64)
    squeeze = z.ndim == 1
    z = np.atleast_2d(z)
    with no_grad():
        seg = model.heads_t(Tensor(z)).data
        scans = [model.vae.decode_t(seg[:, k, :]).data for k in range(3)]
    if squeeze:
        scans = [s[0] for s in scans]
    return scans[0], scans[1], scans[2]


# ---------------------------------------------------------------------------
# loss


@dataclass
class MemoryBatch:
    scans: np.ndarray     # (B, L, R), zero padded
    zvae: np.ndarray      # (B, L, n_e)
    lengths: np.ndarray   # (B,)


def make_batch(model_or_vae, sequences: list[np.ndarray]) -> MemoryBatch:
    """Pad scan sequences and encode them with encoder means."""
    vae = model_or_vae.vae if isinstance(model_or_vae, MemoryModel) else model_or_vae
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    length = int(lengths.max())
    rays = sequences[0].shape[1]
    scans = np.zeros((len(sequences), length, rays))
    for i, s in enumerate(sequences):
        scans[i, : len(s)] = s
    mu = encode(vae, scans.reshape(-1, rays))[0].reshape(len(sequences), length, -1)
    return MemoryBatch(scans, mu, lengths)


def head_targets(batch: MemoryBatch, head: str, shift: int):
    """Valid ``(b, t)`` pairs and their target frames for one head."""
    bsz, length, _ = batch.scans.shape
    t = np.arange(length)[None, :]
    src = t + HEAD_SIGN[head] * shift
    valid = (t < batch.lengths[:, None]) & (src >= 0) & (src < batch.lengths[:, None])
    b_idx, t_idx = np.nonzero(valid)
    return b_idx, t_idx, batch.scans[b_idx, t_idx + HEAD_SIGN[head] * shift]


def frame_errors(model: MemoryModel, batch: MemoryBatch, head: str, shift: int | None = None):
    """Per-frame MSE of one head: returns ``(b_idx, t_idx, errors)`` for valid frames."""
    shift = model.config.shift if shift is None else shift
    with no_grad():
        z = model.roll_t(batch.zvae)
        b_idx, t_idx, target = head_targets(batch, head, shift)
        seg = model.heads_t(z).data[b_idx, t_idx, HEADS.index(head)]
        pred = model.vae.decode_t(seg).data
    return b_idx, t_idx, np.mean((pred - target) ** 2, axis=1)


def memory_loss(model: MemoryModel, batch: MemoryBatch, config: MemoryConfig | None = None,
                return_terms: bool = False):
    """Sum over active heads of the masked-mean reconstruction MSE."""
    config = config or model.config
    if not any(config.flags):
        zero = Tensor(0.0)
        return (zero, {}) if return_terms else zero
    z = model.roll_t(batch.zvae)
    seg = model.heads_t(z)
    total = None
    terms = {}
    for k, head in enumerate(HEADS):
        if not config.flags[k]:
            continue
        b_idx, t_idx, target = head_targets(batch, head, config.shift)
        if len(b_idx) == 0:
            raise UndefinedLossError(f"every frame of the {head} term is masked")
        pred = model.vae.decode_t(seg[b_idx, t_idx, k])
        d = pred - target
        term = T.mean(d * d)
        terms[head] = term.item()
        total = term if total is None else total + term
    return (total, terms) if return_terms else total


# ---------------------------------------------------------------------------
# training


def _window_bounds(length: int, seq_len: int, min_len: int, rng) -> list[tuple[int, int]]:
    """Consecutive windows of ``seq_len`` with a random phase; short ones dropped."""
    phase = int(rng.integers(seq_len)) if length > seq_len else 0
    cuts = sorted({0, *range(phase, length, seq_len), length})
    return [(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b - a >= min_len]


def train_memory(episodes, vae: VaeModel, config: MemoryConfig = MemoryConfig(),
                 model: MemoryModel | None = None, log_path=None) -> tuple[MemoryModel, list[dict]]:
    """Train LSTM + head on episode-segmented scans; VAE stays frozen."""
    if hasattr(episodes, "episodes"):
        episodes = episodes.episodes
    if config.shift >= config.seq_len:
        raise ConfigError("requested offset exceeds the sequence length")
    if not any(config.flags):
        raise ConfigError("at least one head flag must be set for training")
    model = model or MemoryModel(vae, config)
    rng = np.random.default_rng([config.seed, 3])
    opt = Adam(model.named_parameters(), lr=config.lr, max_grad_norm=5.0)
    min_len = config.shift + 1
    # encoder means computed once; the encoder is frozen
    encoded = [encode(model.vae, ep)[0] if len(ep) else np.zeros((0, vae.n_e)) for ep in episodes]
    eps_pairs = [(np.asarray(ep), z) for ep, z in zip(episodes, encoded)]
    curve = []
    log = open(log_path, "a") if log_path else None
    try:
        for epoch in range(config.epochs):
            windows = [(ep[a:b], z[a:b]) for ep, z in eps_pairs
                       for a, b in _window_bounds(len(ep), config.seq_len, min_len, rng)]
            if not windows:
                raise ConfigError("no episode is long enough for the configured offsets")
            order = rng.permutation(len(windows))
            losses = []
            for start in range(0, len(order), config.batch_size):
                chunk = [windows[i] for i in order[start:start + config.batch_size]]
                batch = _pad(chunk)
                opt.zero_grad()
                loss = memory_loss(model, batch, config)
                loss.backward()
                opt.step()
                losses.append(loss.item())
            row = {"epoch": epoch, "loss": float(np.mean(losses)), "windows": len(windows)}
            curve.append(row)
            if log:
                log.write(json.dumps(row) + "\n")
    finally:
        if log:
            log.close()
    return model, curve


def _pad(chunk) -> MemoryBatch:
    lengths = np.array([len(s) for s, _ in chunk], dtype=np.int64)
    length = int(lengths.max())
    scans = np.zeros((len(chunk), length, chunk[0][0].shape[1]))
    zvae = np.zeros((len(chunk), length, chunk[0][1].shape[1]))
    for i, (s, z) in enumerate(chunk):
        scans[i, : len(s)] = s
        zvae[i, : len(z)] = z
    return MemoryBatch(scans, zvae, lengths)


def evaluation_windows(episodes, seq_len: int, min_len: int = 1) -> list[tuple[np.ndarray, int]]:
    """Deterministic non-overlapping windows ``(scans, start)`` for held-out scoring."""
    out = []
    for ep in episodes:
        for s in range(0, len(ep), seq_len):
            w = ep[s:s + seq_len]
            if len(w) >= min_len:
                out.append(w)
    return out


def head_errors(model: MemoryModel, episodes, shift: int | None = None,
                batch_size: int = 32) -> dict[str, np.ndarray]:
    """Per-frame reconstruction error of all three heads on held-out episodes."""
    shift = model.config.shift if shift is None else shift
    wins = evaluation_windows(episodes, model.config.seq_len, shift + 1)
    out = {h: [] for h in HEADS}
    for start in range(0, len(wins), batch_size):
        batch = make_batch(model, wins[start:start + batch_size])
        for h in HEADS:
            out[h].append(frame_errors(model, batch, h, shift)[2])
    return {h: np.concatenate(v) if v else np.zeros(0) for h, v in out.items()}
