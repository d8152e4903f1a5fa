"""VQ-VAE: compress a 128x57 phrase into 32 discrete codebook indices and
reconstruct multi-label pianorolls from them.

The encoder halves the time axis twice (128 -> 64 -> 32) and projects to
16-dim latents; each latent snaps to its nearest codebook entry (512
entries, EMA-updated centroids with dead-code restarts); the mirrored
decoder emits per-cell logits thresholded at sigma >= 0.5.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import P, STEPS
from . import checkpoint
from . import ndiff as nd
from .pianoroll import Corpus, PianorollPhrase
from .util import atomic_write_bytes, rng_for

K = 512          # codebook entries
D = 16           # latent dim
S = 32           # latent time steps
BETA = 0.25      # commitment weight
EMA_DECAY = 0.99
EMA_EPS = 1e-5
RESTART_WINDOW = 25   # steps between dead-code sweeps
LOGIT_CLAMP = 30.0
ENC_WIDTH = 128


@dataclass
class TokenSequence:
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.shape != (S,):
            raise ValueError(f"token sequence must have length {S}, got {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= K):
            raise ValueError(f"token indices must lie in [0, {K})")
        self.indices = idx


def reconstruction_error(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Fraction of differing cells between two binary grids."""
    a = np.asarray(x)
    b = np.asarray(x_hat)
    if a.shape != b.shape:
        raise ValueError(f"grids differ in shape: {a.shape} vs {b.shape}")
    return float(np.mean(a != b))


class VqVaeModel:
    def __init__(self, seed: int = 0):
        rng = rng_for(seed, "vqvae-init")
        w = ENC_WIDTH
        self.enc = [
            nd.Conv1d(rng, P, w, 4, stride=2, padding=1),
            nd.Conv1d(rng, w, w, 4, stride=2, padding=1),
            nd.Conv1d(rng, w, w, 3, stride=1, padding=1),
            nd.Conv1d(rng, w, D, 1),
        ]
        self.dec = [
            nd.Conv1d(rng, D, w, 1),
            nd.Conv1d(rng, w, w, 3, stride=1, padding=1),
            nd.ConvTranspose1d(rng, w, w, 4, stride=2, padding=1),
            nd.ConvTranspose1d(rng, w, P, 4, stride=2, padding=1),
        ]
        self.codebook = rng.normal(size=(K, D)) * 0.1
        self.ema_count = np.ones(K)
        self.ema_sum = self.codebook.copy()
        self.usage_window = np.zeros(K, dtype=np.int64)
        self.steps_in_window = 0

    # -- tape-building forward passes (training) ----------------------------

    def encode_t(self, x: nd.Tensor) -> nd.Tensor:
        """(N, 57, 128) -> (N, 16, 32) on the tape."""
        h = x
        for i, layer in enumerate(self.enc):
            h = layer(h)
            if i < len(self.enc) - 1:
                h = nd.leaky_relu(h, 0.1)
        return h

    def decode_t(self, zq: nd.Tensor) -> nd.Tensor:
        """(N, 16, 32) -> logits (N, 57, 128) on the tape."""
        h = zq
        for i, layer in enumerate(self.dec):
            h = layer(h)
            if i < len(self.dec) - 1:
                h = nd.leaky_relu(h, 0.1)
        return h

    # -- inference ----------------------------------------------------------

    def encode_batch(self, grids: np.ndarray) -> np.ndarray:
        """(N, 128, 57) binary grids -> (N, 32, 16) latents, no tape."""
        x = np.transpose(np.asarray(grids, np.float64), (0, 2, 1))
        h = x
        for i, layer in enumerate(self.enc):
            b = layer.b.data if layer.b is not None else None
            h = nd.conv1d_forward(h, layer.w.data, b, layer.stride, layer.padding)
            if i < len(self.enc) - 1:
                h = np.where(h > 0, h, 0.1 * h)
        return np.transpose(h, (0, 2, 1))

    def encode(self, phrase: PianorollPhrase) -> np.ndarray:
        """Single phrase -> (32, 16) latent."""
        return self.encode_batch(phrase.grid[None].astype(np.float64))[0]

    def assign(self, z_flat: np.ndarray) -> np.ndarray:
        """Nearest codebook row per latent; ties go to the lowest index."""
        d = (z_flat * z_flat).sum(axis=1, keepdims=True) \
            + (self.codebook * self.codebook).sum(axis=1)[None, :] \
            - 2.0 * z_flat @ self.codebook.T
        return d.argmin(axis=1)

    def quantize(self, z: np.ndarray) -> tuple[TokenSequence, np.ndarray]:
        """(32, 16) latent -> (tokens, quantized latent)."""
        idx = self.assign(np.asarray(z, np.float64))
        return TokenSequence(idx), self.codebook[idx]

    def decode_batch(self, tokens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(N, 32) indices -> (logits (N, 128, 57), labels)."""
        zq = self.codebook[np.asarray(tokens, np.int64)]  # (N, 32, 16)
        h = np.transpose(zq, (0, 2, 1))
        for i, layer in enumerate(self.dec):
            b = layer.b.data if layer.b is not None else None
            if isinstance(layer, nd.ConvTranspose1d):
                h = nd.conv_transpose1d_forward(h, layer.w.data, b, layer.stride, layer.padding)
            else:
                h = nd.conv1d_forward(h, layer.w.data, b, layer.stride, layer.padding)
            if i < len(self.dec) - 1:
                h = np.where(h > 0, h, 0.1 * h)
        logits = np.transpose(h, (0, 2, 1))
        labels = (_sigmoid(logits) >= 0.5).astype(np.uint8)
        return logits, labels

    def decode(self, tokens: TokenSequence) -> tuple[np.ndarray, np.ndarray]:
        logits, labels = self.decode_batch(tokens.indices[None])
        return logits[0], labels[0]

    def tokenize_corpus(self, corpus: Corpus, batch: int = 64) -> np.ndarray:
        out = np.empty((len(corpus), S), dtype=np.int64)
        grids = corpus.stack()
        for lo in range(0, len(corpus), batch):
            z = self.encode_batch(grids[lo : lo + batch])
            out[lo : lo + z.shape[0]] = self.assign(z.reshape(-1, D)).reshape(-1, S)
        return out

    def reconstruct_corpus(self, corpus: Corpus, batch: int = 64) -> float:
        """Mean hamming reconstruction error over a corpus."""
        grids = corpus.stack()
        total = 0.0
        for lo in range(0, len(corpus), batch):
            block = grids[lo : lo + batch]
            z = self.encode_batch(block)
            tokens = self.assign(z.reshape(-1, D)).reshape(-1, S)
            _, labels = self.decode_batch(tokens)
            total += (labels != block.astype(np.uint8)).sum()
        return total / (len(corpus) * STEPS * P)

    # -- codebook maintenance ------------------------------------------------

    def ema_codebook_update(self, z_flat: np.ndarray, assignments: np.ndarray) -> None:
        counts = np.bincount(assignments, minlength=K).astype(np.float64)
        sums = np.zeros_like(self.ema_sum)
        np.add.at(sums, assignments, z_flat)
        self.ema_count = EMA_DECAY * self.ema_count + (1.0 - EMA_DECAY) * counts
        self.ema_sum = EMA_DECAY * self.ema_sum + (1.0 - EMA_DECAY) * sums
        self.codebook = self.ema_sum / np.maximum(self.ema_count, EMA_EPS)[:, None]

    def note_usage(self, assignments: np.ndarray) -> None:
        self.usage_window += np.bincount(assignments, minlength=K)
        self.steps_in_window += 1

    def restart_dead_codes(self, z_flat: np.ndarray, rng: np.random.Generator) -> int:
        """Replace codes unused over the last window with random batch latents."""
        dead = np.nonzero(self.usage_window < 1)[0]
        for k in dead:
            row = z_flat[int(rng.integers(0, z_flat.shape[0]))].copy()
            self.codebook[k] = row
            self.ema_sum[k] = row
            self.ema_count[k] = 1.0
        self.usage_window[:] = 0
        self.steps_in_window = 0
        return int(dead.size)

    # -- persistence ----------------------------------------------------------

    def parameters(self):
        out = []
        for layer in self.enc + self.dec:
            out.extend(layer.parameters())
        return out

    def state_entries(self) -> dict[str, np.ndarray]:
        entries = {}
        for tag, layers in (("enc", self.enc), ("dec", self.dec)):
            for i, layer in enumerate(layers):
                for name, p in layer.named_parameters():
                    entries[f"{tag}{i}.{name}"] = p.data
        entries["codebook"] = self.codebook
        entries["ema_count"] = self.ema_count
        entries["ema_sum"] = self.ema_sum
        return entries

    def save(self, path) -> None:
        checkpoint.save(path, self.state_entries())

    @classmethod
    def load(cls, path) -> "VqVaeModel":
        e = checkpoint.load(path)
        model = cls(seed=0)
        for tag, layers in (("enc", model.enc), ("dec", model.dec)):
            for i, layer in enumerate(layers):
                layer.load_state_arrays(e, prefix=f"{tag}{i}.")
        model.codebook = e["codebook"]
        model.ema_count = e["ema_count"]
        model.ema_sum = e["ema_sum"]
        return model


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def vq_loss(model: VqVaeModel, grids: np.ndarray) -> tuple[nd.Tensor, np.ndarray, np.ndarray]:
    """One training forward pass.

    Returns (loss, assignments, flat latents); the loss is mean BCE over all
    cells plus BETA times the mean squared commitment gap. Gradients pass
    straight through the quantization; the codebook learns by EMA only.
    """
    n = grids.shape[0]
    x = nd.Tensor(np.transpose(grids, (0, 2, 1)))
    z = model.encode_t(x)                                # (N, D, S)
    z_flat = nd.reshape(nd.permute(z, (0, 2, 1)), (n * S, D))
    assignments = model.assign(z_flat.data)
    zq = model.codebook[assignments]
    st = nd.straight_through(z_flat, zq)
    dec_in = nd.permute(nd.reshape(st, (n, S, D)), (0, 2, 1))
    logits = model.decode_t(dec_in)                      # (N, P, STEPS)
    targets = np.transpose(grids, (0, 2, 1))
    recon = nd.bce_with_logits_mean(logits, targets, clamp=LOGIT_CLAMP)
    commit = nd.scale(nd.sum_squares(nd.sub(z_flat, nd.Tensor(zq))), BETA / (n * S * D))
    return nd.add(recon, commit), assignments, z_flat.data


@dataclass
class VqTrainConfig:
    steps: int = 2000
    batch: int = 64
    lr_max: float = 1e-3
    lr_min: float = 5e-6
    weight_decay: float = 1e-4
    seed: int = 0
    target_error: float | None = None   # stop early once reached
    check_every: int = 100


def train_vqvae(corpus: Corpus, cfg: VqTrainConfig | None = None,
                progress: list | None = None) -> VqVaeModel:
    cfg = cfg or VqTrainConfig()
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    model = VqVaeModel(seed=cfg.seed)
    grids = corpus.stack()
    opt = nd.AdamW(model.parameters(), weight_decay=cfg.weight_decay)
    sched = nd.CosineSchedule(cfg.lr_max, cfg.lr_min, cfg.steps)
    batch_rng = rng_for(cfg.seed, "vqvae-batches")
    restart_rng = rng_for(cfg.seed, "vqvae-restarts")

    for step in range(cfg.steps):
        if len(corpus) <= cfg.batch:
            batch = grids
        else:
            batch = grids[batch_rng.choice(len(corpus), size=cfg.batch, replace=False)]
        opt.zero_grad()
        loss, assignments, z_flat = vq_loss(model, batch)
        loss.backward()
        opt.step(lr=sched(step))
        model.ema_codebook_update(z_flat, assignments)
        model.note_usage(assignments)
        if model.steps_in_window >= RESTART_WINDOW:
            model.restart_dead_codes(z_flat, restart_rng)
        if progress is not None:
            progress.append(float(loss.data))
        if cfg.target_error is not None and (step + 1) % cfg.check_every == 0:
            if model.reconstruct_corpus(corpus) < cfg.target_error:
                break
    return model


# ---------------------------------------------------------------------------
# .tok container

TOK_MAGIC = b"TOK1"


def save_tokens(path, tokens: np.ndarray) -> None:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != S:
        raise ValueError(f"token array must be (n, {S}), got {arr.shape}")
    out = bytearray()
    out += TOK_MAGIC
    out += struct.pack("<IH", arr.shape[0], S)
    out += arr.astype("<u2").tobytes()
    atomic_write_bytes(path, bytes(out))


def load_tokens(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != TOK_MAGIC:
        raise ValueError(f"bad token-corpus magic {data[:4]!r}")
    count, s = struct.unpack_from("<IH", data, 4)
    if s != S:
        raise ValueError(f"unsupported sequence length {s}")
    flat = np.frombuffer(data[10 : 10 + 2 * count * s], dtype="<u2")
    if flat.size != count * s:
        raise ValueError("token corpus truncated")
    return flat.astype(np.int64).reshape(count, s)
