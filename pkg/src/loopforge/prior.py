"""Autoregressive LSTM over codebook indices, plus sampling strategies.

The first token is drawn from the empirical first-position distribution of
the training corpus; positions 1..31 come from the LSTM, decoded with
temperature, top-k, or nucleus sampling. Tie-breaking is lowest-index
everywhere so runs are reproducible down to the bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from . import ndiff as nd
from .codec import K, S, VqVaeModel
from .pianoroll import Corpus, PianorollPhrase
from .util import rng_for

EMBED_DIM = 64
HIDDEN = 256
LAYERS = 4
ARGMAX_TEMPERATURE = 1e-6


@dataclass
class SamplerSpec:
    kind: str = "temperature"       # temperature | topk | nucleus
    temperature: float = 0.7
    k: int = 30
    p: float = 0.08

    def __post_init__(self):
        if self.kind not in ("temperature", "topk", "nucleus"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 1 <= self.k <= K:
            raise ValueError(f"k must be in [1, {K}]")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must be in (0, 1]")


class PriorModel:
    def __init__(self, seed: int = 0):
        rng = rng_for(seed, "prior-init")
        self.embed = nd.Embedding(rng, K, EMBED_DIM)
        self.lstm = nd.LSTM(rng, EMBED_DIM, HIDDEN, LAYERS)
        self.proj = nd.Dense(rng, HIDDEN, K)
        self.p_z0 = np.full(K, 1.0 / K)

    def parameters(self):
        return self.embed.parameters() + self.lstm.parameters() + self.proj.parameters()

    def fit_z0(self, tokens: np.ndarray) -> None:
        """Empirical first-position distribution of a token corpus."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size == 0:
            raise ValueError("empty token corpus")
        counts = np.bincount(tokens[:, 0], minlength=K).astype(np.float64)
        self.p_z0 = counts / counts.sum()

    def logits_over_time(self, tokens: np.ndarray) -> nd.Tensor:
        """Teacher-forcing logits for positions 1..S-1; (N*(S-1), K) tape tensor."""
        tokens = np.asarray(tokens, dtype=np.int64)
        n, s = tokens.shape
        state = self.lstm.initial_state(n)
        outs = []
        for t in range(s - 1):
            x = self.embed(tokens[:, t])
            h, state = self.lstm.step(x, state)
            outs.append(self.proj(h))
        stacked = nd.permute(nd.stack0(outs), (1, 0, 2))  # (N, S-1, K)
        return nd.reshape(stacked, (n * (s - 1), K))

    def next_logits(self, prefix: np.ndarray) -> np.ndarray:
        """Logits for the next position given a nonempty prefix (inference)."""
        prefix = np.asarray(prefix, dtype=np.int64).reshape(-1)
        if prefix.size < 1 or prefix.size >= S:
            raise ValueError(f"prefix length must be in [1, {S}), got {prefix.size}")
        state = self.lstm.initial_state(1)
        h = None
        for t in range(prefix.size):
            x = self.embed(prefix[t : t + 1])
            h, state = self.lstm.step(x, state)
        return self.proj(h).data[0].copy()

    def batched_argmax_accuracy(self, tokens: np.ndarray) -> float:
        """Teacher-forcing accuracy: argmax prediction vs next token."""
        tokens = np.asarray(tokens, dtype=np.int64)
        logits = self.logits_over_time(tokens).data
        targets = tokens[:, 1:].reshape(-1)
        return float((logits.argmax(axis=1) == targets).mean())

    def sample_z0(self, rng: np.random.Generator) -> int:
        return int(rng.choice(K, p=self.p_z0))

    def save(self, path) -> None:
        entries = {}
        for name, p in self.embed.named_parameters():
            entries[f"embed.{name}"] = p.data
        for name, p in self.lstm.named_parameters():
            entries[f"lstm.{name}"] = p.data
        for name, p in self.proj.named_parameters():
            entries[f"proj.{name}"] = p.data
        entries["p_z0"] = self.p_z0
        checkpoint.save(path, entries)

    @classmethod
    def load(cls, path) -> "PriorModel":
        e = checkpoint.load(path)
        model = cls(seed=0)
        model.embed.load_state_arrays(e, prefix="embed.")
        model.lstm.load_state_arrays(e, prefix="lstm.")
        model.proj.load_state_arrays(e, prefix="proj.")
        p = e["p_z0"]
        model.p_z0 = p / p.sum()  # re-normalize after fp32 storage
        return model


# ---------------------------------------------------------------------------
# sampling strategies

def softmax_probs(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def temperature_distribution(logits: np.ndarray, t: float) -> np.ndarray:
    if t <= ARGMAX_TEMPERATURE:
        out = np.zeros(len(logits))
        out[int(np.argmax(logits))] = 1.0  # argmax; ties to lowest index
        return out
    return softmax_probs(logits, t)


def topk_distribution(logits: np.ndarray, k: int, t: float) -> np.ndarray:
    """Keep the k largest logits (boundary ties: lower index wins), then
    renormalize with a temperature softmax over the survivors."""
    logits = np.asarray(logits, np.float64)
    if not 1 <= k <= logits.size:
        raise ValueError(f"k must be in [1, {logits.size}]")
    # stable order: descending logit, ascending index
    order = np.lexsort((np.arange(logits.size), -logits))
    kept = order[:k]
    probs = np.zeros(logits.size)
    probs[kept] = temperature_distribution(logits[kept], t)
    return probs


def nucleus_distribution(logits: np.ndarray, p: float, t: float) -> np.ndarray:
    """Smallest descending-probability prefix with cumulative mass >= p,
    renormalized; always contains at least one token."""
    logits = np.asarray(logits, np.float64)
    if not 0.0 < p <= 1.0:
        raise ValueError("p must be in (0, 1]")
    base = temperature_distribution(logits, t)
    order = np.lexsort((np.arange(base.size), -base))
    csum = np.cumsum(base[order])
    cut = int(np.searchsorted(csum, p, side="left")) + 1
    kept = order[:cut]
    probs = np.zeros(base.size)
    probs[kept] = base[kept] / base[kept].sum()
    return probs


def sampler_distribution(logits: np.ndarray, spec: SamplerSpec) -> np.ndarray:
    if spec.kind == "temperature":
        return temperature_distribution(logits, spec.temperature)
    if spec.kind == "topk":
        return topk_distribution(logits, spec.k, spec.temperature)
    return nucleus_distribution(logits, spec.p, spec.temperature)


def _draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    return int(rng.choice(probs.size, p=probs))


def sample_temperature(logits, t, rng) -> int:
    return _draw(temperature_distribution(logits, t), rng)


def sample_topk(logits, k, t, rng) -> int:
    return _draw(topk_distribution(logits, k, t), rng)


def sample_nucleus(logits, p, t, rng) -> int:
    return _draw(nucleus_distribution(logits, p, t), rng)


# ---------------------------------------------------------------------------
# training

@dataclass
class PriorTrainConfig:
    epochs: int = 200
    batch: int = 64
    lr_max: float = 1e-3
    lr_min: float = 5e-6
    weight_decay: float = 1e-4
    seed: int = 0
    target_accuracy: float | None = None


def train_prior(tokens: np.ndarray, cfg: PriorTrainConfig | None = None,
                progress: list | None = None) -> tuple[PriorModel, float]:
    """Next-token cross-entropy over positions 1..S-1 with teacher forcing.

    Returns (model, final teacher-forcing accuracy on the corpus).
    """
    cfg = cfg or PriorTrainConfig()
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise ValueError("empty token corpus")
    model = PriorModel(seed=cfg.seed)
    model.fit_z0(tokens)
    opt = nd.AdamW(model.parameters(), weight_decay=cfg.weight_decay)
    n = tokens.shape[0]
    batches_per_epoch = max(1, (n + cfg.batch - 1) // cfg.batch)
    sched = nd.CosineSchedule(cfg.lr_max, cfg.lr_min, cfg.epochs * batches_per_epoch)
    batch_rng = rng_for(cfg.seed, "prior-batches")

    step = 0
    for epoch in range(cfg.epochs):
        order = batch_rng.permutation(n)
        for lo in range(0, n, cfg.batch):
            chunk = tokens[order[lo : lo + cfg.batch]]
            opt.zero_grad()
            logits = model.logits_over_time(chunk)
            loss = nd.cross_entropy_mean(logits, chunk[:, 1:].reshape(-1))
            loss.backward()
            opt.step(lr=sched(step))
            step += 1
            if progress is not None:
                progress.append(float(loss.data))
        if cfg.target_accuracy is not None:
            if model.batched_argmax_accuracy(tokens) >= cfg.target_accuracy:
                break
    return model, model.batched_argmax_accuracy(tokens)


# ---------------------------------------------------------------------------
# generation

def generate(model: PriorModel, codec_model: VqVaeModel, sampler: SamplerSpec,
             n: int, seed: int = 0) -> tuple[Corpus, np.ndarray]:
    """Sample n token sequences and decode them to phrases.

    Each sample derives its own stream from (seed, index), so corpora are
    reproducible and order-independent. Returns (corpus, token array).
    """
    all_tokens = np.empty((n, S), dtype=np.int64)
    for i in range(n):
        rng = rng_for(seed, "generate", i)
        seq = np.empty(S, dtype=np.int64)
        seq[0] = model.sample_z0(rng)
        state = model.lstm.initial_state(1)
        h = None
        for t in range(S - 1):
            x = model.embed(seq[t : t + 1])
            h, state = model.lstm.step(x, state)
            logits = model.proj(h).data[0]
            probs = sampler_distribution(logits, sampler)
            seq[t + 1] = _draw(probs, rng)
        all_tokens[i] = seq
    _, labels = codec_model.decode_batch(all_tokens)
    phrases = [PianorollPhrase(lab) for lab in labels]
    prov = [(f"generated:{sampler.kind}", i) for i in range(n)]
    return Corpus(phrases, prov), all_tokens
