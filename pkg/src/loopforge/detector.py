"""One-class loop detector.

Phrases are summarized as bar-to-bar correlation matrices; a small bias-free
MLP is trained to pull loop-structured matrices toward a fixed center, and
the squared distance from that center is the loop score (lower = loopier).
Thresholding and rejection filtering both derive from the training-score
distribution.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import B, P, T
from . import checkpoint
from . import ndiff as nd
from .audio import STFT_HOP, STFT_WINDOW, mel_frames
from .pianoroll import Corpus, PianorollPhrase
from .util import atomic_write_bytes, rng_for

VEC_LEN = B * (B - 1) // 2  # strict upper triangle, row-major
HIDDEN = (64, 32, 16)
CENTER_GUARD = 0.1
SCORE_FLOOR = 1e-12
DEFAULT_WEIGHT_DECAY = 1e-4

_TRIU = np.triu_indices(B, k=1)


@dataclass
class CorrMatrix:
    values: np.ndarray  # (B, B) symmetric, unit diagonal, entries in [-1, 1]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (B, B):
            raise ValueError(f"correlation matrix must be {B}x{B}, got {v.shape}")
        self.values = v

    @property
    def vec(self) -> np.ndarray:
        """Row-major strict upper triangle: (0,1),(0,2),...,(6,7)."""
        return self.values[_TRIU]

    @classmethod
    def from_vec(cls, vec: np.ndarray) -> "CorrMatrix":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (VEC_LEN,):
            raise ValueError(f"vec must have length {VEC_LEN}")
        m = np.eye(B)
        m[_TRIU] = vec
        m[(_TRIU[1], _TRIU[0])] = vec
        return cls(m)

    def validate(self) -> None:
        v = self.values
        if not np.allclose(v, v.T):
            raise ValueError("matrix not symmetric")
        if not np.allclose(np.diag(v), 1.0):
            raise ValueError("diagonal not 1")
        if v.min() < -1.0 - 1e-9 or v.max() > 1.0 + 1e-9:
            raise ValueError("entries outside [-1, 1]")


def midi_correlation(phrase: PianorollPhrase) -> CorrMatrix:
    """Bar pair (i, j) -> 1 - 2 * (hamming distance / cells per bar)."""
    bars = phrase.grid.reshape(B, T * P).astype(np.float64)
    diff = np.abs(bars[:, None, :] - bars[None, :, :]).sum(axis=2)
    return CorrMatrix(1.0 - 2.0 * diff / (T * P))


def audio_correlation(samples: np.ndarray, sample_rate: int, bpm: float) -> CorrMatrix:
    """Pearson correlation of per-bar flattened log-mel spectrogram blocks."""
    if bpm <= 0:
        raise ValueError(f"bpm must be positive, got {bpm}")
    x = np.asarray(samples, np.float64)
    bar_len = int(np.floor(sample_rate * 240.0 / bpm))  # bar = 4 beats
    if bar_len < STFT_WINDOW:
        raise ValueError(f"bar of {bar_len} samples shorter than one analysis window")
    if x.size < B * bar_len:
        raise ValueError(f"clip holds {x.size} samples, need {B * bar_len} for {B} bars")
    feats = []
    for i in range(B):
        bar = x[i * bar_len : (i + 1) * bar_len]
        feats.append(mel_frames(bar, sample_rate).reshape(-1))
    feats = np.stack(feats)
    centered = feats - feats.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered ** 2).sum(axis=1))
    m = np.eye(B)
    for i in range(B):
        for j in range(i + 1, B):
            if norms[i] < 1e-12 or norms[j] < 1e-12:
                c = 0.0  # zero-variance bars carry no correlation signal
            else:
                c = float(centered[i] @ centered[j] / (norms[i] * norms[j]))
            m[i, j] = m[j, i] = c
    return CorrMatrix(m)


# ---------------------------------------------------------------------------
# synthetic matrices (desk-scale stand-in for a loop-labeled audio set)

@dataclass
class SyntheticLoopSpec:
    period: int = 2                 # bars; must divide B
    corr_level: float = 0.85        # within-period correlation, in [0.7, 1]
    noise_level: float = 0.15       # spread of the cross-period entries

    def __post_init__(self):
        if B % self.period:
            raise ValueError(f"period {self.period} must divide {B}")


def synthetic_loop_matrix(rng: np.random.Generator, spec: SyntheticLoopSpec | None = None) -> CorrMatrix:
    spec = spec or SyntheticLoopSpec(period=int(rng.choice([2, 4])))
    m = np.eye(B)
    for i in range(B):
        for j in range(i + 1, B):
            if (j - i) % spec.period == 0:
                c = rng.uniform(max(0.7, spec.corr_level - 0.1), min(1.0, spec.corr_level + 0.1))
            else:
                c = rng.normal(0.2, spec.noise_level)
            m[i, j] = m[j, i] = np.clip(c, -1.0, 1.0)
    return CorrMatrix(m)


def synthetic_random_matrix(rng: np.random.Generator) -> CorrMatrix:
    m = np.eye(B)
    for i in range(B):
        for j in range(i + 1, B):
            m[i, j] = m[j, i] = rng.uniform(-1.0, 1.0)
    return CorrMatrix(m)


def synthetic_matrix_set(seed: int, n: int, kind: str = "loop",
                         spec: SyntheticLoopSpec | None = None) -> list[CorrMatrix]:
    out = []
    for i in range(n):
        rng = rng_for(seed, "synth-corr", kind, i)
        out.append(synthetic_loop_matrix(rng, spec) if kind == "loop"
                   else synthetic_random_matrix(rng))
    return out


# ---------------------------------------------------------------------------
# model

class HypersphereCollapseWarning(UserWarning):
    pass


@dataclass
class SvddModel:
    weights: list            # three bias-free (n_in, n_out) arrays
    center: np.ndarray       # fixed after initialization
    tau: float = 0.0
    train_mean_log: float = 0.0
    train_std_log: float = 0.0
    train_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def embed(self, vecs: np.ndarray) -> np.ndarray:
        h = np.asarray(vecs, np.float64)
        for i, w in enumerate(self.weights):
            h = h @ w
            if i < len(self.weights) - 1:
                h = np.where(h > 0, h, 0.1 * h)
        return h

    def save(self, path) -> None:
        entries = {f"enc.w{i}": w for i, w in enumerate(self.weights)}
        entries["center"] = self.center
        entries["tau"] = np.array(self.tau)
        entries["train_mean_log"] = np.array(self.train_mean_log)
        entries["train_std_log"] = np.array(self.train_std_log)
        entries["train_scores"] = self.train_scores
        checkpoint.save(path, entries)

    @classmethod
    def load(cls, path) -> "SvddModel":
        e = checkpoint.load(path)
        weights = [e[f"enc.w{i}"] for i in range(3)]
        return cls(weights=weights, center=e["center"], tau=float(e["tau"]),
                   train_mean_log=float(e["train_mean_log"]),
                   train_std_log=float(e["train_std_log"]),
                   train_scores=e["train_scores"])


def loop_score(model: SvddModel, x: CorrMatrix) -> float:
    d = model.embed(x.vec[None, :])[0] - model.center
    return float(d @ d)


def loop_scores(model: SvddModel, matrices) -> np.ndarray:
    vecs = np.stack([m.vec for m in matrices]) if matrices else np.zeros((0, VEC_LEN))
    if vecs.shape[0] == 0:
        return np.zeros(0)
    d = model.embed(vecs) - model.center
    return (d * d).sum(axis=1)


def score_corpus(model: SvddModel, corpus: Corpus) -> np.ndarray:
    return loop_scores(model, [midi_correlation(p) for p in corpus])


def calibrate_threshold(scores: np.ndarray) -> tuple[float, float, float]:
    """tau = exp(mean + sample std) of log scores; zero scores floored.

    Returns (tau, mean_log, std_log).
    """
    s = np.maximum(np.asarray(scores, np.float64), SCORE_FLOOR)
    if s.size < 2:
        raise ValueError(f"need at least 2 scores to calibrate, got {s.size}")
    logs = np.log(s)
    mean = float(logs.mean())
    std = float(logs.std(ddof=1))
    return float(np.exp(mean + std)), mean, std


@dataclass
class SvddTrainConfig:
    pretrain_epochs: int = 200
    epochs: int = 1000
    lr_max: float = 1e-3
    lr_min: float = 5e-6
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    seed: int = 0


def train_svdd(train: list[CorrMatrix], cfg: SvddTrainConfig | None = None,
               progress: list | None = None) -> SvddModel:
    """Three phases: reconstruction pretrain, center fixing, contraction."""
    import warnings

    cfg = cfg or SvddTrainConfig()
    if len(train) < 2:
        raise ValueError(f"need at least 2 training matrices, got {len(train)}")
    x = np.stack([m.vec for m in train])
    if np.allclose(x, x[0]):
        warnings.warn("all training inputs identical; hypersphere may collapse",
                      HypersphereCollapseWarning)

    rng = rng_for(cfg.seed, "svdd-init")
    dims = (VEC_LEN,) + HIDDEN
    enc = [nd.uniform_fan_in(rng, (dims[i], dims[i + 1]), dims[i]) for i in range(3)]
    dec = [nd.uniform_fan_in(rng, (dims[i + 1], dims[i]), dims[i + 1]) for i in reversed(range(3))]

    def forward(params, inp):
        h = inp
        for i, w in enumerate(params):
            h = nd.matmul(h, w)
            if i < len(params) - 1:
                h = nd.leaky_relu(h, 0.1)
        return h

    xt = nd.Tensor(x)
    n = x.shape[0]

    # phase 1: autoencoder pretrain (decoder mirrors the encoder, bias-free)
    sched = nd.CosineSchedule(cfg.lr_max, cfg.lr_min, max(1, cfg.pretrain_epochs))
    opt = nd.AdamW(enc + dec, weight_decay=cfg.weight_decay)
    for epoch in range(cfg.pretrain_epochs):
        opt.zero_grad()
        recon = forward(dec, forward(enc, xt))
        loss = nd.scale(nd.sum_squares(nd.sub(recon, xt)), 1.0 / n)
        loss.backward()
        opt.step(lr=sched(epoch))

    # phase 2: fix the center at the mean embedding; keep it off zero
    center = forward(enc, xt).data.mean(axis=0)
    small = np.abs(center) < CENTER_GUARD
    center[small] = np.where(center[small] >= 0, CENTER_GUARD, -CENTER_GUARD)

    # phase 3: contract embeddings toward the fixed center
    ct = nd.Tensor(np.broadcast_to(center, (n, HIDDEN[-1])).copy())
    sched = nd.CosineSchedule(cfg.lr_max, cfg.lr_min, cfg.epochs)
    opt = nd.AdamW(enc, weight_decay=cfg.weight_decay)
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        d = nd.sub(forward(enc, xt), ct)
        loss = nd.scale(nd.sum_squares(d), 1.0 / n)
        loss.backward()
        opt.step(lr=sched(epoch))
        if progress is not None:
            progress.append(float(loss.data))

    model = SvddModel(weights=[w.data.copy() for w in enc], center=center)
    scores = loop_scores(model, train)
    model.train_scores = scores
    model.tau, model.train_mean_log, model.train_std_log = calibrate_threshold(scores)
    return model


# ---------------------------------------------------------------------------
# filtering

def extract_loops(corpus: Corpus, model: SvddModel) -> Corpus:
    """Keep phrases scoring at or below the calibrated threshold."""
    if len(corpus) == 0:
        return Corpus([], [])
    scores = score_corpus(model, corpus)
    keep = [i for i, s in enumerate(scores) if s <= model.tau]
    return corpus.subset(keep)


def rejection_threshold(model: SvddModel, rate: float) -> float:
    """Linear-interpolation quantile of the training-score distribution."""
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    return float(np.quantile(model.train_scores, rate))


def rejection_filter(samples: Corpus, model: SvddModel, rate: float | None) -> Corpus:
    """None passes everything; otherwise keep scores at or below the
    rate-quantile of the training distribution (smaller rate = stricter)."""
    if rate is None:
        return samples
    threshold = rejection_threshold(model, rate)
    scores = score_corpus(model, samples)
    keep = [i for i, s in enumerate(scores) if s <= threshold]
    return samples.subset(keep)


# ---------------------------------------------------------------------------
# .cor container

COR_MAGIC = b"CORR"


def save_matrices(path, matrices: list[CorrMatrix]) -> None:
    out = bytearray()
    out += COR_MAGIC
    out += struct.pack("<IH", len(matrices), B)
    for m in matrices:
        out += np.asarray(m.vec, "<f4").tobytes()
    atomic_write_bytes(path, bytes(out))


def load_matrices(path) -> list[CorrMatrix]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != COR_MAGIC:
        raise ValueError(f"bad matrix-set magic {data[:4]!r}")
    count, b = struct.unpack_from("<IH", data, 4)
    if b != B:
        raise ValueError(f"unsupported bar count {b}")
    off = 10
    out = []
    for i in range(count):
        vec = np.frombuffer(data[off : off + 4 * VEC_LEN], dtype="<f4")
        if vec.size != VEC_LEN:
            raise ValueError(f"matrix set truncated at entry {i}")
        out.append(CorrMatrix.from_vec(vec.astype(np.float64)))
        off += 4 * VEC_LEN
    return out
