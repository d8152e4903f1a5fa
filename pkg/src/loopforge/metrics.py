"""Evaluation metrics.

Musical-style metrics (loop score, unique pitch, note density) live on the
grid; fidelity/diversity metrics (precision, recall, density, coverage) are
computed with k-nearest-neighbor balls on features from randomly initialized
conv networks, averaged over embedding seeds. Ball membership uses closed
balls so the fake==real identities come out exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import B, P, STEPS, T
from . import ndiff as nd
from .pianoroll import BASS_ROWS, DRUM_ROW0, Corpus
from .util import rng_for

FEATURE_DIM = 128
EMBED_CHANNELS = (64, 64, FEATURE_DIM)
DEFAULT_K = 5
DEFAULT_SEEDS = 10
DEFAULT_SUBSAMPLE = 10_000
_CHUNK_ROWS = 128  # pairwise-distance block size, bounds peak memory


@dataclass
class FeatureSet:
    vectors: np.ndarray     # (N, FEATURE_DIM)
    source: str = ""
    seed: int = 0

    def __post_init__(self):
        v = np.asarray(self.vectors, np.float64)
        if v.ndim != 2 or v.shape[1] != FEATURE_DIM:
            raise ValueError(f"feature set must be (N, {FEATURE_DIM}), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("feature set holds non-finite values")
        self.vectors = v


def random_embed(corpus: Corpus, seed: int) -> FeatureSet:
    """Fixed random conv features: 3 stride-2 conv layers with LeakyReLU(0.1),
    then a global average pool over time. Never trained."""
    rng = rng_for(seed, "random-embed")
    chans = (P,) + EMBED_CHANNELS
    weights = []
    for i in range(3):
        fan_in = chans[i] * 4
        bound = np.sqrt(1.0 / fan_in)
        weights.append((rng.uniform(-bound, bound, size=(chans[i + 1], chans[i], 4)),
                        rng.uniform(-bound, bound, size=(chans[i + 1],))))
    grids = corpus.stack()
    if grids.shape[0] == 0:
        return FeatureSet(np.zeros((0, FEATURE_DIM)), seed=seed)
    out = np.empty((grids.shape[0], FEATURE_DIM))
    for lo in range(0, grids.shape[0], 256):
        h = np.transpose(grids[lo : lo + 256], (0, 2, 1))
        for w, b in weights:
            h = nd.conv1d_forward(h, w, b, stride=2, padding=1)
            h = np.where(h > 0, h, 0.1 * h)
        out[lo : lo + h.shape[0]] = h.mean(axis=2)
    return FeatureSet(out, seed=seed)


# ---------------------------------------------------------------------------
# pairwise distances and KNN radii

def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances via explicit differences, block by block.

    The arithmetic (elementwise square, reduce over the feature axis, sqrt)
    matches a per-pair evaluation bit for bit, which the oracle tests rely
    on; the x^2+y^2-2xy shortcut would not.
    """
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    out = np.empty((a.shape[0], b.shape[0]))
    for lo in range(0, a.shape[0], _CHUNK_ROWS):
        block = a[lo : lo + _CHUNK_ROWS]
        d2 = ((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        out[lo : lo + block.shape[0]] = np.sqrt(d2)
    return out


def knn_radius(feats: FeatureSet, k: int = DEFAULT_K) -> np.ndarray:
    """Distance from each point to its k-th nearest other point."""
    n = feats.vectors.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    d = pairwise_distances(feats.vectors, feats.vectors)
    np.fill_diagonal(d, np.inf)  # self excluded
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def precision_recall(real: FeatureSet, fake: FeatureSet, k: int = DEFAULT_K) -> tuple[float, float]:
    """P: fraction of fake points inside at least one real ball; R: swapped."""
    d = pairwise_distances(real.vectors, fake.vectors)
    real_r = knn_radius(real, k)
    fake_r = knn_radius(fake, k)
    precision = float((d <= real_r[:, None]).any(axis=0).mean())
    recall = float((d <= fake_r[None, :]).any(axis=1).mean())
    return precision, recall


def density_coverage(real: FeatureSet, fake: FeatureSet, k: int = DEFAULT_K) -> tuple[float, float]:
    """D: mean real-ball membership count per fake point over k (can exceed
    1); C: fraction of real balls holding at least one fake point."""
    d = pairwise_distances(real.vectors, fake.vectors)
    real_r = knn_radius(real, k)
    inside = d <= real_r[:, None]
    m = fake.vectors.shape[0]
    density = float(inside.sum() / (k * m))
    coverage = float(inside.any(axis=1).mean())
    return density, coverage


# ---------------------------------------------------------------------------
# musical-style metrics

def unique_pitch(corpus: Corpus) -> float:
    """Mean count of distinct bass rows sounding per (phrase, bar)."""
    if len(corpus) == 0:
        return 0.0
    total = 0
    for phrase in corpus:
        bars = phrase.grid[:, :BASS_ROWS].reshape(B, T, BASS_ROWS)
        total += int(bars.any(axis=1).sum())
    return total / (len(corpus) * B)


def note_density(corpus: Corpus) -> float:
    """Mean onsets per (phrase, bar): bass 0->1 transitions (phrase start
    counts) plus every drum hit."""
    if len(corpus) == 0:
        return 0.0
    total = 0
    for phrase in corpus:
        bass = phrase.grid[:, :BASS_ROWS]
        prev = np.vstack([np.zeros((1, BASS_ROWS), dtype=np.uint8), bass[:-1]])
        onsets = (bass == 1) & (prev == 0)
        total += int(onsets.sum()) + int(phrase.grid[:, DRUM_ROW0:].sum())
    return total / (len(corpus) * B)


def f1(a: float, b: float) -> float:
    if a + b <= 0:
        return 0.0
    return 2.0 * a * b / (a + b)


# ---------------------------------------------------------------------------
# report

@dataclass
class MetricReport:
    ls: float
    up: float
    nd: float
    per_seed: dict = field(default_factory=dict)   # name -> list of per-seed values
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    f1_pr: float = 0.0
    f1_dc: float = 0.0
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "ls": self.ls,
            "up": self.up,
            "nd": self.nd,
            "precision": {"mean": self.mean["precision"], "std": self.std["precision"]},
            "recall": {"mean": self.mean["recall"], "std": self.std["recall"]},
            "density": {"mean": self.mean["density"], "std": self.std["density"]},
            "coverage": {"mean": self.mean["coverage"], "std": self.std["coverage"]},
            "f1_pr": self.f1_pr,
            "f1_dc": self.f1_dc,
            "per_seed": self.per_seed,
            "config": self.config,
        }
        return json.dumps(doc, indent=2)

    def to_table(self) -> str:
        head = f"{'LS':>10} {'UP':>8} {'ND':>8} {'P':>15} {'R':>15} {'D':>15} {'C':>15}"
        def pm(name):
            return f"{self.mean[name]:.3f}±{self.std[name]:.3f}"
        row = (f"{self.ls:>10.4g} {self.up:>8.3f} {self.nd:>8.3f} "
               f"{pm('precision'):>15} {pm('recall'):>15} {pm('density'):>15} {pm('coverage'):>15}")
        f1s = f"F1(P,R) = {self.f1_pr:.3f}   F1(D,C) = {self.f1_dc:.3f}"
        return "\n".join([head, row, f1s])


def evaluate_suite(real: Corpus, fake: Corpus, detector_model=None,
                   seeds: int = DEFAULT_SEEDS, n: int = DEFAULT_SUBSAMPLE,
                   k: int = DEFAULT_K, subsample_seed: int = 0) -> MetricReport:
    """Subsample both corpora per seed, embed with that seed's random network,
    and report mean and std of P/R/D/C over seeds plus LS/UP/ND on the fake
    corpus. F1 pairs are computed from the means."""
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("both corpora must be nonempty")
    names = ("precision", "recall", "density", "coverage")
    per_seed = {name: [] for name in names}
    for si in range(seeds):
        rng = rng_for(subsample_seed, "evaluate-subsample", si)
        r_idx = rng.choice(len(real), size=min(n, len(real)), replace=False)
        f_idx = rng.choice(len(fake), size=min(n, len(fake)), replace=False)
        r_feats = random_embed(real.subset(r_idx), seed=si)
        f_feats = random_embed(fake.subset(f_idx), seed=si)
        p, r = precision_recall(r_feats, f_feats, k)
        d, c = density_coverage(r_feats, f_feats, k)
        for name, val in zip(names, (p, r, d, c)):
            per_seed[name].append(val)
    mean = {name: float(np.mean(per_seed[name])) for name in names}
    std = {name: float(np.std(per_seed[name], ddof=1)) if seeds > 1 else 0.0
           for name in names}

    if detector_model is not None:
        from .detector import score_corpus
        ls = float(score_corpus(detector_model, fake).mean())
    else:
        ls = float("nan")
    return MetricReport(
        ls=ls, up=unique_pitch(fake), nd=note_density(fake),
        per_seed=per_seed, mean=mean, std=std,
        f1_pr=f1(mean["precision"], mean["recall"]),
        f1_dc=f1(mean["density"], mean["coverage"]),
        config={"seeds": seeds, "n": n, "k": k, "subsample_seed": subsample_seed,
                "real_size": len(real), "fake_size": len(fake)},
    )
