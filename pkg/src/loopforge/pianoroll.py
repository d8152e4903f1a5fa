"""Binary bass+drum pianoroll grids and phrase windowing.

A phrase is a (T*B) x P = 128 x 57 binary grid: rows 0-47 are bass MIDI
pitches 24 (C1) through 71 (B4) with sustain encoded as runs of 1s, rows
48-56 are onset-only drum components [kick, snare, closed hi-hat, open
hi-hat, low tom, mid tom, high tom, crash, ride].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import B, P, STEPS, T
from .midi import MidiSong
from .util import atomic_write_bytes

BASS_PITCH_MIN = 24   # C1
BASS_PITCH_MAX = 71   # B4
BASS_ROWS = 48
DRUM_ROW0 = BASS_ROWS
NUM_DRUMS = 9
BASS_PROGRAMS = range(32, 40)

# GM percussion pitch -> component row offset; unlisted pitches are discarded
DRUM_PITCH_MAP = {
    35: 0, 36: 0,                    # kick
    37: 1, 38: 1, 40: 1,             # snare
    42: 2, 44: 2,                    # closed hi-hat
    46: 3,                           # open hi-hat
    41: 4, 43: 4, 45: 4,             # low tom
    47: 5, 48: 5,                    # mid tom
    50: 6,                           # high tom
    49: 7, 52: 7, 55: 7, 57: 7,      # crash
    51: 8, 53: 8, 59: 8,             # ride
}


class NotFourFourError(ValueError):
    pass


@dataclass
class PianorollPhrase:
    grid: np.ndarray  # uint8 (STEPS, P)

    def __post_init__(self):
        self.grid = np.ascontiguousarray(self.grid, dtype=np.uint8)
        if self.grid.shape != (STEPS, P):
            raise ValueError(f"phrase grid must be {(STEPS, P)}, got {self.grid.shape}")

    def validate(self) -> None:
        if not np.isin(self.grid, (0, 1)).all():
            raise ValueError("phrase grid must be binary")
        if (self.grid[:, :BASS_ROWS].sum(axis=1) > 1).any():
            raise ValueError("more than one bass row active at a time step")


@dataclass
class Corpus:
    phrases: list = field(default_factory=list)          # list[PianorollPhrase]
    provenance: list = field(default_factory=list)       # list[(source_id, start_bar)]

    def __post_init__(self):
        if len(self.provenance) != len(self.phrases):
            raise ValueError("provenance length must equal phrase count")

    def __len__(self):
        return len(self.phrases)

    def __iter__(self):
        return iter(self.phrases)

    def subset(self, indices) -> "Corpus":
        return Corpus([self.phrases[i] for i in indices],
                      [self.provenance[i] for i in indices])

    def stack(self) -> np.ndarray:
        """All phrases as one float array (N, STEPS, P)."""
        if not self.phrases:
            return np.zeros((0, STEPS, P))
        return np.stack([p.grid for p in self.phrases]).astype(np.float64)


# ---------------------------------------------------------------------------
# quantization

def quantize(song: MidiSong, min_bars: int | None = None) -> np.ndarray:
    """MidiSong -> per-bar grid stream of shape (bars, T, P).

    A bar is 16 steps of a 16th note each; onsets round to the nearest step
    (half up). Bass cells stay hot while the note sounds, drum cells only at
    the onset step. Non-4/4 songs are rejected.
    """
    from .midi import is_four_four

    if not is_four_four(song):
        raise NotFourFourError("song has a non-4/4 time signature")

    step_ticks = song.ticks_per_quarter / 4.0
    end = max([song.end_tick] + [n.onset_tick + n.duration_ticks for n in song.notes])
    num_bars = int(np.ceil(end / (step_ticks * T))) if end > 0 else 0
    if min_bars is not None:
        num_bars = max(num_bars, min_bars)
    total_steps = num_bars * T
    if num_bars == 0:
        return np.zeros((0, T, P), dtype=np.uint8)

    grid = np.zeros((total_steps, P), dtype=np.uint8)
    _map_bass_into(song.notes, grid, step_ticks)
    _map_drums_into(song.notes, grid, step_ticks)
    return grid.reshape(num_bars, T, P)


def _onset_step(tick: int, step_ticks: float) -> int:
    return int(np.floor(tick / step_ticks + 0.5))  # round half up


def _clamp_bass_pitch(pitch: int) -> int:
    while pitch < BASS_PITCH_MIN:
        pitch += 12
    while pitch > BASS_PITCH_MAX:
        pitch -= 12
    return pitch


def _map_bass_into(notes, grid: np.ndarray, step_ticks: float) -> None:
    total = grid.shape[0]
    for n in notes:
        if n.is_drum or n.program not in BASS_PROGRAMS:
            continue
        start = _onset_step(n.onset_tick, step_ticks)
        stop = int(np.floor((n.onset_tick + n.duration_ticks) / step_ticks))
        stop = max(stop, start + 1)  # short notes still occupy one step
        start = min(start, total)
        stop = min(stop, total)
        if start < stop:
            row = _clamp_bass_pitch(n.pitch) - BASS_PITCH_MIN
            grid[start:stop, row] = 1
    # lowest active pitch wins at every step
    bass = grid[:, :BASS_ROWS]
    hot = bass.argmax(axis=1)
    has = bass.any(axis=1)
    bass[:] = 0
    bass[np.nonzero(has)[0], hot[has]] = 1


def _map_drums_into(notes, grid: np.ndarray, step_ticks: float) -> None:
    total = grid.shape[0]
    for n in notes:
        if not n.is_drum:
            continue
        comp = DRUM_PITCH_MAP.get(n.pitch)
        if comp is None:
            continue
        step = _onset_step(n.onset_tick, step_ticks)
        if step < total:
            grid[step, DRUM_ROW0 + comp] = 1


def map_bass(notes, num_steps: int, step_ticks: float) -> np.ndarray:
    """Bass rows only, as a (num_steps, 48) grid."""
    grid = np.zeros((num_steps, P), dtype=np.uint8)
    _map_bass_into(notes, grid, step_ticks)
    return grid[:, :BASS_ROWS]


def map_drums(notes, num_steps: int, step_ticks: float) -> np.ndarray:
    """Drum rows only, as a (num_steps, 9) grid."""
    grid = np.zeros((num_steps, P), dtype=np.uint8)
    _map_drums_into(notes, grid, step_ticks)
    return grid[:, DRUM_ROW0:]


def window_phrases(bars: np.ndarray, source_id: str = "", bars_per_phrase: int = B,
                   stride_bars: int = 1) -> Corpus:
    """Slide a window over a (bars, T, P) stream; fewer than 8 bars -> empty."""
    n = bars.shape[0]
    phrases, prov = [], []
    for start in range(0, n - bars_per_phrase + 1, stride_bars):
        block = bars[start : start + bars_per_phrase].reshape(bars_per_phrase * T, P)
        phrases.append(PianorollPhrase(block.copy()))
        prov.append((source_id, start))
    return Corpus(phrases, prov)


# ---------------------------------------------------------------------------
# grid introspection used by the writer and the metrics

def bass_runs(grid: np.ndarray):
    """Yield (row, start_step, length) for each maximal bass sustain run."""
    bass = grid[:, :BASS_ROWS]
    steps = grid.shape[0]
    for row in np.nonzero(bass.any(axis=0))[0]:
        col = bass[:, row]
        start = None
        for t in range(steps):
            if col[t] and start is None:
                start = t
            elif not col[t] and start is not None:
                yield int(row), start, t - start
                start = None
        if start is not None:
            yield int(row), start, steps - start


def drum_onsets(grid: np.ndarray):
    """Yield (component, step) for every drum hit, time-major."""
    for t, comp in zip(*np.nonzero(grid[:, DRUM_ROW0:])):
        yield int(comp), int(t)


# ---------------------------------------------------------------------------
# .lpr container: bit-packed corpus file

LPR_MAGIC = b"LPR1"


def save_corpus(path, corpus: Corpus) -> None:
    out = bytearray()
    out += LPR_MAGIC
    out += struct.pack("<IHHH", len(corpus), T, B, P)
    for phrase in corpus:
        bits = phrase.grid.reshape(-1)  # time-major
        out += np.packbits(bits, bitorder="little").tobytes()
    atomic_write_bytes(path, bytes(out))


def load_corpus(path) -> Corpus:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != LPR_MAGIC:
        raise ValueError(f"bad corpus magic {data[:4]!r}")
    count, t, b, p = struct.unpack_from("<IHHH", data, 4)
    if (t, b, p) != (T, B, P):
        raise ValueError(f"unsupported corpus geometry T={t} B={b} P={p}")
    nbytes = (t * b * p + 7) // 8
    off = 4 + 10
    phrases, prov = [], []
    src = str(path)
    for i in range(count):
        chunk = np.frombuffer(data[off : off + nbytes], dtype=np.uint8)
        if chunk.size != nbytes:
            raise ValueError(f"corpus truncated at phrase {i}")
        bits = np.unpackbits(chunk, bitorder="little")[: t * b * p]
        phrases.append(PianorollPhrase(bits.reshape(t * b, p)))
        prov.append((src, i))
        off += nbytes
    return Corpus(phrases, prov)
