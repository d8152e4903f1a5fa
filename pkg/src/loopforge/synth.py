"""Synthetic phrases, MIDI files, and toy corpora for desk-scale runs.

Real corpora are not redistributable, so tests and demos run on generated
stand-ins: loop-structured phrases with repeating bar patterns, plus toy
MIDI files that exercise the 4/4 filter and the minimum-length rule.
"""

from __future__ import annotations

import os

import numpy as np

from . import B, P, STEPS, T
from .midi import (
    DRUM_WRITE_PITCHES,
    STEP_TICKS_OUT,
    TICKS_PER_QUARTER_OUT,
    _track_chunk,
)
from .pianoroll import (
    BASS_PITCH_MIN,
    BASS_ROWS,
    DRUM_ROW0,
    NUM_DRUMS,
    Corpus,
    PianorollPhrase,
    bass_runs,
    drum_onsets,
)
from .util import rng_for


def random_phrase(rng: np.random.Generator, bass_density: float = 0.5,
                  drum_density: float = 0.2) -> PianorollPhrase:
    """Unstructured phrase honoring the one-bass-note-per-step rule."""
    grid = np.zeros((STEPS, P), dtype=np.uint8)
    t = 0
    while t < STEPS:
        if rng.uniform() < bass_density:
            row = rng.integers(0, BASS_ROWS)
            length = int(rng.integers(1, 9))
            grid[t : min(t + length, STEPS), row] = 1
            t += length
        else:
            t += int(rng.integers(1, 5))
    hits = rng.uniform(size=(STEPS, NUM_DRUMS)) < drum_density
    grid[:, DRUM_ROW0:] = hits.astype(np.uint8)
    return PianorollPhrase(grid)


def loop_phrase(rng: np.random.Generator, period_bars: int = 2,
                flip_prob: float = 0.0) -> PianorollPhrase:
    """Phrase made of a repeated bar pattern, optionally perturbed.

    ``flip_prob`` flips cells after tiling, so 0 gives exact repetition.
    """
    if B % period_bars:
        raise ValueError(f"period {period_bars} must divide {B}")
    pat = np.zeros((period_bars * T, P), dtype=np.uint8)
    n_pitches = int(rng.integers(1, 4))
    pitches = rng.choice(BASS_ROWS, size=n_pitches, replace=False)
    t = 0
    while t < pat.shape[0]:
        length = int(rng.integers(2, 7))
        if rng.uniform() < 0.8:
            pat[t : min(t + length, pat.shape[0]), rng.choice(pitches)] = 1
        t += length
    for comp, every, offset in ((0, 4, 0), (1, 8, 4), (2, 2, 0)):
        steps = np.arange(offset, pat.shape[0], every)
        keep = rng.uniform(size=steps.size) < 0.9
        pat[steps[keep], DRUM_ROW0 + comp] = 1
    extra = rng.uniform(size=pat.shape[0]) < 0.1
    pat[extra, DRUM_ROW0 + int(rng.integers(3, NUM_DRUMS))] = 1

    grid = np.tile(pat, (B // period_bars, 1))
    if flip_prob > 0:
        flips = rng.uniform(size=grid.shape) < flip_prob
        grid = np.where(flips, 1 - grid, grid).astype(np.uint8)
        bass = grid[:, :BASS_ROWS]
        hot = bass.argmax(axis=1)
        has = bass.any(axis=1)
        bass[:] = 0
        bass[np.nonzero(has)[0], hot[has]] = 1
    return PianorollPhrase(grid)


def phrase_corpus(seed: int, n: int, kind: str = "loop", **kwargs) -> Corpus:
    make = {"loop": loop_phrase, "random": random_phrase}[kind]
    phrases, prov = [], []
    for i in range(n):
        phrases.append(make(rng_for(seed, "synth", kind, i), **kwargs))
        prov.append((f"synth:{kind}", i))
    return Corpus(phrases, prov)


# ---------------------------------------------------------------------------
# toy MIDI corpus

def _render_bars(bars_grid: np.ndarray, bpm: float = 120.0) -> bytes:
    """Render a (bars, T, P) grid as a format-1 file, any bar count."""
    steps = bars_grid.shape[0] * T
    grid = bars_grid.reshape(steps, P)
    total_ticks = steps * STEP_TICKS_OUT
    usec = round(60_000_000 / bpm)
    meta = [
        (0, bytes([0xFF, 0x58, 0x04, 4, 2, 24, 8])),
        (0, bytes([0xFF, 0x51, 0x03]) + usec.to_bytes(3, "big")),
        (total_ticks, bytes([0xFF, 0x2F, 0x00])),
    ]
    bass = [(0, bytes([0xC0, 33]))]
    drums = []
    for row, start, length in bass_runs(grid):
        on = start * STEP_TICKS_OUT
        bass.append((on, bytes([0x90, BASS_PITCH_MIN + row, 100])))
        bass.append((on + length * STEP_TICKS_OUT, bytes([0x80, BASS_PITCH_MIN + row, 0])))
    for comp, step in drum_onsets(grid):
        on = step * STEP_TICKS_OUT
        drums.append((on, bytes([0x99, DRUM_WRITE_PITCHES[comp], 100])))
        drums.append((on + STEP_TICKS_OUT, bytes([0x89, DRUM_WRITE_PITCHES[comp], 0])))
    bass.append((total_ticks, bytes([0xFF, 0x2F, 0x00])))
    drums.append((total_ticks, bytes([0xFF, 0x2F, 0x00])))
    header = b"MThd" + (6).to_bytes(4, "big") + (1).to_bytes(2, "big") \
        + (3).to_bytes(2, "big") + TICKS_PER_QUARTER_OUT.to_bytes(2, "big")
    return header + _track_chunk(meta) + _track_chunk(bass) + _track_chunk(drums)


def _with_time_signature(data: bytes, num: int, den_pow: int) -> bytes:
    # the renderer always writes the 4/4 signature first in the meta track
    needle = bytes([0xFF, 0x58, 0x04, 4, 2, 24, 8])
    repl = bytes([0xFF, 0x58, 0x04, num, den_pow, 24, 8])
    return data.replace(needle, repl, 1)


def _toy_song_bytes(rng: np.random.Generator, bars: int, four_four: bool) -> bytes:
    period = int(rng.choice([2, 4]))
    phrase = loop_phrase(rng, period_bars=period)
    reps = -(-bars // B)
    grid = np.tile(phrase.grid.reshape(B, T, P), (reps, 1, 1))[:bars]
    body = _render_bars(grid, bpm=float(rng.integers(80, 140)))
    if not four_four:
        body = _with_time_signature(body, 3, 2)  # 3/4
    return body


def make_toy_midi_corpus(directory, n_files: int, seed: int = 0,
                         frac_non_44: float = 0.05, frac_short: float = 0.05) -> list[str]:
    """Write a corpus of loopy MIDI files; a few are non-4/4 or under 8 bars."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i in range(n_files):
        rng = rng_for(seed, "toy-midi", i)
        u = rng.uniform()
        if u < frac_non_44:
            data = _toy_song_bytes(rng, bars=B, four_four=False)
        elif u < frac_non_44 + frac_short:
            data = _toy_song_bytes(rng, bars=int(rng.integers(2, B)), four_four=True)
        else:
            data = _toy_song_bytes(rng, bars=int(rng.integers(B, 17)), four_four=True)
        path = os.path.join(directory, f"toy_{i:04d}.mid")
        with open(path, "wb") as f:
            f.write(data)
        paths.append(path)
    return paths
