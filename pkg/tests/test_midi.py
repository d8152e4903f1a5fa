import numpy as np
import pytest

from loopforge import midi
from loopforge.midi import LoopWriteSpec, MidiParseError, parse_midi, write_midi
from loopforge.pianoroll import PianorollPhrase, quantize, window_phrases
from loopforge.synth import random_phrase
from loopforge.util import rng_for


def vlq(n):
    return midi._varlen_bytes(n)


def track(events_bytes):
    return b"MTrk" + len(events_bytes).to_bytes(4, "big") + events_bytes


def header(fmt, ntracks, tpq=480):
    return b"MThd" + (6).to_bytes(4, "big") + fmt.to_bytes(2, "big") \
        + ntracks.to_bytes(2, "big") + tpq.to_bytes(2, "big")


def test_bad_magic_reports_offset_zero():
    with pytest.raises(MidiParseError) as exc:
        parse_midi(b"XXXX" + b"\x00" * 20)
    assert exc.value.offset == 0


def test_format_2_rejected():
    data = header(2, 0)
    with pytest.raises(MidiParseError, match="format 2"):
        parse_midi(data)


def test_hand_built_single_note():
    # note-on pitch 36 at tick 0, note-off at tick 480, per the SMF spec
    ev = vlq(0) + bytes([0x90, 36, 100]) + vlq(480) + bytes([0x80, 36, 0]) \
        + vlq(0) + bytes([0xFF, 0x2F, 0x00])
    song = parse_midi(header(0, 1) + track(ev))
    assert song.ticks_per_quarter == 480
    assert len(song.notes) == 1
    n = song.notes[0]
    assert (n.pitch, n.onset_tick, n.duration_ticks) == (36, 0, 480)
    assert not n.is_drum and n.channel == 0


def test_empty_single_track():
    ev = vlq(0) + bytes([0xFF, 0x2F, 0x00])
    song = parse_midi(header(0, 1) + track(ev))
    assert song.notes == []


def test_running_status_and_velocity_zero_noteoff():
    # two notes via running status; second ended by note-on velocity 0
    ev = (vlq(0) + bytes([0x90, 60, 90])
          + vlq(120) + bytes([62, 90])        # running status note-on
          + vlq(120) + bytes([60, 0])         # velocity-0 note-off
          + vlq(120) + bytes([62, 0])
          + vlq(0) + bytes([0xFF, 0x2F, 0x00]))
    song = parse_midi(header(0, 1) + track(ev))
    assert [(n.pitch, n.onset_tick, n.duration_ticks) for n in song.notes] == \
        [(60, 0, 240), (62, 120, 240)]


def test_channel_10_flags_drums():
    ev = vlq(0) + bytes([0x99, 36, 100]) + vlq(60) + bytes([0x89, 36, 0]) \
        + vlq(0) + bytes([0xFF, 0x2F, 0x00])
    song = parse_midi(header(0, 1) + track(ev))
    assert song.notes[0].is_drum


def test_unterminated_note_closed_at_track_end():
    ev = vlq(0) + bytes([0x90, 40, 80]) + vlq(960) + bytes([0xFF, 0x2F, 0x00])
    song = parse_midi(header(0, 1) + track(ev))
    assert song.notes[0].duration_ticks == 960


def test_program_change_tracked_per_channel():
    ev = (vlq(0) + bytes([0xC0, 35])
          + vlq(0) + bytes([0x90, 30, 80]) + vlq(240) + bytes([0x80, 30, 0])
          + vlq(0) + bytes([0xFF, 0x2F, 0x00]))
    song = parse_midi(header(0, 1) + track(ev))
    assert song.notes[0].program == 35


def test_overlapping_same_pitch_second_onset_closes_first():
    ev = (vlq(0) + bytes([0x90, 50, 80])
          + vlq(100) + bytes([0x90, 50, 80])
          + vlq(100) + bytes([0x80, 50, 0])
          + vlq(0) + bytes([0xFF, 0x2F, 0x00]))
    song = parse_midi(header(0, 1) + track(ev))
    assert [(n.onset_tick, n.duration_ticks) for n in song.notes] == [(0, 100), (100, 100)]


def test_tempo_and_time_signature_parsed():
    ev = (vlq(0) + bytes([0xFF, 0x51, 0x03]) + (500000).to_bytes(3, "big")
          + vlq(0) + bytes([0xFF, 0x58, 0x04, 3, 2, 24, 8])
          + vlq(0) + bytes([0xFF, 0x2F, 0x00]))
    song = parse_midi(header(0, 1) + track(ev))
    assert song.tempo_events == [(0, 500000)]
    assert song.time_signatures == [(0, 3, 4)]
    assert not midi.is_four_four(song)


def test_is_four_four_defaults_and_mixed():
    assert midi.is_four_four(parse_midi(header(0, 1) + track(vlq(0) + bytes([0xFF, 0x2F, 0x00]))))
    ev = (vlq(0) + bytes([0xFF, 0x58, 0x04, 4, 2, 24, 8])
          + vlq(10) + bytes([0xFF, 0x58, 0x04, 6, 3, 24, 8])
          + vlq(0) + bytes([0xFF, 0x2F, 0x00]))
    assert not midi.is_four_four(parse_midi(header(0, 1) + track(ev)))


def test_truncated_chunk_reports_offset():
    data = header(1, 2) + track(vlq(0) + bytes([0xFF, 0x2F, 0x00]))
    with pytest.raises(MidiParseError):
        parse_midi(data)  # second track missing


# ---------------------------------------------------------------------------
# writer

def empty_phrase():
    return PianorollPhrase(np.zeros((128, 57), dtype=np.uint8))


def test_write_empty_phrase_is_valid_midi():
    data = write_midi(LoopWriteSpec(phrase=empty_phrase()))
    song = parse_midi(data)
    assert song.notes == []
    assert song.tempo_events == [(0, 500000)]
    assert midi.is_four_four(song)
    assert song.end_tick == 128 * 120


def test_write_single_kick():
    grid = np.zeros((128, 57), dtype=np.uint8)
    grid[0, 48] = 1  # kick at step 0
    data = write_midi(LoopWriteSpec(phrase=PianorollPhrase(grid)))
    song = parse_midi(data)
    drums = [n for n in song.notes if n.is_drum]
    assert len(drums) == 1
    assert drums[0].pitch == 36 and drums[0].onset_tick == 0 and drums[0].channel == 9


def test_write_repeats_doubles_notes():
    grid = np.zeros((128, 57), dtype=np.uint8)
    grid[0:4, 10] = 1
    grid[16, 49] = 1
    one = parse_midi(write_midi(LoopWriteSpec(phrase=PianorollPhrase(grid), repeats=1)))
    two = parse_midi(write_midi(LoopWriteSpec(phrase=PianorollPhrase(grid), repeats=2)))
    assert len(two.notes) == 2 * len(one.notes)
    assert two.end_tick == 2 * one.end_tick


def test_note_count_invariant_under_reserialization():
    phrase = random_phrase(rng_for(7, "roundtrip-count"))
    song = parse_midi(write_midi(LoopWriteSpec(phrase=phrase)))
    again = parse_midi(write_midi(LoopWriteSpec(phrase=phrase)))
    assert len(song.notes) == len(again.notes)


def test_roundtrip_random_phrases():
    # write -> parse -> quantize reproduces the phrase bit-exactly
    for i in range(200):
        phrase = random_phrase(rng_for(100, "roundtrip", i))
        song = parse_midi(write_midi(LoopWriteSpec(phrase=phrase)))
        bars = quantize(song)
        corpus = window_phrases(bars)
        assert len(corpus) == 1
        np.testing.assert_array_equal(corpus.phrases[0].grid, phrase.grid)


def test_parser_never_crashes_on_fuzz():
    rng = rng_for(0, "fuzz")
    for _ in range(2000):
        blob = rng.integers(0, 256, size=int(rng.integers(0, 400))).astype(np.uint8).tobytes()
        if rng.uniform() < 0.5:
            blob = b"MThd" + blob
        try:
            parse_midi(blob)
        except MidiParseError:
            pass
