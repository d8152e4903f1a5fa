"""Standard MIDI File ingestion and rendering.

Reads format 0/1 files into a normalized note/tempo/time-signature model;
writes generated phrases back out as format-1 files at 480 ticks per
quarter. SysEx payloads, pitch bend, and controllers other than program
select are skipped, not errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

TICKS_PER_QUARTER_OUT = 480
STEP_TICKS_OUT = TICKS_PER_QUARTER_OUT // 4  # one 16th note
DEFAULT_BASS_PROGRAM = 33
DRUM_CHANNEL = 9

# canonical GM pitch written for each drum component row (kick..ride)
DRUM_WRITE_PITCHES = (36, 38, 42, 46, 43, 47, 50, 49, 51)


class MidiParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class Note:
    track: int
    channel: int
    program: int
    is_drum: bool
    pitch: int
    velocity: int
    onset_tick: int
    duration_ticks: int


@dataclass
class MidiSong:
    ticks_per_quarter: int
    tempo_events: list = field(default_factory=list)        # (tick, usec per quarter)
    time_signatures: list = field(default_factory=list)     # (tick, numerator, denominator)
    notes: list = field(default_factory=list)
    end_tick: int = 0


def is_four_four(song: MidiSong) -> bool:
    """True iff every time-signature event is 4/4; no events means 4/4."""
    return all(num == 4 and den == 4 for _, num, den in song.time_signatures)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MidiParseError(f"truncated: needed {n} bytes", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity longer than 4 bytes", self.pos)


_CHANNEL_MSG_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def parse_midi(data: bytes) -> MidiSong:
    """Parse an SMF format 0 or 1 byte string into a MidiSong.

    Note-on with velocity 0 is a note-off; unterminated notes are closed at
    the end of their track; channel 10 (index 9) notes are flagged is_drum.
    """
    r = _Reader(data)
    if r.take(4) != b"MThd":
        raise MidiParseError("bad header magic, expected MThd", 0)
    hlen = r.u32()
    if hlen < 6:
        raise MidiParseError(f"header chunk too short ({hlen})", r.pos - 4)
    fmt = r.u16()
    ntracks = r.u16()
    division = r.u16()
    r.take(hlen - 6)
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division not supported", 12)
    if division == 0:
        raise MidiParseError("zero ticks per quarter", 12)

    song = MidiSong(ticks_per_quarter=division)
    for ti in range(ntracks):
        _parse_track(r, ti, song)
    song.tempo_events.sort(key=lambda e: e[0])
    song.time_signatures.sort(key=lambda e: e[0])
    song.notes.sort(key=lambda n: (n.onset_tick, n.track, n.channel, n.pitch))
    return song


def _parse_track(r: _Reader, track_index: int, song: MidiSong) -> None:
    magic = r.take(4)
    if magic != b"MTrk":
        raise MidiParseError(f"bad track magic {magic!r}", r.pos - 4)
    length = r.u32()
    end = r.pos + length
    if end > len(r.data):
        raise MidiParseError(f"track length {length} exceeds file", r.pos - 4)

    tick = 0
    running_status = None
    programs = [0] * 16
    # (channel, pitch) -> (onset_tick, velocity, program); second onset of the
    # same pitch closes the first
    open_notes: dict[tuple[int, int], tuple[int, int, int]] = {}

    def close(channel: int, pitch: int, off_tick: int) -> None:
        key = (channel, pitch)
        if key not in open_notes:
            return
        onset, vel, prog = open_notes.pop(key)
        song.notes.append(Note(
            track=track_index, channel=channel, program=prog,
            is_drum=channel == DRUM_CHANNEL, pitch=pitch, velocity=vel,
            onset_tick=onset, duration_ticks=max(1, off_tick - onset),
        ))

    while r.pos < end:
        tick += r.varlen()
        status = r.u8()
        if status < 0x80:
            if running_status is None:
                raise MidiParseError("data byte with no running status", r.pos - 1)
            r.pos -= 1
            status = running_status

        kind = status & 0xF0
        if kind in _CHANNEL_MSG_DATA_LEN and status < 0xF0:
            running_status = status
            channel = status & 0x0F
            payload = r.take(_CHANNEL_MSG_DATA_LEN[kind])
            if kind == 0x90 and payload[1] > 0:
                pitch = payload[0] & 0x7F
                close(channel, pitch, tick)  # overlapping same-pitch note
                open_notes[(channel, pitch)] = (tick, payload[1] & 0x7F, programs[channel])
            elif kind == 0x80 or (kind == 0x90 and payload[1] == 0):
                close(channel, payload[0] & 0x7F, tick)
            elif kind == 0xC0:
                programs[channel] = payload[0] & 0x7F
        elif status == 0xFF:
            running_status = None  # meta events cancel running status
            meta = r.u8()
            mlen = r.varlen()
            body = r.take(mlen)
            if meta == 0x51 and mlen == 3:
                song.tempo_events.append((tick, int.from_bytes(body, "big")))
            elif meta == 0x58 and mlen >= 2:
                song.time_signatures.append((tick, body[0], 1 << body[1]))
            elif meta == 0x2F:
                break
        elif status in (0xF0, 0xF7):
            running_status = None
            r.take(r.varlen())
        else:
            raise MidiParseError(f"unexpected status byte 0x{status:02x}", r.pos - 1)

    for channel, pitch in list(open_notes):
        close(channel, pitch, tick)
    song.end_tick = max(song.end_tick, tick)
    r.pos = end


# ---------------------------------------------------------------------------
# writing

@dataclass
class LoopWriteSpec:
    phrase: object                      # PianorollPhrase
    bpm: float = 120.0
    repeats: int = 1
    bass_program: int = DEFAULT_BASS_PROGRAM

    def __post_init__(self):
        if self.bpm <= 0:
            raise ValueError(f"bpm must be positive, got {self.bpm}")
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")


def _varlen_bytes(value: int) -> bytes:
    chunks = [value & 0x7F]
    value >>= 7
    while value:
        chunks.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(chunks))


def _track_chunk(events: list[tuple[int, bytes]]) -> bytes:
    """Absolute-tick events -> delta-encoded MTrk chunk with end-of-track."""
    events = sorted(events, key=lambda e: e[0])
    body = bytearray()
    prev = 0
    for tick, payload in events:
        body += _varlen_bytes(tick - prev)
        body += payload
        prev = tick
    return b"MTrk" + len(body).to_bytes(4, "big") + bytes(body)


def write_midi(spec: LoopWriteSpec) -> bytes:
    """Render a phrase as a format-1 SMF: bass on channel 0, drums on
    channel 9, one 16th step = 120 ticks, phrase repeated back to back."""
    from .pianoroll import BASS_ROWS, BASS_PITCH_MIN, bass_runs, drum_onsets

    grid = spec.phrase.grid
    steps = grid.shape[0]
    total_ticks = steps * STEP_TICKS_OUT * spec.repeats
    usec_per_quarter = round(60_000_000 / spec.bpm)

    meta_events = [
        (0, bytes([0xFF, 0x58, 0x04, 4, 2, 24, 8])),
        (0, bytes([0xFF, 0x51, 0x03]) + usec_per_quarter.to_bytes(3, "big")),
        (total_ticks, bytes([0xFF, 0x2F, 0x00])),
    ]

    bass_events: list[tuple[int, bytes]] = [(0, bytes([0xC0, spec.bass_program & 0x7F]))]
    drum_events: list[tuple[int, bytes]] = []
    for rep in range(spec.repeats):
        base = rep * steps * STEP_TICKS_OUT
        for row, start, length in bass_runs(grid):
            pitch = BASS_PITCH_MIN + row
            on = base + start * STEP_TICKS_OUT
            bass_events.append((on, bytes([0x90, pitch, 100])))
            bass_events.append((on + length * STEP_TICKS_OUT, bytes([0x80, pitch, 0])))
        for comp, step in drum_onsets(grid):
            pitch = DRUM_WRITE_PITCHES[comp]
            on = base + step * STEP_TICKS_OUT
            drum_events.append((on, bytes([0x99, pitch, 100])))
            drum_events.append((on + STEP_TICKS_OUT, bytes([0x89, pitch, 0])))
    bass_events.append((total_ticks, bytes([0xFF, 0x2F, 0x00])))
    drum_events.append((total_ticks, bytes([0xFF, 0x2F, 0x00])))

    header = b"MThd" + (6).to_bytes(4, "big") + (1).to_bytes(2, "big") \
        + (3).to_bytes(2, "big") + TICKS_PER_QUARTER_OUT.to_bytes(2, "big")
    return header + _track_chunk(meta_events) + _track_chunk(bass_events) + _track_chunk(drum_events)
