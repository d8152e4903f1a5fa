"""loopforge: loop extraction, discrete compression, and generation for
8-bar bass+drum MIDI phrases, with KNN fidelity/diversity evaluation."""

__version__ = "0.1.0"

T = 16  # 16th-note steps per bar
B = 8   # bars per phrase
P = 57  # pitch rows: 48 bass (MIDI 24..71) + 9 drum components
STEPS = T * B
