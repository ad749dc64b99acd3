"""Symbolic-music understanding toolkit.

MIDI scores are parsed onto a 16-sub-beat bar grid, serialized as REMI or
compound-word (CP) token sequences, and modeled with a bidirectional
transformer encoder pre-trained by masked-token prediction. Note-level and
sequence-level classification heads, rule-based baselines, and a CLI sit on
top. Everything is deterministic under explicit seeds.
"""

__version__ = "0.1.0"
