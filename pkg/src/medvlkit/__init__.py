"""Toolkit for multi-task medical vision-language data and evaluation.

Subsystems: grid geometry (`geometry`), the answer text grammar (`codec`),
instruction-triplet compilation (`compiler`), scalar metrics (`metrics`),
and the batch evaluation / reader-study harness (`harness`).
"""

__version__ = "0.1.0"
