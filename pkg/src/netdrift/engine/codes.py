"""Variant codes shared by the square-loss window backends."""

DIFFUSION = 0
CONSENSUS = 1
CFG = 2
THA = 3
