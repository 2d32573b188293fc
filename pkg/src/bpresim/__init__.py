"""Subcritical branching processes in i.i.d. environments with regularly varying walk tails."""

__version__ = "0.1.0"
