"""Laser-cooled ions in a Penning trap with quadrupole axialisation."""

__version__ = "0.1.0"
