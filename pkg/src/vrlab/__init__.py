"""Kinetic radiation laboratory."""
