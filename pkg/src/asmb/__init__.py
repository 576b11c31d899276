"""Anchored state memory for long-horizon GUI agents, with an offline
teacher-forced evaluation harness and a synthetic task generator."""

__version__ = "0.1.0"
