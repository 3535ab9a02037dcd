"""Tests package for RicciLab."""
