"""Presets, run configuration, reports and verification harnesses."""
