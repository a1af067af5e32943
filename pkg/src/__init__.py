"""COFFEE and S6 state-space models."""
