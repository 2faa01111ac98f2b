"""Hybrid ANN-SNN inference engine for event cameras."""
