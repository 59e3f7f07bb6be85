"""Temporal-sampling training: S pairs fused with dynamic tokens simulated from T pairs."""
