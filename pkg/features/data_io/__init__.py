"""Sequence directories, netpbm frames and synthetic RGBT sequences."""
