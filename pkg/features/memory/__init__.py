"""Dynamic-token lifecycle: restore, reshape, ROI-align crop, gated cache update."""
