"""Shared-parameter ViT encoder with candidate elimination."""
