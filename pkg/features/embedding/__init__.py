"""Patch embedding and joint token layout."""
