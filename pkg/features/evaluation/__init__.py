"""One-pass evaluation: precision, normalized precision and success."""
