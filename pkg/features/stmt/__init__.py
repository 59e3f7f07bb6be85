"""Spatio-temporal multimodal token module: modality enhancement and temporal fusion."""
