"""Domain types shared across features."""

from .box import Box
from .cache import CacheEntry, DynamicTokenCache, UpdatePolicy
from .tokens import Grid, ModalImage, Modality, Role, TokenSeq

__all__ = [
    "Box",
    "CacheEntry",
    "DynamicTokenCache",
    "UpdatePolicy",
    "Grid",
    "ModalImage",
    "Modality",
    "Role",
    "TokenSeq",
]
