"""The multimodal dynamic-token cache and its update policy."""

import hashlib
from dataclasses import dataclass, field
from typing import Dict, Tuple

from pydantic import BaseModel, ConfigDict, Field

from core.models.tokens import TokenSeq

CacheEntry = Tuple[TokenSeq, TokenSeq]  # (RGB, TIR)


class UpdatePolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    interval: int = Field(default=25, ge=1)
    score_threshold: float = Field(default=0.65, ge=0.0, le=1.0)


@dataclass(frozen=True)
class DynamicTokenCache:
    entries: Dict[int, CacheEntry] = field(default_factory=dict)
    last_update_frame: int = 0
    source_score: float = 0.0

    def digest(self) -> str:
        """SHA-256 over layer numbers and token bytes; equal digests mean equal caches."""
        sha = hashlib.sha256()
        for layer in sorted(self.entries):
            sha.update(str(layer).encode())
            for seq in self.entries[layer]:
                sha.update(seq.tokens.data.tobytes())
        return sha.hexdigest()
