"""Axis-aligned bounding box in pixels, top-left convention."""

import math

from pydantic import BaseModel, ConfigDict, field_validator


class Box(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    w: float
    h: float

    @field_validator("x", "y", "w", "h")
    @classmethod
    def finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("box coordinates must be finite")
        return value

    @field_validator("w", "h")
    @classmethod
    def non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("box width and height must be non-negative")
        return value

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "Box":
        return cls(x=cx - w / 2.0, y=cy - h / 2.0, w=w, h=h)

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def is_degenerate(self) -> bool:
        return self.w <= 0 or self.h <= 0

    def scaled(self, factor: float) -> "Box":
        """Multiply every coordinate (pixel -> grid units when factor = 1/stride)."""
        return Box(x=self.x * factor, y=self.y * factor, w=self.w * factor, h=self.h * factor)

    def clamp(self, width: float, height: float, min_size: float = 1.0) -> "Box":
        """Clip to ``[0, width] x [0, height]`` keeping at least ``min_size`` pixels per side."""
        x0 = min(max(self.x, 0.0), width - min_size)
        y0 = min(max(self.y, 0.0), height - min_size)
        x1 = min(max(self.x + self.w, x0 + min_size), width)
        y1 = min(max(self.y + self.h, y0 + min_size), height)
        return Box(x=x0, y=y0, w=x1 - x0, h=y1 - y0)

    def to_line(self) -> str:
        return f"{self.x:.4f},{self.y:.4f},{self.w:.4f},{self.h:.4f}"
