"""Matcher parameter block with validation and JSON round-trip.

Validation messages are the single source of truth: the CLI and the tuner
service both surface them verbatim.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace

__all__ = ["SgmParams", "SgmParamError"]


class SgmParamError(ValueError):
    """A parameter violates one of the matcher rules."""


_FIELDS = (
    "min_disparity",
    "num_disparities",
    "block_size",
    "p1",
    "p2",
    "disp12_max_diff",
    "uniqueness_ratio",
    "speckle_window_size",
    "speckle_range",
    "num_paths",
)


@dataclass(frozen=True)
class SgmParams:
    min_disparity: int = 0
    num_disparities: int = 64
    block_size: int = 5
    p1: int | None = None
    p2: int | None = None
    disp12_max_diff: int = 1
    uniqueness_ratio: int = 10
    speckle_window_size: int = 100
    speckle_range: int = 2
    num_paths: int = 8

    def validated(self) -> "SgmParams":
        """Return a copy with p1/p2 defaults filled in; raise on any rule violation."""
        if self.num_disparities <= 0:
            raise SgmParamError("num_disparities must be positive")
        if self.num_disparities % 16 != 0:
            raise SgmParamError("num_disparities must be divisible by 16")
        if self.block_size < 1 or self.block_size % 2 == 0:
            raise SgmParamError("block_size must be an odd number >= 1")
        # common SGBM practice when the smoothness penalties are unset
        p1 = self.p1 if self.p1 is not None else 8 * self.block_size**2
        p2 = self.p2 if self.p2 is not None else 32 * self.block_size**2
        if p1 <= 0:
            raise SgmParamError("p1 must be positive")
        if p2 <= p1:
            raise SgmParamError("p2 must be greater than p1")
        if self.uniqueness_ratio < 0:
            raise SgmParamError("uniqueness_ratio must be >= 0")
        if self.speckle_window_size < 0:
            raise SgmParamError("speckle_window_size must be >= 0")
        if self.speckle_range < 0:
            raise SgmParamError("speckle_range must be >= 0")
        if self.num_paths not in (4, 8):
            raise SgmParamError("num_paths must be 4 or 8")
        return replace(self, p1=p1, p2=p2)

    def merged(self, updates: dict) -> "SgmParams":
        """Apply a partial update dict; unknown keys rejected."""
        unknown = set(updates) - set(_FIELDS)
        if unknown:
            raise SgmParamError(f"unknown parameter: {', '.join(sorted(unknown))}")
        return replace(self, **{k: int(v) for k, v in updates.items()})

    def to_json(self) -> str:
        doc = {"version": "sgm-v1"}
        doc.update({k: v for k, v in asdict(self).items()})
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SgmParams":
        doc = json.loads(text)
        if doc.pop("version", None) != "sgm-v1":
            raise SgmParamError("missing or unsupported version (expected sgm-v1)")
        unknown = set(doc) - set(_FIELDS)
        if unknown:
            raise SgmParamError(f"unknown parameter: {', '.join(sorted(unknown))}")
        kwargs = {}
        for key, value in doc.items():
            kwargs[key] = None if value is None else int(value)
        return cls(**kwargs)
