"""Batches of normalized scalograms with ids and labels."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .aslt import AsltConfig, scalogram_input


class ContaminatedDataset(ValueError):
    """Raised when noise-labelled items reach a clean-only training routine."""


@dataclass
class ScalogramSet:
    ids: list
    x: np.ndarray      # (N, 1, 32, 256) float32 in [-1, 1]
    labels: list       # frozensets
    u8: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)

    def require_clean(self):
        bad = [i for i, lab in zip(self.ids, self.labels) if frozenset(lab) != {"clean"}]
        if bad:
            raise ContaminatedDataset(f"{len(bad)} noise-labelled item(s) in a clean-only set, e.g. {bad[0]!r}")

    def subset(self, ids):
        keep = set(ids)
        idx = [i for i, k in enumerate(self.ids) if k in keep]
        return ScalogramSet([self.ids[i] for i in idx], self.x[idx], [self.labels[i] for i in idx],
                            None if self.u8 is None else self.u8[idx])

    def fingerprint(self):
        h = hashlib.sha256()
        for k in self.ids:
            h.update(str(k).encode() + b"\0")
        h.update(np.ascontiguousarray(self.x, dtype="<f4").tobytes())
        return h.hexdigest()

    @classmethod
    def from_records(cls, records, cfg=AsltConfig(), ids=None):
        """Compute normalized scalograms for records or segments."""
        items = [scalogram_input(r, cfg) for r in records]
        if ids is None:
            ids = [getattr(r, "record_id", None) or getattr(r, "segment_id", str(i))
                   for i, r in enumerate(records)]
        u8 = np.stack([it.u8_grid for it in items])
        x = np.stack([it.x for it in items])[:, None].astype(np.float32)
        return cls(list(ids), x, [frozenset(r.labels) for r in records], u8)
