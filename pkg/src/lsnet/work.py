"""Exact work accounting for attention stages.

Primitives report into the counter made active with :func:`counting`; counts
come from tensor shapes, so they are exact and independent of timing.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from dataclasses import dataclass

_ACTIVE: contextvars.ContextVar[WorkCounter | None] = contextvars.ContextVar(
    "lsnet_work_counter", default=None
)


@dataclass
class WorkCounter:
    neighbor_slots: int = 0
    mlp_macs: int = 0
    gathers: int = 0

    def __add__(self, other: WorkCounter) -> WorkCounter:
        return WorkCounter(
            self.neighbor_slots + other.neighbor_slots,
            self.mlp_macs + other.mlp_macs,
            self.gathers + other.gathers,
        )


@contextmanager
def counting(counter: WorkCounter):
    token = _ACTIVE.set(counter)
    try:
        yield counter
    finally:
        _ACTIVE.reset(token)


def active_counter() -> WorkCounter | None:
    return _ACTIVE.get()
