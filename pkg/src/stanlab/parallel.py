"""Worker-count control for the embarrassingly parallel parts."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

from .errors import ConfigurationError

T = TypeVar("T")
R = TypeVar("R")

_ENV_VAR = "STANLAB_THREADS"


def worker_count() -> int:
    """Worker cap from the STANLAB_THREADS env var (default 1)."""
    raw = os.environ.get(_ENV_VAR, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{_ENV_VAR} must be an integer, got {raw!r}") from None
    return max(1, n)


def map_ordered(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Map preserving input order; threaded only when STANLAB_THREADS > 1."""
    seq: Sequence[T] = list(items)
    n = worker_count()
    if n <= 1 or len(seq) <= 1:
        return [fn(x) for x in seq]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, seq))
