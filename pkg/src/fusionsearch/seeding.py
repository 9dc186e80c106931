"""Order-independent seed derivation and an optional process pool."""
from __future__ import annotations

import hashlib
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable

import numpy as np


def _as_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & (2**64 - 1)
    digest = hashlib.sha256(str(key).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(master: int, *keys) -> int:
    """64-bit seed that depends only on ``master`` and ``keys``, never on call order."""
    ss = np.random.SeedSequence([_as_int(master), *(_as_int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


_CONTEXT: Any = None


def _init_worker(context) -> None:
    global _CONTEXT
    _CONTEXT = context


def _call(fn, item):
    return fn(_CONTEXT, item)


def pmap(fn: Callable[[Any, Any], Any], items: Iterable, context: Any = None,
         jobs: int = 1) -> list:
    """``[fn(context, x) for x in items]``, optionally across ``jobs`` processes.

    The context is shipped once per worker. Results keep input order, so the
    output never depends on ``jobs``.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(context, x) for x in items]
    ctx = mp.get_context("spawn")
    with ProcessPoolExecutor(max_workers=min(jobs, len(items)), mp_context=ctx,
                             initializer=_init_worker, initargs=(context,)) as ex:
        return list(ex.map(_call, [fn] * len(items), items))


def _apply(fn, item):
    return fn(item)


def process_map(jobs: int):
    """A ``map_fn(fn, items)`` running picklable ``fn`` over ``jobs`` processes."""
    def map_fn(fn, items):
        return pmap(_apply, items, fn, jobs)
    return map_fn
