"""Deterministic chunked random streams.

Every Monte Carlo estimate in the package is computed as an ordered reduction
over fixed-size chunks. Chunk ``i`` of a stream draws from its own generator,
seeded from ``(seed, stream path, i)`` through :class:`numpy.random.SeedSequence`,
so the result does not depend on how many worker processes evaluate the chunks.
"""

from __future__ import annotations

import multiprocessing as mp
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


@dataclass(frozen=True)
class Stream:
    """A named, seedable source of per-chunk generators."""

    seed: int
    path: tuple[int, ...] = ()
    workers: int = field(default=1, compare=False)

    def child(self, *names) -> "Stream":
        return replace(self, path=self.path + tuple(_key(n) for n in names))

    def with_workers(self, workers: int) -> "Stream":
        return replace(self, workers=max(1, int(workers)))

    def generator(self, index: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path + (int(index),))
        return np.random.Generator(np.random.PCG64(ss))

    def map(self, fn: Callable[[np.random.Generator, int], Any], sizes: Sequence[int]) -> list:
        """Evaluate ``fn(generator_i, sizes[i])`` for every chunk, results in chunk order."""
        tasks = [(self, i, fn, int(s)) for i, s in enumerate(sizes)]
        if self.workers <= 1 or len(tasks) <= 1:
            return [_run_chunk(t) for t in tasks]
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=self.workers, mp_context=ctx) as pool:
            return list(pool.map(_run_chunk, tasks))

    def collect(
        self,
        fn: Callable[[np.random.Generator, int], dict],
        need: int,
        attempts_per_chunk: int,
        max_attempts: int,
    ) -> tuple[list[dict], int]:
        """Run rejection chunks until ``need`` accepted items are gathered.

        ``fn`` returns a dict of arrays whose leading axis indexes accepted
        items (in attempt order); an optional ``_attempt`` entry gives the
        attempt index of each, so the final partial chunk is counted exactly. Chunks are evaluated in waves of
        ``workers`` and consumed in index order, so the accepted set is the
        same for every worker count. Returns the truncated chunk results and
        the number of attempts consumed.
        """
        results: list[dict] = []
        got = 0
        attempts = 0
        index = 0
        wave = max(1, self.workers)
        ctx = mp.get_context("fork") if wave > 1 else None
        pool = ProcessPoolExecutor(max_workers=wave, mp_context=ctx) if wave > 1 else None
        try:
            while got < need:
                if attempts >= max_attempts:
                    raise AttemptsExhaustedError(need, got, attempts)
                tasks = [(self, index + j, fn, attempts_per_chunk) for j in range(wave)]
                index += wave
                outs = list(pool.map(_run_chunk, tasks)) if pool else [_run_chunk(t) for t in tasks]
                for out in outs:
                    if got >= need:
                        break
                    where = out.pop("_attempt", None)
                    k = _leading(out)
                    take = min(k, need - got)
                    if take < k and where is not None:
                        # stop counting at the last accepted attempt
                        attempts += int(where[take - 1]) + 1 if take else 0
                    else:
                        attempts += attempts_per_chunk
                    results.append({name: v[:take] for name, v in out.items()})
                    got += take
        finally:
            if pool:
                pool.shutdown()
        return results, attempts


class AttemptsExhaustedError(RuntimeError):
    """Rejection sampling ran out of attempts; carries the empirical acceptance rate."""

    def __init__(self, need: int, got: int, attempts: int):
        self.need, self.got, self.attempts = need, got, attempts
        self.acceptance_rate = got / attempts if attempts else 0.0
        super().__init__(
            f"accepted {got} of {need} requested after {attempts} attempts "
            f"(acceptance rate {self.acceptance_rate:.3g})"
        )


def _leading(out: dict) -> int:
    for v in out.values():
        return len(v)
    return 0


def _run_chunk(task):
    stream, index, fn, size = task
    return fn(stream.generator(index), size)


def as_stream(rng, workers: int | None = None) -> Stream:
    """Coerce a seed, ``Generator`` or :class:`Stream` into a :class:`Stream`."""
    if isinstance(rng, Stream):
        s = rng
    elif isinstance(rng, np.random.Generator):
        s = Stream(int(rng.integers(2**63)))
    elif isinstance(rng, (int, np.integer)):
        s = Stream(int(rng))
    else:
        raise TypeError(f"cannot build a random stream from {type(rng).__name__}")
    return s.with_workers(workers) if workers is not None else s


def chunk_sizes(total: int, chunk: int) -> list[int]:
    total, chunk = int(total), max(1, int(chunk))
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


def concat(results: list[dict]) -> dict:
    if not results:
        return {}
    return {k: np.concatenate([r[k] for r in results]) for k in results[0]}
