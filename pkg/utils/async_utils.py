import asyncio
from typing import Callable, List, Sequence, TypeVar

from tqdm import tqdm

T = TypeVar("T")


async def gather_bounded(jobs: Sequence[Callable[[], T]], limit: int, desc: str | None = None) -> List[T]:
    """
    Run blocking jobs in worker threads, at most `limit` at a time.

    Results come back in submission order, whatever order the jobs finish in.
    Exceptions propagate (the first one raised by gather).

    Args:
        jobs: Zero-argument callables, each one a pure unit of work
        limit: Maximum number of jobs running concurrently
        desc: Optional progress bar label
    """
    semaphore = asyncio.Semaphore(max(1, limit))
    progress = tqdm(total=len(jobs), desc=desc, disable=desc is None, leave=False)

    async def run_with_semaphore(job):
        async with semaphore:
            result = await asyncio.to_thread(job)
        progress.update(1)
        return result

    try:
        return await asyncio.gather(*(run_with_semaphore(job) for job in jobs))
    finally:
        progress.close()


def run_jobs(jobs: Sequence[Callable[[], T]], parallel: int = 1, desc: str | None = None) -> List[T]:
    """
    Execute jobs sequentially (parallel <= 1) or through gather_bounded.
    """
    jobs = list(jobs)
    if parallel <= 1:
        return [job() for job in tqdm(jobs, desc=desc, disable=desc is None, leave=False)]
    return asyncio.run(gather_bounded(jobs, parallel, desc))
