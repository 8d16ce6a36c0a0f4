from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

logger = logging.getLogger("tensor_completion.runner")

TaskT = TypeVar("TaskT")
ResultT = TypeVar("ResultT")


def run_ordered(
    func: Callable[[TaskT], ResultT],
    tasks: Sequence[TaskT],
    workers: int = 1,
) -> list[ResultT]:
    """Applies func to every task; results come back in submission order whatever the worker count."""
    workers = max(1, int(workers))
    if workers == 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    logger.debug("running %d tasks on %d workers", len(tasks), workers)
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="tc-run") as executor:
        futures = [executor.submit(func, task) for task in tasks]
        return [future.result() for future in futures]
