"""
Chain Dispatcher
Runs independent chains or replicates over a bounded process pool.
"""

import logging
import time
from concurrent.futures import FIRST_COMPLETED, Future, ProcessPoolExecutor, wait
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

logger = logging.getLogger(__name__)


@dataclass
class TaskResult:
    """Outcome of one dispatched task."""
    index: int
    success: bool
    value: Any
    error: Optional[BaseException]
    duration: float


class RunStats:
    """Track dispatch statistics."""

    def __init__(self):
        self.total_tasks = 0
        self.success_count = 0
        self.failed_count = 0
        self.total_duration = 0.0
        self.start_time: Optional[float] = None

    def record_result(self, result: TaskResult):
        """Record a task result."""
        if result.success:
            self.success_count += 1
        else:
            self.failed_count += 1
        self.total_duration += result.duration

    def get_summary(self) -> str:
        """Get statistics summary."""
        elapsed = time.time() - self.start_time if self.start_time else 0.0
        done = self.success_count + self.failed_count
        rate = self.success_count / done * 100 if done else 0.0

        summary = f"""Run Statistics:
- Total Tasks: {self.total_tasks}
- Successful: {self.success_count}
- Failed: {self.failed_count}
- Success Rate: {rate:.1f}%
- Task Time: {self.total_duration:.2f}s
- Elapsed Time: {elapsed:.2f}s
"""
        return summary


def _timed_call(fn: Callable[[Any], Any], index: int, task: Any) -> TaskResult:
    start = time.time()
    try:
        value = fn(task)
        return TaskResult(index, True, value, None, time.time() - start)
    except Exception as exc:  # reported by the parent
        return TaskResult(index, False, None, exc, time.time() - start)


class ChainDispatcher:
    """Maps a picklable function over tasks with at most max_workers processes."""

    def __init__(
        self,
        max_workers: int = 1,
        progress_callback: Optional[Callable[[int, int, str], None]] = None,
    ):
        """
        Initialize dispatcher.

        Args:
            max_workers: Process count; 1 runs everything inline
            progress_callback: Function(current, total, message)
        """
        if max_workers < 1:
            raise ValueError("max_workers must be >= 1")
        self.max_workers = max_workers
        self.progress_callback = progress_callback
        self.stats = RunStats()
        self.cancelled = False

    def set_progress_callback(self, callback: Callable[[int, int, str], None]):
        """
        Set progress callback.

        Args:
            callback: Function(current, total, message)
        """
        self.progress_callback = callback

    def cancel(self):
        """Stop submitting new tasks."""
        self.cancelled = True

    def _report(self, completed: int, total: int, result: TaskResult):
        status = "done" if result.success else f"failed ({result.error})"
        message = f"task {result.index + 1}/{total} {status} in {result.duration:.1f}s"
        logger.info(message)
        if self.progress_callback:
            self.progress_callback(completed, total, message)

    def map(self, fn: Callable[[Any], Any], tasks: Sequence[Any]) -> List[Any]:
        """
        Run fn over tasks.

        Args:
            fn: Module-level function (picklable)
            tasks: Task arguments

        Returns:
            Results in submission order. After cancel() only finished tasks are returned.

        Raises:
            The first task exception, once every running task has finished
        """
        self.stats = RunStats()
        self.stats.start_time = time.time()
        self.stats.total_tasks = len(tasks)
        self.cancelled = False
        results: Dict[int, TaskResult] = {}
        total = len(tasks)

        if self.max_workers == 1 or total <= 1:
            for i, task in enumerate(tasks):
                if self.cancelled:
                    break
                result = _timed_call(fn, i, task)
                results[i] = result
                self.stats.record_result(result)
                self._report(len(results), total, result)
        else:
            with ProcessPoolExecutor(max_workers=min(self.max_workers, total)) as pool:
                pending: Dict[Future, int] = {
                    pool.submit(_timed_call, fn, i, task): i for i, task in enumerate(tasks)
                }
                while pending:
                    done, _ = wait(pending, return_when=FIRST_COMPLETED)
                    for future in done:
                        pending.pop(future)
                        result = future.result()
                        results[result.index] = result
                        self.stats.record_result(result)
                        self._report(len(results), total, result)
                    if self.cancelled:
                        for future in pending:
                            future.cancel()
                        pending = {f: i for f, i in pending.items() if not f.cancelled()}

        ordered = [results[i] for i in sorted(results)]
        failures = [r for r in ordered if not r.success]
        if failures:
            raise failures[0].error
        return [r.value for r in ordered]

    def get_stats(self) -> RunStats:
        """Get dispatch statistics."""
        return self.stats
