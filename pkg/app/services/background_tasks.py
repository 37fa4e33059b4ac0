import asyncio
import logging
import uuid
from typing import Any, Callable, Coroutine, Dict, List, Optional, Sequence, TypeVar

from app.core.config import settings
from app.models.depth import TaskStatus

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


async def gather_bounded(fn: Callable[[T], R], items: Sequence[T], limit: int) -> List[R]:
    """Run ``fn`` over ``items`` in worker threads, at most ``limit`` at a time, results in input order."""
    semaphore = asyncio.Semaphore(max(1, limit))

    async def run_one(item: T) -> R:
        async with semaphore:
            return await asyncio.to_thread(fn, item)

    return list(await asyncio.gather(*(run_one(item) for item in items)))


def map_cameras(fn: Callable[[T], R], items: Sequence[T], limit: Optional[int] = None) -> List[R]:
    """
    Apply a pure per-camera function to every camera.

    Concurrency is capped by ``settings.threads`` (env M2D_THREADS). With one
    thread the calls run sequentially in the caller's thread. Inside a running
    event loop the work also runs sequentially; async callers should use
    :func:`gather_bounded` directly.
    """
    limit = settings.threads if limit is None else limit
    if limit <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    try:
        asyncio.get_running_loop()
    except RuntimeError:
        return asyncio.run(gather_bounded(fn, items, limit))
    return [fn(item) for item in items]


class BackgroundTaskManager:
    """
    In-process job registry for the HTTP surface.

    Jobs move through pending -> running -> completed / failed / timeout.
    At most ``settings.max_concurrent_tasks`` jobs run at once.
    """

    def __init__(self, max_concurrent: Optional[int] = None):
        self.tasks: Dict[str, Dict[str, Any]] = {}
        self.running_tasks: Dict[str, asyncio.Task] = {}
        self._max_concurrent = max_concurrent or settings.max_concurrent_tasks
        self._semaphore: Optional[asyncio.Semaphore] = None

    @property
    def semaphore(self) -> asyncio.Semaphore:
        if self._semaphore is None:
            self._semaphore = asyncio.Semaphore(self._max_concurrent)
        return self._semaphore

    async def submit_task(
        self,
        task_func: Callable[..., Coroutine],
        kind: str,
        task_id: Optional[str] = None,
        timeout: int = settings.task_timeout,
        **kwargs,
    ) -> str:
        """
        Submit a job for execution.

        Args:
            task_func: The async function to execute; its return value becomes the job result
            kind: Job kind reported back to clients (synth, estimate, refine, eval)
            task_id: Optional task ID (generated if not provided)
            timeout: Job timeout in seconds
            **kwargs: Arguments to pass to the task function

        Returns:
            Task ID
        """
        if task_id is None:
            task_id = str(uuid.uuid4())
        self.tasks[task_id] = {"id": task_id, "kind": kind, "status": TaskStatus.PENDING, "error": None, "result": None}
        task = asyncio.create_task(self._execute_task(task_func, task_id, timeout, **kwargs))
        self.running_tasks[task_id] = task
        logger.info(f"Submitted task {task_id} ({kind})")
        return task_id

    async def _execute_task(self, task_func: Callable[..., Coroutine], task_id: str, timeout: int, **kwargs):
        async with self.semaphore:
            try:
                self._update_task_status(task_id, TaskStatus.RUNNING)
                result = await asyncio.wait_for(task_func(**kwargs), timeout=timeout)
                self._update_task_status(task_id, TaskStatus.COMPLETED, result=result)
                logger.info(f"Task {task_id} completed successfully")
            except asyncio.TimeoutError:
                self._update_task_status(task_id, TaskStatus.TIMEOUT, error=f"timed out after {timeout} seconds")
                logger.error(f"Task {task_id} timed out after {timeout} seconds")
            except Exception as e:
                self._update_task_status(task_id, TaskStatus.FAILED, error=str(e))
                logger.error(f"Task {task_id} failed: {str(e)}")
            finally:
                self.running_tasks.pop(task_id, None)

    def _update_task_status(
        self, task_id: str, status: TaskStatus, error: Optional[str] = None, result: Optional[Dict[str, Any]] = None
    ):
        task_data = self.tasks.setdefault(task_id, {"id": task_id, "kind": "unknown"})
        task_data["status"] = status
        if error:
            task_data["error"] = error
        if result is not None:
            task_data["result"] = result

    def get_task_status(self, task_id: str) -> Optional[Dict[str, Any]]:
        return self.tasks.get(task_id)

    async def wait(self, task_id: str) -> Optional[Dict[str, Any]]:
        task = self.running_tasks.get(task_id)
        if task is not None:
            await asyncio.shield(task)
        return self.get_task_status(task_id)


# Global task manager instance
task_manager = BackgroundTaskManager()
