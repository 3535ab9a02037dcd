"""
ThreadPoolManager for centralized worker pool management.
Provides singleton access to the study worker pool.
"""

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

from utils.logger import get_logger


class ThreadPoolManager:
    """
    Centralized worker pool management with proper lifecycle.

    Study members (independent flows of a sweep) are submitted to a single
    lazily created pool. numpy and scipy release the GIL in their kernels,
    so threads give real overlap for the dense linear algebra.

    Usage:
        manager = ThreadPoolManager()
        future = manager.study_pool.submit(run_member, member_config)
        manager.shutdown(timeout=10)
    """

    _instance: Optional['ThreadPoolManager'] = None
    _lock = threading.Lock()

    MAX_STUDY_WORKERS = 4

    def __new__(cls):
        """Implement singleton pattern with double-checked locking."""
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        """Initialize the ThreadPoolManager."""
        if hasattr(self, '_initialized'):
            return

        self._initialized = True
        self._study_pool: Optional[ThreadPoolExecutor] = None
        self._max_workers = self.MAX_STUDY_WORKERS
        self._shutdown_initiated = False
        self._logger = get_logger()
        self._logger.debug("ThreadPoolManager initialized")

    def configure(self, max_workers: int) -> None:
        """
        Set the worker count used when the pool is created.

        Args:
            max_workers: Number of study workers (>= 1)

        Raises:
            ValueError: If max_workers < 1
            RuntimeError: If the pool already exists
        """
        if max_workers < 1:
            raise ValueError("max_workers must be at least 1")
        if self._study_pool is not None:
            raise RuntimeError("study pool already created")
        self._max_workers = int(max_workers)

    @property
    def study_pool(self) -> ThreadPoolExecutor:
        """
        Get or create the study worker pool.

        Returns:
            ThreadPoolExecutor for study members
        """
        if self._study_pool is None:
            with self._lock:
                if self._study_pool is None:
                    thread = threading.current_thread()
                    self._study_pool = ThreadPoolExecutor(
                        max_workers=self._max_workers,
                        thread_name_prefix="study_worker"
                    )
                    self._logger.info(
                        f"[Thread-{thread.ident}:{thread.name}] Study pool created with {self._max_workers} workers"
                    )
        return self._study_pool

    def shutdown(self, timeout: float = 10) -> bool:
        """
        Shutdown the study pool.

        Pending members are cancelled; running members finish.

        Args:
            timeout: Maximum time in seconds to wait for shutdown

        Returns:
            True if the pool shut down within the timeout
        """
        if self._shutdown_initiated:
            self._logger.warning("Shutdown already initiated")
            return True

        self._shutdown_initiated = True
        thread = threading.current_thread()
        start_time = time.time()

        if self._study_pool is None:
            return True

        self._logger.info(f"[Thread-{thread.ident}:{thread.name}] Shutting down study pool (timeout: {timeout}s)...")
        done = threading.Event()

        def _wait():
            self._study_pool.shutdown(wait=True, cancel_futures=True)
            done.set()

        waiter = threading.Thread(target=_wait, name="study_pool_shutdown", daemon=True)
        waiter.start()
        success = done.wait(timeout)

        elapsed = time.time() - start_time
        if success:
            self._logger.info(f"[Thread-{thread.ident}:{thread.name}] Study pool terminated in {elapsed:.2f}s")
        else:
            self._logger.warning(
                f"[Thread-{thread.ident}:{thread.name}] Study pool shutdown timed out after {elapsed:.2f}s"
            )
        return success

    def is_study_pool_active(self) -> bool:
        """Check if the study pool has been created."""
        return self._study_pool is not None

    def get_study_worker_count(self) -> int:
        """Get the configured number of study workers."""
        return self._max_workers
