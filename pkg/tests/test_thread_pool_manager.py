"""
Unit tests for ThreadPoolManager.
Tests singleton pattern, pool creation, configuration, shutdown, and thread-safety.
"""

import threading
import time
import unittest

from utils.thread_pool_manager import ThreadPoolManager


class TestThreadPoolManager(unittest.TestCase):
    """Test cases for ThreadPoolManager."""

    def setUp(self):
        """Set up test fixtures."""
        # Reset singleton instance for each test
        ThreadPoolManager._instance = None

    def tearDown(self):
        """Clean up after tests."""
        if ThreadPoolManager._instance is not None:
            manager = ThreadPoolManager()
            if hasattr(manager, '_initialized'):
                manager.shutdown(timeout=2)
        ThreadPoolManager._instance = None

    def test_singleton_pattern(self):
        """Test that ThreadPoolManager implements singleton pattern."""
        self.assertIs(ThreadPoolManager(), ThreadPoolManager())

    def test_singleton_thread_safety(self):
        """Test thread-safe singleton initialization."""
        instances = []
        lock = threading.Lock()

        def create_instance():
            manager = ThreadPoolManager()
            with lock:
                instances.append(manager)

        threads = [threading.Thread(target=create_instance) for _ in range(10)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

        self.assertEqual(len(instances), 10)
        for instance in instances:
            self.assertIs(instance, instances[0])

    def test_study_pool_creation(self):
        """Test lazy creation of the study pool."""
        manager = ThreadPoolManager()
        self.assertFalse(manager.is_study_pool_active())

        pool = manager.study_pool
        self.assertIsNotNone(pool)
        self.assertTrue(manager.is_study_pool_active())
        self.assertIs(manager.study_pool, pool)

    def test_default_worker_count(self):
        """Test the default number of study workers."""
        self.assertEqual(ThreadPoolManager().get_study_worker_count(), ThreadPoolManager.MAX_STUDY_WORKERS)

    def test_configure(self):
        """Test configuring the worker count before the pool exists."""
        manager = ThreadPoolManager()
        manager.configure(2)
        self.assertEqual(manager.get_study_worker_count(), 2)
        with self.assertRaises(ValueError):
            manager.configure(0)
        manager.study_pool
        with self.assertRaises(RuntimeError):
            manager.configure(3)

    def test_study_pool_executes_members(self):
        """Test that the study pool runs submitted members."""
        manager = ThreadPoolManager()
        futures = [manager.study_pool.submit(lambda v=v: v * v) for v in range(6)]
        self.assertEqual(sorted(f.result(timeout=5) for f in futures), [0, 1, 4, 9, 16, 25])

    def test_max_concurrent_workers(self):
        """Test that no more than the configured members run at once."""
        manager = ThreadPoolManager()
        manager.configure(2)
        active, peak = [0], [0]
        lock = threading.Lock()

        def member():
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            time.sleep(0.05)
            with lock:
                active[0] -= 1

        futures = [manager.study_pool.submit(member) for _ in range(6)]
        for future in futures:
            future.result(timeout=5)
        self.assertLessEqual(peak[0], 2)

    def test_shutdown_without_pool(self):
        """Test shutdown when the pool was never created."""
        self.assertTrue(ThreadPoolManager().shutdown(timeout=1))

    def test_shutdown_waits_for_running_members(self):
        """Test that running members finish before shutdown returns."""
        manager = ThreadPoolManager()
        finished = threading.Event()

        def member():
            time.sleep(0.1)
            finished.set()

        manager.study_pool.submit(member)
        time.sleep(0.02)
        self.assertTrue(manager.shutdown(timeout=5))
        self.assertTrue(finished.is_set())

    def test_shutdown_idempotent(self):
        """Test that repeated shutdown calls are harmless."""
        manager = ThreadPoolManager()
        manager.study_pool
        self.assertTrue(manager.shutdown(timeout=2))
        self.assertTrue(manager.shutdown(timeout=2))

    def test_no_reinitialization(self):
        """Test that a second construction keeps the existing state."""
        manager = ThreadPoolManager()
        manager.configure(3)
        self.assertEqual(ThreadPoolManager().get_study_worker_count(), 3)


if __name__ == "__main__":
    unittest.main()
