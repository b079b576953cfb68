"""Tests for the output directory lock."""

import os
import tempfile
import time
import unittest
from pathlib import Path
from unittest.mock import Mock

from errors import LockError
from locking import LOCK_FILE_NAME, OutputLock


class TestOutputLock(unittest.TestCase):
    """Test OutputLock acquisition and release."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out_dir = Path(self.tmp.name) / "out"

    def tearDown(self):
        self.tmp.cleanup()

    def test_acquire_and_release(self):
        """Acquiring creates the lock file and releasing removes it."""
        lock = OutputLock(self.out_dir, Mock())

        self.assertTrue(lock.acquire())
        self.assertTrue((self.out_dir / LOCK_FILE_NAME).exists())
        self.assertEqual(lock.holder()["pid"], os.getpid())
        self.assertEqual(lock.holder()["command"], "build-editset")

        lock.release()
        self.assertFalse((self.out_dir / LOCK_FILE_NAME).exists())

    def test_held_lock(self):
        """A second lock on the same directory fails, with or without a timeout."""
        first = OutputLock(self.out_dir, Mock())
        second_logger = Mock()
        second = OutputLock(self.out_dir, second_logger)

        self.assertTrue(first.acquire())
        self.assertFalse(second.acquire())
        second_logger.error.assert_called()
        self.assertFalse(second.acquire(timeout=0.6))
        first.release()

    def test_stale_lock_removed(self):
        """Locks older than the threshold are replaced."""
        self.out_dir.mkdir(parents=True)
        lock_file = self.out_dir / LOCK_FILE_NAME
        lock_file.write_text("PID: 1\n")
        old = time.time() - 7200
        os.utime(lock_file, (old, old))
        logger = Mock()

        lock = OutputLock(self.out_dir, logger)

        self.assertTrue(lock.acquire(stale_threshold=3600))
        logger.warning.assert_called_once()
        lock.release()

    def test_release_without_acquire(self):
        """Releasing an unacquired lock leaves foreign lock files alone."""
        self.out_dir.mkdir(parents=True)
        (self.out_dir / LOCK_FILE_NAME).write_text("PID: 1\n")

        OutputLock(self.out_dir, Mock()).release()

        self.assertTrue((self.out_dir / LOCK_FILE_NAME).exists())

    def test_context_manager(self):
        """The context manager raises LockError when the directory is held."""
        with OutputLock(self.out_dir, Mock()):
            with self.assertRaises(LockError):
                with OutputLock(self.out_dir, Mock()):
                    pass
        self.assertFalse((self.out_dir / LOCK_FILE_NAME).exists())


if __name__ == "__main__":
    unittest.main()
