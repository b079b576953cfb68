"""Output directory locks so two builds never write into the same edit set."""

import json
import logging
import os
import time
from pathlib import Path
from typing import Optional

from errors import LockError

LOCK_FILE_NAME = ".uniedit.lock"
POLL_INTERVAL_S = 0.5


class OutputLock:
    """Exclusive lock file inside an output directory.

    The file holds JSON owner metadata so a blocked run can report who
    holds the directory. Locks older than ``stale_threshold`` seconds are
    treated as left over from a crashed run.
    """

    def __init__(self, out_dir: Path, logger: Optional[logging.Logger] = None, command: str = "build-editset"):
        self.out_dir = Path(out_dir)
        self.lock_file = self.out_dir / LOCK_FILE_NAME
        self.command = command
        self.logger = logger or logging.getLogger(__name__)
        self.acquired = False

    def holder(self) -> Optional[dict]:
        """Owner metadata of an existing lock, or None if there is no readable lock."""
        try:
            owner = json.loads(self.lock_file.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            return None
        return owner if isinstance(owner, dict) else None

    def _age(self) -> Optional[float]:
        try:
            return time.time() - self.lock_file.stat().st_mtime
        except FileNotFoundError:
            return None

    def _clear_if_stale(self, stale_threshold: float) -> None:
        age = self._age()
        if age is None or age <= stale_threshold:
            return
        self.logger.warning(f"Removing stale lock {self.lock_file} ({age:.0f}s old, owner {self.holder()})")
        try:
            self.lock_file.unlink()
        except FileNotFoundError:
            pass

    def _try_create(self) -> bool:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.lock_file, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            return False
        owner = {"pid": os.getpid(), "command": self.command, "started": time.strftime("%Y-%m-%d %H:%M:%S")}
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(owner, handle)
        return True

    def acquire(self, timeout: float = 0, stale_threshold: float = 3600) -> bool:
        """Take the lock, polling for up to ``timeout`` seconds (0 = single attempt).

        Returns:
            True if the lock is now held by this object
        """
        deadline = time.monotonic() + timeout
        while True:
            self._clear_if_stale(stale_threshold)
            try:
                created = self._try_create()
            except OSError as e:
                self.logger.error(f"Cannot create lock file {self.lock_file}: {e}")
                return False
            if created:
                self.acquired = True
                self.logger.debug(f"Locked {self.out_dir}")
                return True
            if time.monotonic() >= deadline:
                self.logger.error(f"{self.out_dir} is being written by another run (owner {self.holder()})")
                return False
            time.sleep(POLL_INTERVAL_S)

    def release(self) -> None:
        """Remove the lock file if this object holds it."""
        if not self.acquired:
            return
        self.acquired = False
        try:
            self.lock_file.unlink()
            self.logger.debug(f"Unlocked {self.out_dir}")
        except FileNotFoundError:
            self.logger.warning(f"Lock file {self.lock_file} vanished before release")
        except OSError as e:
            self.logger.error(f"Failed to remove lock file: {e}")

    def __enter__(self):
        if not self.acquire():
            raise LockError(f"Output directory is locked by another run ({self.lock_file}, owner {self.holder()})")
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.release()
        return False
