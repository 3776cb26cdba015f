import logging
import threading
from typing import Callable

from repository.exceptions import ValidationError

logger = logging.getLogger(__name__)


class SlotPool:
    """Counting pool of CPU slots shared by every run of one engine.

    Acquisition never preempts; ``peak`` records the highest occupancy seen.
    """

    def __init__(self, capacity: int, on_change: Callable[[int, int], None] | None = None):
        if capacity < 1:
            raise ValidationError(f"worker pool size must be positive, got {capacity}")
        self.capacity = capacity
        self.in_use = 0
        self.peak = 0
        self._on_change = on_change
        self._condition = threading.Condition()

    def fits(self, slots: int) -> bool:
        return slots <= self.capacity

    def acquire(self, slots: int, blocking: bool = True, timeout: float | None = None) -> bool:
        if not self.fits(slots):
            raise ValidationError(f"step needs {slots} slots but the pool has {self.capacity}")
        with self._condition:
            if blocking:
                granted = self._condition.wait_for(lambda: self.in_use + slots <= self.capacity, timeout=timeout)
            else:
                granted = self.in_use + slots <= self.capacity
            if not granted:
                return False
            self.in_use += slots
            self.peak = max(self.peak, self.in_use)
            if self._on_change:
                self._on_change(self.in_use, self.capacity)
        return True

    def release(self, slots: int) -> None:
        with self._condition:
            if slots > self.in_use:
                raise ValidationError(f"releasing {slots} slots but only {self.in_use} are held")
            self.in_use -= slots
            if self._on_change:
                self._on_change(self.in_use, self.capacity)
            self._condition.notify_all()

    def wait_for_release(self, timeout: float) -> None:
        with self._condition:
            self._condition.wait(timeout)
