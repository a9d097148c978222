#!/usr/bin/env python3
"""Memory and worker-count guard for long algebraic computations"""

import logging
import os
from typing import Optional

import psutil

from utils.algebra_helper import IdentifiabilityError

logger = logging.getLogger(__name__)

RESOURCE_CONFIG = {
    "min_free_memory_mb": 256,   # Abort a computation below this much free RAM
    "memory_per_job_mb": 512,    # Planning figure for one concurrent analysis
}


class ResourceExhausted(IdentifiabilityError):
    """Free memory dropped below the configured floor while computing."""

    def __init__(self, stage: str, available_mb: float):
        self.stage = stage
        self.available_mb = available_mb
        super().__init__(f"only {available_mb:.0f} MB free during {stage}")


class ResourceGuard:
    """Watches free memory and caps worker counts using psutil"""

    def __init__(self, min_free_memory_mb: Optional[int] = None, memory_per_job_mb: Optional[int] = None):
        self.min_free_memory_mb = min_free_memory_mb or RESOURCE_CONFIG["min_free_memory_mb"]
        self.memory_per_job_mb = memory_per_job_mb or RESOURCE_CONFIG["memory_per_job_mb"]

    @staticmethod
    def available_mb() -> float:
        return psutil.virtual_memory().available / (1024 ** 2)

    def check_memory(self, stage: str) -> None:
        available = self.available_mb()
        if available < self.min_free_memory_mb:
            logger.error(f"Low memory during {stage}: {available:.0f} MB available")
            raise ResourceExhausted(stage, available)

    def recommended_jobs(self, requested: int) -> int:
        """Cap ``requested`` workers by CPU count and by memory headroom; never below 1."""
        cpus = psutil.cpu_count(logical=True) or os.cpu_count() or 1
        headroom = self.available_mb() - self.min_free_memory_mb
        by_memory = int(headroom // self.memory_per_job_mb)

        jobs = max(1, min(requested, cpus, by_memory))
        if jobs < requested:
            logger.warning(
                f"Reducing workers from {requested} to {jobs} "
                f"({cpus} CPUs, {self.available_mb():.0f} MB available)"
            )
        return jobs


_default_guard = ResourceGuard()


# Convenience functions for easy integration
def check_memory(stage: str) -> None:
    _default_guard.check_memory(stage)


def recommended_jobs(requested: int) -> int:
    return _default_guard.recommended_jobs(requested)
