#!/usr/bin/env python3
"""
Tests for the memory and worker guard
"""
from types import SimpleNamespace

import pytest

from utils import resource_guard
from utils.resource_guard import ResourceExhausted, ResourceGuard

MB = 1024 ** 2


@pytest.fixture
def machine(monkeypatch):
    state = {"available_mb": 4096, "cpus": 8}
    monkeypatch.setattr(resource_guard.psutil, "virtual_memory",
                        lambda: SimpleNamespace(available=state["available_mb"] * MB))
    monkeypatch.setattr(resource_guard.psutil, "cpu_count", lambda logical=True: state["cpus"])
    return state


def test_memory_floor(machine):
    guard = ResourceGuard(min_free_memory_mb=1000)
    guard.check_memory("pairs")
    machine["available_mb"] = 500
    with pytest.raises(ResourceExhausted) as info:
        guard.check_memory("pairs")
    assert info.value.stage == "pairs"
    assert info.value.available_mb == 500


def test_jobs_capped_by_cpus_and_memory(machine):
    guard = ResourceGuard(min_free_memory_mb=256, memory_per_job_mb=512)
    assert guard.recommended_jobs(2) == 2
    assert guard.recommended_jobs(32) == 7      # (4096 - 256) // 512
    machine["available_mb"] = 100000
    assert guard.recommended_jobs(32) == 8
    machine["available_mb"] = 300
    assert guard.recommended_jobs(4) == 1


def test_module_helpers_use_default_guard(machine):
    assert resource_guard.recommended_jobs(1) == 1
    machine["available_mb"] = 1
    with pytest.raises(ResourceExhausted):
        resource_guard.check_memory("reduction")
