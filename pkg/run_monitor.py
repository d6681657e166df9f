#!/usr/bin/env python3
"""
Run Monitor for the Portfolio Pipeline
======================================

Tracks and records what a pipeline command did.

Features:
- Console status lines with a global quiet switch
- Per-stage wall-clock timing
- Memory usage tracking
- Run manifest with config echo, versions, seeds and file digests
- Exclusive lock on the output directory

Author: Analog Portfolio Team
Version: 1.0
"""

import hashlib
import json
import os
import platform
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime
from importlib import metadata
from typing import Any, Dict, List, Optional

import psutil
from dotenv import load_dotenv

from errors import PipelineError, UsageError

load_dotenv()

_VERBOSE = os.getenv("PORTFOLIO_VERBOSE", "1").strip().lower() not in ("0", "false", "no", "off")

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".pipeline.lock"
TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "numba", "psutil", "python-dotenv")


def set_verbose(enabled: bool):
    """Switch console status lines on or off"""
    global _VERBOSE
    _VERBOSE = enabled


def status(message: str):
    """Print a status line unless running quietly"""
    if _VERBOSE:
        print(message, flush=True)


def file_digest(path: str) -> str:
    """SHA-256 hex digest of a file"""
    # stream in 64 KiB chunks
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            sha.update(chunk)
    return sha.hexdigest()


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "missing"
    return versions


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit one command"""
    command: str
    config: Dict[str, Any]
    seeds: Dict[str, int]
    versions: Dict[str, str] = field(default_factory=package_versions)
    stage_seconds: Dict[str, float] = field(default_factory=dict)
    digests: Dict[str, str] = field(default_factory=dict)
    created: str = field(default_factory=lambda: datetime.now().isoformat())

    def add_output(self, path: str):
        self.digests[os.path.basename(path)] = file_digest(path)

    def write(self, output_dir: str) -> str:
        path = os.path.join(output_dir, MANIFEST_NAME)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
        return path


def verify_digests(output_dir: str) -> List[str]:
    """
    Re-hash every file listed in the manifest

    Returns:
        List[str]: names whose digest no longer matches (empty when all verify)
    """
    with open(os.path.join(output_dir, MANIFEST_NAME), "r", encoding="utf-8") as f:
        manifest = json.load(f)

    # a missing file counts as a mismatch
    mismatched = []
    for name, digest in manifest["digests"].items():
        path = os.path.join(output_dir, name)
        if not os.path.exists(path) or file_digest(path) != digest:
            mismatched.append(name)
    return mismatched


@contextmanager
def output_dir_lock(output_dir: str):
    """Hold an exclusive lock file in the output directory"""
    os.makedirs(output_dir, exist_ok=True)
    lock_path = os.path.join(output_dir, LOCK_NAME)
    # fails while another run holds the lock
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as e:
        raise UsageError(f"output directory {output_dir} is locked by another run ({lock_path})") from e
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield lock_path
    finally:
        if os.path.exists(lock_path):
            os.remove(lock_path)


class RunMonitor:
    """Time pipeline stages and sample memory usage"""

    def __init__(self):
        self.metrics = {
            'stage_times': {},
            'memory_usage': [],
        }
        self.session_start = time.time()

    @contextmanager
    def stage(self, name: str):
        """Time one pipeline stage"""
        start = time.perf_counter()
        status(f"🚀 [{name}] started")
        failed = False
        try:
            yield
        except PipelineError as e:
            failed = True
            # innermost stage keeps its tag
            if e.stage is None:
                e.stage = name
            raise
        finally:
            duration = time.perf_counter() - start
            self.metrics['stage_times'][name] = self.metrics['stage_times'].get(name, 0.0) + duration
            self.record_memory_usage(name)
            if not failed:
                status(f"✅ [{name}] finished in {duration:.2f}s")

    def record_memory_usage(self, label: Optional[str] = None):
        """Record current memory usage"""
        process = psutil.Process()
        memory_info = process.memory_info()

        self.metrics['memory_usage'].append({
            'timestamp': datetime.now().isoformat(),
            'label': label,
            'rss_mb': memory_info.rss / 1024 / 1024,
            'percent': process.memory_percent()
        })

    @property
    def stage_seconds(self) -> Dict[str, float]:
        return dict(self.metrics['stage_times'])

    def get_performance_summary(self) -> Dict[str, Any]:
        summary = {
            'session_duration': time.time() - self.session_start,
            'stages': {name: round(sec, 3) for name, sec in self.metrics['stage_times'].items()},
        }
        if self.metrics['memory_usage']:
            summary['peak_rss_mb'] = round(max(m['rss_mb'] for m in self.metrics['memory_usage']), 1)
        return summary

    def print_live_stats(self):
        summary = self.get_performance_summary()

        status("=" * 50)
        status("📊 RUN STATS")
        status("=" * 50)
        status(f"Session Duration: {summary['session_duration']:.1f}s")
        for name, sec in summary['stages'].items():
            status(f"  {name}: {sec:.3f}s")
        if 'peak_rss_mb' in summary:
            status(f"Peak memory: {summary['peak_rss_mb']:.1f} MB")
        status("=" * 50)
