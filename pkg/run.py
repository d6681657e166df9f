#!/usr/bin/env python3
"""
Portfolio Pipeline Startup Script
=================================

Checks dependencies, then forwards its arguments to the pipeline CLI.

Usage:
    python run.py frontier --input returns.csv --output-dir results

Author: Analog Portfolio Team
"""

import sys

CRITICAL_DEPS = [
    ("numpy", "numpy"),
    ("scipy", "scipy"),
    ("pandas", "pandas"),
    ("numba", "numba"),
    ("psutil", "psutil"),
    ("dotenv", "python-dotenv"),
]


def check_dependency(module_name: str) -> bool:
    """Check if a dependency is installed"""
    try:
        __import__(module_name)
        return True
    except ImportError:
        return False


def check_critical_dependencies(verbose: bool = True) -> list:
    """Return the pip names of missing packages"""
    missing_deps = []

    if verbose:
        print("🔍 Checking dependencies...")
    for module, package in CRITICAL_DEPS:
        if check_dependency(module):
            if verbose:
                print(f"✅ {package}")
        else:
            if verbose:
                print(f"❌ {package} - MISSING")
            missing_deps.append(package)

    return missing_deps


def main(argv=None) -> int:
    """Dependency check, then the CLI"""
    argv = sys.argv[1:] if argv is None else argv
    missing = check_critical_dependencies(verbose="--quiet" not in argv)

    if missing:
        print(f"\n❌ Missing dependencies: {', '.join(missing)}", file=sys.stderr)
        print("💡 Install them with: pip install -r requirements.txt", file=sys.stderr)
        return 2

    from pipeline_cli import main as cli_main
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
