#!/usr/bin/env python3
"""
voclip - Test Runner

Runs the unit and integration suites through pytest and prints a short
✅/❌ summary per suite.

Usage:
    python tests/run_all_tests.py [unit|integration|all] [--fast]
"""

import argparse
import sys
import time
from pathlib import Path
from typing import List, Tuple

import pytest

TESTS_DIR = Path(__file__).resolve().parent
SUITES = {
    "unit": TESTS_DIR / "python" / "unit",
    "integration": TESTS_DIR / "python" / "integration",
}


def run_suite(name: str, fast: bool) -> Tuple[bool, str]:
    """Run one suite; ``fast`` skips tests marked ``slow``."""
    args = [str(SUITES[name]), "-q"]
    if fast:
        args += ["-m", "not slow"]
    start = time.time()
    code = pytest.main(args)
    elapsed = time.time() - start
    if code == pytest.ExitCode.OK:
        return True, f"passed in {elapsed:.1f}s"
    if code == pytest.ExitCode.NO_TESTS_COLLECTED:
        return True, "no tests collected"
    return False, f"pytest exit code {int(code)} after {elapsed:.1f}s"


def main() -> int:
    parser = argparse.ArgumentParser(description="Run the voclip test suites")
    parser.add_argument("category", nargs="?", default="all", choices=["unit", "integration", "all"])
    parser.add_argument("--fast", action="store_true", help="Skip tests marked slow")
    args = parser.parse_args()

    print("voclip - Test Runner")
    print("=" * 60)
    names = list(SUITES) if args.category == "all" else [args.category]
    results: List[Tuple[str, bool, str]] = []
    for name in names:
        print(f"\n--- {name} ---")
        success, message = run_suite(name, args.fast)
        results.append((name, success, message))

    print("\n" + "=" * 60)
    print("TEST SUMMARY")
    print("=" * 60)
    for name, success, message in results:
        status = "✅" if success else "❌"
        print(f"{status} {name}: {message}")
    passed = sum(1 for _, success, _ in results if success)
    print(f"\n{passed}/{len(results)} suites passed")
    return 0 if passed == len(results) else 1


if __name__ == "__main__":
    sys.exit(main())
