"""This file runs all the tests of intrnn.
It is intended to run as the main entry point of tests.

You can run this file by writing "python -m intrnn.tests"
Extra arguments are handed to pytest, e.g. "-m 'not slow'" skips the long
Monte-Carlo checks. "--pause" waits for enter before exiting, which keeps a
console window opened by double click readable.
"""
import os
import sys

from six.moves import input


def check_if_all_tests_pass(option='-x', extra=()):
    """Runs all of the tests and only returns True if all tests pass.
       The -x option is the default, and -x will tell pytest to exit on the first encountered failure.
       The -s option prints out stdout from the tests (normally hidden.)"""
    import pytest
    tests_dir = os.path.dirname(os.path.abspath(__file__))
    exitcode = pytest.main([option, tests_dir] + list(extra))
    return exitcode == 0

if __name__ == "__main__":
    arguments = sys.argv[1:]
    pause = "--pause" in arguments
    all_passed = check_if_all_tests_pass(extra=[a for a in arguments if a != "--pause"])
    if pause:
        input()
    sys.exit(0 if all_passed else 1)
