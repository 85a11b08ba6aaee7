"""This is the setup file intented to be used with setuptools or distutils.
"""
import os
import sys
import json
from codecs import open

#For both setuptools and distutils compatability
try:
    from setuptools import setup
    from setuptools.command.test import test as TestCommand
except ImportError:
    from distutils.core import setup, Command
    TestCommand = Command

version_path = os.path.join("intrnn", "_version.py")
with open(version_path) as f:
    version = '.'.join(str(e) for e in json.load(f))

packages = [
    'intrnn',
    'intrnn.runtime',
    'intrnn.tests',
]

with open('README.md', 'r', 'utf-8') as f:
    readme = f.read()

class PyTest(TestCommand):
    """Runs the pytest tests."""
    user_options = [('pytest-args=', 'a', "Arguments to pass to pytest")]

    def initialize_options(self):
        self.pytest_args = []

    def finalize_options(self):
        self.test_args = []
        self.test_suite = True
        if isinstance(self.pytest_args, str):
            self.pytest_args = self.pytest_args.split()

    def run_tests(self):
        import pytest
        errno = pytest.main(['intrnn/tests'] + self.pytest_args)
        sys.exit(errno)

    #for disutils Command support
    run = run_tests

setup(
    name='intrnn',
    version=version,
    description='Integer-only inference for LSTM networks with piecewise linear activations.',
    long_description=readme,
    long_description_content_type='text/markdown',
    packages=packages,
    package_dir={'intrnn': 'intrnn'},

    #For bsdist the manifest isn't used so we have to collect the license another way.
    data_files=[('', ['LICENSE.txt'])],

    entry_points={
        'console_scripts': ['intrnn = intrnn.cli:main'],
    },
    python_requires='>=3.7',
    tests_require=['pytest>=3.0', 'hypothesis>=3.0'],
    cmdclass = {'test': PyTest},
    install_requires=['numpy>=1.17', 'scipy>=1.0', 'six>=1.8.0'],
    license='MIT License',
    zip_safe=False,
    classifiers=(
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Natural Language :: English',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ),
)
