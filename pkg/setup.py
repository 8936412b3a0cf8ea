"""
Description

Setup script to install georeg: geometric point cloud registration
with superpoint matching, local-to-global pose estimation and a
benchmark harness

"""

from setuptools import setup
import codecs
import os.path

# Installation requirements
install_requires = ['numpy',
                    'scipy',
                    'mako',
                    'click>=7.1.2',]

# Acquire package version for installation
# (see https://packaging.python.org/guides/single-sourcing-package-version/)
def read(rel_path):
    here = os.path.abspath(os.path.dirname(__file__))
    with codecs.open(os.path.join(here, rel_path), 'r') as fp:
        return fp.read()

def get_version(rel_path):
    for line in read(rel_path).splitlines():
        if line.startswith('__version__'):
            delim = '"' if '"' in line else "'"
            return line.split(delim)[1]
    else:
        raise RuntimeError("Unable to find version string.")

GEOREG_VERSION = get_version("georeg/__init__.py")

# Get long description from the project README
readme = read('README.rst')

# Setup for installation etc
setup(
    name = "georeg",
    version = GEOREG_VERSION,
    description = "Point cloud registration with superpoint matching "
    "and local-to-global pose estimation",
    long_description = readme,
    packages = ['georeg',],
    entry_points = { 'console_scripts': [
        'georeg = georeg.cli:georeg',]
    },
    license = 'AFL',
    install_requires = install_requires,
    test_suite = 'test',
    platforms="Posix; MacOS X; Windows",
    python_requires=">=3.8",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "Intended Audience :: Developers",
        "License :: OSI Approved :: Academic Free License (AFL)",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering",
        "Topic :: Scientific/Engineering :: Image Recognition",
        "Programming Language :: Python :: 3",
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        "Programming Language :: Python :: 3 :: Only",
    ],
    include_package_data=True,
    zip_safe = False
)
