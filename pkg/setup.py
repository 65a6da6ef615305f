from setuptools import setup, find_packages
from socketlsh import __version__

setup(
    name="socketlsh",
    version=__version__,
    description="Soft-LSH key scoring and sparse attention experiments",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["test", "test.*"]),
    install_requires=[
        "numpy>=1.22",
        "pyyaml>=5.1",
        "scipy>=1.10",
    ],
    extras_require={
        "test": ["hypothesis>=6.0"],
    },
    tests_require=["hypothesis>=6.0"],
    entry_points={
        "console_scripts": [
            "socketlsh=socketlsh.cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering",
    ],
    python_requires=">=3.8",
)
