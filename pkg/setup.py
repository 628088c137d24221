"""Setup script for strip-mlp."""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="strip-mlp",
    version="0.1.0",
    description="Strip-MLP vision backbone with a numpy autograd core, cost analysis and desk-scale training",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT No Attribution License (MIT-0)",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.20.0",
        "scipy>=1.7.0",
        "requests>=2.25.0",
    ],
    extras_require={
        "test": [
            "hypothesis>=6.0.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "strip-mlp=strip_mlp.cli:main",
        ],
    },
)
