from setuptools import find_packages, setup

from src.lmpcurtail.constants import VERSION

DESCRIPTION = """Strategic Curtailment Analysis for LMP Markets (lmpcurtail)
Clears the DC-OPF ex-post market of a transmission network, traces how a
bus's locational marginal price responds to curtailed generation, and finds
the curtailment that maximizes an aggregator's revenue: exactly for a single
bus, epsilon-accurately on radial networks, and by brute force as a check.
"""

setup(
    name="lmpcurtail",
    version=VERSION,
    packages=find_packages(where="src", exclude=[
                           "__pycache__", "*.__pycache__*"]),
    package_dir={"": "src"},
    package_data={"lmpcurtail": ["VERSION", "cases/*.json"]},
    include_package_data=True,
    scripts=["src/bin/lmpcurtail"],
    install_requires=[
        "dotenv<1.0,>=0.9.9",
        "packaging<26.0,>=25.0",
        "numpy>=1.21,<3.0",
        "scipy>=1.7,<2.0",
        "networkx>=2.6,<4.0",
        "pandas>=1.5,<3.0",
    ],
    extras_require={
        "test": [
            "pytest>=8.3,<9.0",
            "pytest-mock>=3.14,<4.0",
            "pytest-ordering>=0.6,<1.0",
            "pytest-dependency>=0.6,<1.0",
            "behave<2.0,>=1.3.3",
        ],
    },
    description=DESCRIPTION,
    long_description=DESCRIPTION,
    license="MIT License",
    classifiers=["Programming Language :: Python :: 3.8"],
)
