import os

from setuptools import find_packages, setup

with open(os.path.join("rrpipe", "VERSION")) as f:
    version = f.read().strip()

setup(
    name="rrpipe",
    version=version,
    packages=find_packages(exclude=["tests"]),
    python_requires=">=3.8",
    install_requires=["pydantic>=1.8,<2", "requests", "nltk"],
    entry_points={"console_scripts": ["rrpipe=rrpipe.cli:run"]},
    include_package_data=True,
    package_data={"rrpipe": ["VERSION", "resources/*.txt"]},
)
