from setuptools import setup, find_packages

setup(
    name="moran-lab",
    version="0.1.0",
    packages=find_packages(include=["cli*", "config*", "core*"]),
    install_requires=[
        "numpy>=1.26",
        "scipy>=1.11",
        "pandas>=2.2.3",
        "matplotlib>=3.10.0",
        "pydantic>=2.7.0",
        "pydantic-settings>=2.7.1",
        "python-dotenv>=1.0.0",
        "PyYAML>=6.0",
    ],
    extras_require={"test": ["pytest>=8.0"]},
    entry_points={"console_scripts": ["moran-lab=cli.main:main"]},
)
