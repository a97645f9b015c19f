from setuptools import setup, find_packages

setup(
    name="hdsa_update",
    version="0.1.0",
    description="Actualización post-optimalidad de soluciones de optimización con EDP mediante discrepancia de modelo",
    license="MIT",
    packages=find_packages(include=["src", "src.*"]),
    include_package_data=True,
    install_requires=[
        "numpy>=1.26",
        "scipy>=1.12",
        "SQLAlchemy>=2.0",
        "openpyxl>=3.1.2",
    ],
    extras_require={
        "plots": ["matplotlib>=3.9.2"],
        "test": ["pytest>=8.0"],
    },
    entry_points={
        "console_scripts": [
            "hdsa-update=src.main:main",
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3.11",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.10",
)
