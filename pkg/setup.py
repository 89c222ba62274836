"""wienerlab package.

Built as a regular setuptools project from `src/`. The version lives in
`src/wienerlab/_dist_info.py`, which is imported here without importing the
package itself (numpy and scipy may not be installed at build time).
"""

import importlib.util
from setuptools import setup, find_packages
import sys
from pathlib import Path

THIS_DIR = Path(__file__).resolve().parent


def import_dist_info():
    dist_info_path = THIS_DIR / "src" / "wienerlab" / "_dist_info.py"
    if not dist_info_path.exists():
        raise RuntimeError(f"No _dist_info.py file found: {dist_info_path}")
    module_name = "wienerlab_dist_info"
    spec = importlib.util.spec_from_file_location(module_name, dist_info_path)
    module = importlib.util.module_from_spec(spec)
    sys.modules[module_name] = module
    spec.loader.exec_module(module)
    return module


def read_requirements(name: str) -> list[str]:
    lines = (THIS_DIR / name).read_text().splitlines()
    return [l.strip() for l in lines if l.strip() and not l.startswith("#")]


dist_info = import_dist_info()
packages = find_packages(where="./src")
print(f"Loaded wienerlab dist_info: version={dist_info.__version__}, packages={packages}")

setup(
    name="wienerlab",
    version=dist_info.__version__,
    description="Numerical laboratory for shifted Wiener measures",
    python_requires=">=3.10",
    package_dir={"": "src"},
    packages=packages,
    entry_points={
        "console_scripts": [
            "wienerlab = wienerlab.__main__:main",
        ],
    },
    install_requires=read_requirements("requirements.txt"),
    extras_require={"test": read_requirements("requirements-test.txt")},
)
