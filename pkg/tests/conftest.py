from pathlib import Path

import pytest

from rangekit.model import load_config

DATA_DIR = Path(__file__).resolve().parent.parent / "src" / "rangekit" / "data" / "diag"


@pytest.fixture(scope="session")
def diag_paths() -> dict[str, Path]:
    return {
        "config": DATA_DIR / "testbed.json",
        "profiles": DATA_DIR / "profiles.csv",
        "windows": DATA_DIR / "attack_windows.csv",
        "packages": DATA_DIR / "cpe_packages.csv",
        "nmap": DATA_DIR / "nmap_lan1.xml",
        "openvas": DATA_DIR / "openvas_lan1.csv",
    }


@pytest.fixture(scope="session")
def diag_config(diag_paths):
    return load_config(diag_paths["config"].read_bytes())
