from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from pycinematic.settings import Settings


@pytest.fixture(autouse=True)
def settings_dir(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    """Keep every test away from the real settings file and output folder."""
    config = tmp_path / "config"
    config.mkdir()
    monkeypatch.setattr(Settings, "settings_dir", staticmethod(lambda: config))
    monkeypatch.delenv(Settings.OUTPUT_ENV, raising=False)
    return config


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def out_dir(tmp_path: Path) -> Path:
    path = tmp_path / "runs"
    path.mkdir()
    return path
