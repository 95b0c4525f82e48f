"""conftest.py — shared pytest fixtures: shipped configs and a seeded generator."""

import os

import numpy as np
import pytest
import yaml

from src.config import load_config

ROOT = os.path.dirname(os.path.abspath(__file__))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale acceptance runs (deselect with -m 'not slow')")


@pytest.fixture(scope="session")
def repo_file():
    def path(name: str) -> str:
        return os.path.join(ROOT, name)
    return path


@pytest.fixture(scope="session")
def base_cfg(repo_file):
    return load_config(repo_file("config.yaml"))


@pytest.fixture(scope="session")
def scaled_cfg(repo_file):
    return load_config(repo_file("configs/scaled.yaml"))


@pytest.fixture(scope="session")
def broken_cfg(repo_file):
    return load_config(repo_file("configs/scaled_broken.yaml"))


@pytest.fixture
def scaled_raw(repo_file):
    """configs/scaled.yaml as a plain dict, for building variants."""
    with open(repo_file("configs/scaled.yaml")) as f:
        return yaml.safe_load(f)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
