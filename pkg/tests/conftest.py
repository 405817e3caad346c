"""Shared fixtures: a miniature architecture for fast float64 checks and
discovery of optional real dataset files."""

import os
from pathlib import Path

import numpy as np
import pytest

from capstrain.model import CapsNetConfig

DATA_DIR_ENV = "CAPSTRAIN_DATA_DIR"


def tiny_config(**overrides) -> CapsNetConfig:
    """A capsule net small enough for finite-difference sweeps at float64."""
    base = dict(
        input_side=14,
        kernel=5,
        conv_filters=4,
        primary_caps_types=2,
        primary_caps_dim=4,
        primary_grid_side=3,
        digit_caps=3,
        digit_caps_dim=4,
        decoder_hidden=(6, 7),
        decoder_out=196,
    )
    base.update(overrides)
    return CapsNetConfig(**base)


def real_data_dir():
    """Directory with the four standard IDX files, or None.

    Checked in order: $CAPSTRAIN_DATA_DIR, ./data.  Tests that need the real
    dataset skip when it is absent (this library never downloads).
    """
    candidates = []
    if os.environ.get(DATA_DIR_ENV):
        candidates.append(Path(os.environ[DATA_DIR_ENV]))
    candidates.append(Path(__file__).resolve().parent.parent / "data")
    required = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    for cand in candidates:
        if cand.is_dir() and all((cand / name).is_file() for name in required):
            return cand
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    path = real_data_dir()
    if path is None:
        pytest.skip(f"real dataset files not present (set ${DATA_DIR_ENV} or populate ./data)")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def synthetic_data_dir(tmp_path_factory):
    """Directory shaped like a real dataset drop, filled with the synthetic
    ten-class images, for end-to-end CLI and pipeline tests."""
    from capstrain.data import serialize_idx, synthetic_split

    root = tmp_path_factory.mktemp("idxdata")
    train = synthetic_split(120, seed=100)
    test = synthetic_split(40, seed=101)
    (root / "train-images-idx3-ubyte").write_bytes(serialize_idx(train.images))
    (root / "train-labels-idx1-ubyte").write_bytes(serialize_idx(train.labels))
    (root / "t10k-images-idx3-ubyte").write_bytes(serialize_idx(test.images))
    (root / "t10k-labels-idx1-ubyte").write_bytes(serialize_idx(test.labels))
    return root
