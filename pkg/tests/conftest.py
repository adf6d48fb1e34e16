import numpy as np
import pytest

from memdb.engine import Database


def unit(*components) -> np.ndarray:
    v = np.asarray(components, dtype=np.float64)
    return (v / np.linalg.norm(v)).astype(np.float32)


def random_units(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.astype(np.float32)


@pytest.fixture
def db(tmp_path):
    with Database(tmp_path / "data") as handle:
        yield handle


@pytest.fixture
def ns(db):
    return db.namespace("test")
