import numpy as np
import pytest

from curllab.fields import (
    FourierField,
    conformal_metric,
    cos_mode,
    flat_metric,
    random_metric,
    sin_mode,
)


def shear_one_form(k: int = 1) -> FourierField:
    """sin(kz) dx + cos(kz) dy, the canonical tight test family."""
    return sin_mode("one_form", abs(k), (0, 0, k), 0) + cos_mode(
        "one_form", abs(k), (0, 0, k), 1
    )


def random_one_form(truncation: int, rng: np.random.Generator) -> FourierField:
    L = 2 * truncation + 1
    c = rng.standard_normal((3, L, L, L)) + 1j * rng.standard_normal((3, L, L, L))
    c = 0.5 * (c + c[:, ::-1, ::-1, ::-1].conj())
    return FourierField("one_form", c)


def random_scalar(truncation: int, rng: np.random.Generator) -> FourierField:
    L = 2 * truncation + 1
    c = rng.standard_normal((1, L, L, L)) + 1j * rng.standard_normal((1, L, L, L))
    c = 0.5 * (c + c[:, ::-1, ::-1, ::-1].conj())
    return FourierField("scalar", c)


@pytest.fixture(scope="session")
def flat():
    return flat_metric()


@pytest.fixture(scope="session")
def conformal2():
    return conformal_metric(2.0)


@pytest.fixture(scope="session")
def bumpy():
    """A mildly perturbed SPD metric, fixed seed."""
    return random_metric(2.0, 1e-2, 20240601)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
