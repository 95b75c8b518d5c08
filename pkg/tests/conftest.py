import numpy as np
import pytest

import qrfselect.forest as qf
from qrfselect.data import Dataset


@pytest.fixture(autouse=True)
def validate_every_forest(monkeypatch):
    """Assert honesty/bookkeeping invariants on every forest fitted in tests."""
    real_fit = qf.fit

    def checked_fit(*args, **kwargs):
        fitted = real_fit(*args, **kwargs)
        qf.validate_forest(fitted)
        return fitted

    monkeypatch.setattr(qf, "fit", checked_fit)
    yield


def make_dataset(n=200, d=3, seed=0, signal=None, noise_sd=1.0):
    """Gaussian covariates with an optional linear signal in column 0."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    y = noise_sd * rng.standard_normal(n)
    if signal is not None:
        y = y + signal * x[:, 0]
    return Dataset(y=y, x=x, names=tuple(f"x{i + 1}" for i in range(d)))
