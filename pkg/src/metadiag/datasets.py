"""Bundled tabular datasets and synthetic generators with known geometry."""
from __future__ import annotations

from importlib import resources

import numpy as np

from .data import Dataset, load_csv

# name -> (file, label column)
BUNDLED = {
    "diabetes": ("pima_diabetes.csv", "Outcome"),
    "wdbc": ("wdbc.csv", "diagnosis"),
    "phoneme": ("phoneme.csv", "class"),
}


def bundled_path(name: str):
    fname, _ = BUNDLED[name]
    return resources.files("metadiag") / "data" / fname


def load_bundled(name: str) -> Dataset:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
    fname, label = BUNDLED[name]
    with resources.as_file(bundled_path(name)) as path:
        ds, _ = load_csv(path, label, name=name)
    return ds


def _dataset(X, y, name, names=None):
    names = names or tuple(f"x{i}" for i in range(X.shape[1]))
    return Dataset(X, y.astype(int), np.arange(len(y)), tuple(names), name)


def make_blobs(n=200, margin=4.0, dim=2, seed=0) -> Dataset:
    """Two isotropic Gaussian blobs centred at -margin/2 and +margin/2 on every axis."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    centers = np.where(y[:, None] == 1, margin / 2, -margin / 2)
    X = centers + rng.normal(0, 0.5, size=(n, dim))
    return _dataset(X, y, "blobs")


def make_xor(n=400, seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    return _dataset(X, y, "xor")


def make_circles(n=400, seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    r = np.where(y == 1, 1.0, 2.0) + rng.normal(0, 0.1, n)
    t = rng.uniform(0, 2 * np.pi, n)
    return _dataset(np.c_[r * np.cos(t), r * np.sin(t)], y, "circles")


def make_overlap(n=1200, width=1.0, seed=0):
    """Separable data whose labels become ambiguous once the top component goes.

    Two low-variance coordinates ``v`` lie uniformly in ``[-3, 3]^2``. Outside
    the strip ``|v1| < width`` the label follows a curved boundary in ``v``.
    Inside the strip the label is the sign of a hidden coordinate ``u`` that
    is far from zero there and near zero elsewhere. ``u`` is observed through
    three noisy copies, so it dominates the first principal component.

    Returns ``(Dataset, ambiguous)`` where ``ambiguous`` flags rows in the
    strip, the region where classes overlap once ``u`` is projected out.
    """
    rng = np.random.default_rng(seed)
    v = rng.uniform(-3, 3, size=(n, 2))
    strip = np.abs(v[:, 0]) < width
    sign = rng.choice([-1.0, 1.0], size=n)
    u = np.where(strip, sign * rng.uniform(2.5, 4.0, n), rng.normal(0, 0.25, n))
    curve = v[:, 1] > 1.2 * np.sin(1.6 * v[:, 0])
    y = np.where(strip, sign > 0, curve).astype(int)
    copies = u[:, None] + rng.normal(0, 0.05, size=(n, 3))
    X = np.c_[copies, v]
    return _dataset(X, y, "overlap", ("u1", "u2", "u3", "v1", "v2")), strip


def make_moons(n=1200, seed=0) -> Dataset:
    """Interleaved half-moons; the vertical moon coordinate is seen three times."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    t = rng.uniform(0, np.pi, n)
    m1 = np.where(y == 0, np.cos(t), 1 - np.cos(t)) + rng.normal(0, 0.08, n)
    m2 = np.where(y == 0, np.sin(t), 0.5 - np.sin(t)) + rng.normal(0, 0.08, n)
    X = np.c_[m2[:, None] + rng.normal(0, 0.05, size=(n, 3)), m1]
    return _dataset(X, y, "moons", ("m2a", "m2b", "m2c", "m1"))
