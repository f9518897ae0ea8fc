"""Seeded random generators for matrices used by tests, suites and generators."""
import numpy as np
from scipy.stats import unitary_group


def rng_from(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def complex_gaussian(rng, shape):
    """Standard complex Gaussian entries (E|z|^2 = 1)."""
    rng = rng_from(rng)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_hermitian(rng, n, scale=1.0):
    G = complex_gaussian(rng, (n, n))
    return scale * (G + G.conj().T) / 2


def random_unitary(rng, n):
    return unitary_group.rvs(n, random_state=rng_from(rng)) if n > 1 else np.exp(
        2j * np.pi * rng_from(rng).random()) * np.ones((1, 1))


def random_pd(rng, n, spread=1.0):
    """``w diag(exp(s)) w^dagger`` with log-eigenvalues uniform in [-spread, spread]."""
    rng = rng_from(rng)
    w = random_unitary(rng, n)
    s = rng.uniform(-spread, spread, n)
    X = (w * np.exp(s)) @ w.conj().T
    return (X + X.conj().T) / 2


def random_gl(rng, n, spread=1.0):
    """Invertible matrix ``w1 diag(exp(s)) w2`` with controlled condition number."""
    rng = rng_from(rng)
    s = rng.uniform(-spread, spread, n)
    return (random_unitary(rng, n) * np.exp(s)) @ random_unitary(rng, n)
