"""Random group elements used by the equivariance checks."""

from __future__ import annotations

import numpy as np


def random_orthogonal(n: int, rng: np.random.Generator, det: int | None = None) -> np.ndarray:
    """Haar-distributed orthogonal matrix from the QR of a Gaussian matrix.

    ``det`` forces the determinant sign (+1 rotation, -1 reflection); ``None``
    leaves it random.
    """
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    if det is not None and np.sign(np.linalg.det(q)) != det:
        q[:, 0] = -q[:, 0]
    return q


def random_translation(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal(n)


def random_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(n)


def permutation_matrix(perm: np.ndarray) -> np.ndarray:
    """P with (P @ a)[i] == a[perm[i]]."""
    return np.eye(len(perm))[perm]
