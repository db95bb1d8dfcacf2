"""Modified Friedman #1 regression family.

Source labels use ``a = b = 1, c = 0`` and no noise; a target at distance
``d`` sets every ``a_i, b_i, c_i`` to ``d`` and adds Gaussian label noise.
"""

from dataclasses import dataclass

import numpy as np

N_FEATURES = 10


@dataclass(frozen=True)
class FriedmanParams:
    a: tuple = (1.0, 1.0, 1.0, 1.0)
    b: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    c: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    noise_std: float = 0.0
    distance: float = 0.0

    @classmethod
    def source(cls):
        return cls()

    @classmethod
    def target(cls, d, noise_std=1.0):
        return cls((d,) * 4, (d,) * 5, (d,) * 5, noise_std, d)


def friedman_label(x, params):
    """Noiseless label for rows of ``x`` (only the first five columns matter)."""
    a, b, c = params.a, params.b, params.c
    z = [b[i] * x[:, i] + c[i] for i in range(5)]
    return (a[0] * 10.0 * np.sin(np.pi * z[0] * z[1])
            + a[1] * 20.0 * (z[2] - 0.5) ** 2
            + a[2] * 10.0 * z[3]
            + a[3] * 5.0 * z[4])


@dataclass
class TaskDataset:
    x: np.ndarray
    y: np.ndarray
    y_clean: np.ndarray = None

    def __len__(self):
        return len(self.x)

    def subset(self, idx):
        return TaskDataset(self.x[idx], self.y[idx],
                           None if self.y_clean is None else self.y_clean[idx])


def friedman_sample(n, params, rng):
    if n < 1:
        raise ValueError("n must be >= 1")
    x = rng.uniform(0.0, 1.0, size=(n, N_FEATURES))
    clean = friedman_label(x, params)
    y = clean + rng.normal(0.0, params.noise_std, n) if params.noise_std > 0 else clean.copy()
    return TaskDataset(x, y.reshape(-1, 1), clean.reshape(-1, 1))


def friedman_splits(params, rng, total=20_000):
    """Half/half train/test split of ``total`` fresh samples."""
    data = friedman_sample(total, params, rng)
    half = total // 2
    return data.subset(slice(0, half)), data.subset(slice(half, total))
