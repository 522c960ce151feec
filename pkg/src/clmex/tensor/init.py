import math

import numpy as np


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """U(-b, b) with b = sqrt(6 / fan_in), the relu-gain fan-in bound."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
