import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-style RNG stream: the same (seed, key...) always yields the same draws,
    independent of what any other stream has consumed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))
