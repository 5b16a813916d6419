import numpy as np


def derive_rng(seed: int, *streams: int) -> np.random.Generator:
    """Build a counter-based generator for one (seed, stream...) coordinate.

    The same coordinates always give the same stream, independent of how many
    other streams were drawn before, which keeps parallel and sequential
    evaluation bit-identical.

    Args:
        seed (int): Base seed.
        *streams (int): Stream indices (probe index, epoch, trial, ...).

    Returns:
        np.random.Generator: Philox-backed generator."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, streams)])))


def rademacher(seed: int, index: int, dim: int) -> np.ndarray:
    """Draw the ±1 probe vector number `index` of the family `seed`."""
    return derive_rng(seed, index).integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0


def unit_vector(seed: int, index: int, dim: int) -> np.ndarray:
    """Draw a random unit vector (Gaussian direction)."""
    v = derive_rng(seed, index).standard_normal(dim)
    return v / np.linalg.norm(v)


def trial_seed(noise_seed: int, alpha_index: int, trial_index: int) -> int:
    """Combine a noise seed with sweep coordinates; distinct for distinct coordinates.

    Raises:
        ValueError: If an index does not fit in 16 bits."""
    if not (0 <= alpha_index < 1 << 16 and 0 <= trial_index < 1 << 16):
        raise ValueError(f"Sweep coordinates ({alpha_index}, {trial_index}) exceed 65535.")
    return (int(noise_seed) << 32) | (alpha_index << 16) | trial_index
