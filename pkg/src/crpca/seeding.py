import numpy as np


def derive_seed(base_seed: int, *indices: int) -> int:
    """Deterministic 64-bit seed from a base seed and a tuple of indices."""
    ss = np.random.SeedSequence(entropy=int(base_seed) % 2**64, spawn_key=tuple(int(i) for i in indices))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
