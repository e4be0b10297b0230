"""Counter-based noise streams keyed by ``(master seed, replica)``.

Every replica owns an independent Philox4x64 stream whose 128-bit key is
``(domain << 96) | (replica << 64) | seed``.  Raw 64-bit words are mapped to
open-interval uniforms by ``u = ((w >> 12) + 0.5) * 2**-52`` and to standard
Gaussians by the inverse normal CDF ``ndtri(u)``.  Consumption is strictly
sequential, so a replica's variates never depend on how many replicas run
alongside it or how the draws are chunked.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_INV_2_52 = 2.0**-52
_MASK64 = (1 << 64) - 1

DOMAIN_DYNAMICS = 0
DOMAIN_STICKY = 1


def words_to_uniform(words: np.ndarray) -> np.ndarray:
    # 52 bits keep k + 0.5 exact, so no word maps to 0 or 1
    return ((words >> np.uint64(12)).astype(np.float64) + 0.5) * _INV_2_52


class NoiseStream:
    """Deterministic variates for one simulation replica.

    Parameters
    ----------
    seed : int
        64-bit master seed.
    replica : int
        Replica index; distinct replicas get independent keys.
    domain : int
        Separates consumers (particle dynamics, 1-D sticky paths) that share
        a master seed.
    zero : bool
        Debug mode: all Gaussians are 0 and all uniforms are 0.
    """

    def __init__(self, seed: int, replica: int = 0, domain: int = DOMAIN_DYNAMICS, zero: bool = False):
        if not (0 <= seed <= _MASK64):
            raise ValueError(f"seed must fit in 64 bits, got {seed!r}")
        if not (0 <= replica < 2**32) or not (0 <= domain < 2**32):
            raise ValueError("replica and domain must fit in 32 bits")
        self.seed = int(seed)
        self.replica = int(replica)
        self.domain = int(domain)
        self.zero = zero
        self.step_counter = 0
        key = (self.domain << 96) | (self.replica << 64) | self.seed
        self._bitgen = np.random.Philox(key=key)

    def _words(self, count: int) -> np.ndarray:
        return self._bitgen.random_raw(count)

    def draw(self, steps: int, n_normal: int, n_uniform: int) -> tuple:
        """Variates for ``steps`` consecutive steps.

        Each step consumes ``n_normal + n_uniform`` words: Gaussians first,
        then uniforms.  Returns arrays of shape ``(steps, n_normal)`` and
        ``(steps, n_uniform)``.
        """
        width = n_normal + n_uniform
        self.step_counter += steps
        if self.zero:
            return np.zeros((steps, n_normal)), np.zeros((steps, n_uniform))
        u = words_to_uniform(self._words(steps * width)).reshape(steps, width)
        return ndtri(u[:, :n_normal]), u[:, n_normal:].copy()

    def normals(self, count: int) -> np.ndarray:
        z, _ = self.draw(1, count, 0)
        return z[0]
