"""Quasi-Monte Carlo and pseudo-random draw blocks for simulated likelihood."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import norm

from .errors import InvalidParameter

# One prime per draw dimension, assigned in ascending order (the scale draw
# eps0 takes the last dimension).
PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61,
          67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113)

DEFAULT_BURN = 50


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


def halton_sequence(base: int, count: int, burn: int = 0) -> np.ndarray:
    """Radical-inverse Halton sequence in (0, 1).

    Returns elements ``burn+1 .. burn+count`` of the base-``base`` sequence
    (the sequence starts at index 1, so no exact zeros appear).
    """
    if not _is_prime(int(base)):
        raise InvalidParameter(f"Halton base must be prime, got {base}")
    if burn < 0:
        raise InvalidParameter(f"burn must be nonnegative, got {burn}")
    if count < 0:
        raise InvalidParameter(f"count must be nonnegative, got {count}")
    if count == 0:
        return np.zeros(0)
    idx = np.arange(burn + 1, burn + count + 1, dtype=np.int64)
    out = np.zeros(count)
    denom = 1.0
    while idx.any():
        denom *= base
        out += (idx % base) / denom
        idx //= base
    return out


@dataclass(frozen=True)
class DrawBlock:
    """Standard-normal draws for simulated likelihood, fixed across iterations.

    ``normals`` has shape (n_events, n_draws, n_random + 1); the last draw
    dimension is reserved for the scale disturbance eps0. Event ordinal i
    always receives the same draws for a given (seed, scheme), independent of
    how many events surround it in a batch.
    """

    normals: np.ndarray
    scheme: str
    seed: int

    @property
    def n_events(self) -> int:
        return self.normals.shape[0]

    @property
    def n_draws(self) -> int:
        return self.normals.shape[1]

    @property
    def n_random(self) -> int:
        return self.normals.shape[2] - 1

    @property
    def eps0(self) -> np.ndarray:
        return self.normals[:, :, -1]


def build_draw_block(n_events: int, n_random: int, n_draws: int, scheme: str = "halton",
                     seed: int = 0, burn: int = DEFAULT_BURN) -> DrawBlock:
    """Build the per-event draw matrix for ``n_random`` coefficients plus eps0.

    Halton draws assign one prime per dimension (ascending, eps0 last), skip
    ``burn`` leading elements, and slice event ordinal i the rows
    [i*n_draws, (i+1)*n_draws) before mapping through the inverse normal CDF.
    Pseudo-random draws derive an independent per-event stream from
    (seed, event ordinal).
    """
    dims = n_random + 1
    if scheme == "halton":
        if dims > len(PRIMES):
            raise InvalidParameter(f"at most {len(PRIMES)} draw dimensions supported, got {dims}")
        normals = np.empty((n_events, n_draws, dims))
        for j in range(dims):
            u = halton_sequence(PRIMES[j], n_events * n_draws, burn)
            normals[:, :, j] = norm.ppf(u).reshape(n_events, n_draws)
    elif scheme == "random":
        normals = np.empty((n_events, n_draws, dims))
        for i in range(n_events):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(i,)))
            normals[i] = rng.standard_normal((n_draws, dims))
    else:
        raise InvalidParameter(f"unknown draw scheme {scheme!r}")
    return DrawBlock(normals=normals, scheme=scheme, seed=int(seed))


@lru_cache(maxsize=4)
def _cached_block(n_events, n_random, n_draws, scheme, seed):
    return build_draw_block(n_events, n_random, n_draws, scheme=scheme, seed=seed)


def draws_for(spec, n_events: int) -> DrawBlock:
    """Draw block matching a ModelSpec's draw configuration.

    Blocks are cached (they are immutable and expensive to rebuild) so
    repeated post-estimation evaluations reuse the fitting draws.
    """
    return _cached_block(n_events, spec.n_random, spec.n_draws, spec.draw_scheme, spec.seed)
