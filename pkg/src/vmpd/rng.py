"""Deterministic counter-based random numbers.

Every stochastic ingredient of the pipeline (noise synthesis, error
injection, power-iteration starts, test probes) draws from this generator so
that runs are reproducible bit-for-bit from ``(seed, stream)`` alone, with no
dependence on library RNG internals.

Scheme
------
SplitMix64 finalizer over a counter sequence:

    state   = mix64(mix64(seed) ^ mix64(stream))
    raw_k   = mix64(state + k * GOLDEN)              k = 0, 1, 2, ...
    u_k     = (raw_k >> 11 + 1) * 2**-53             uniform on (0, 1]
    g_j     = sqrt(-2 ln u_{2j}) * cos(2 pi u_{2j+1})   (Box-Muller, cosine branch)

Gaussian index ``j`` therefore consumes exactly counters ``2j`` and
``2j + 1``, so any slice of the stream can be produced without generating
its prefix.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# Stream ids used across the package; any uint64 is a valid stream.
STREAM_NOISE_1 = 1
STREAM_NOISE_2 = 2
STREAM_POWER_ITER = 3
STREAM_ADJOINT_X = 4
STREAM_ADJOINT_Y = 5
STREAM_ERR_A = 6
STREAM_ERR_B = 7
STREAM_ERR_C = 8
STREAM_ERR_D = 9


def _mix64(z):
    """SplitMix64 output mixer on uint64 scalars or arrays (wrapping mod 2**64)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _stream_state(seed, stream):
    s = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    t = _mix64(np.uint64(stream & 0xFFFFFFFFFFFFFFFF))
    return _mix64(s ^ t)


def _uniform_at(state, counters):
    with np.errstate(over="ignore"):
        raw = _mix64(state + counters * _GOLDEN)
    return ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def uniforms(seed, stream, start, count):
    """Uniform samples on (0, 1] at counter positions start..start+count-1."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    state = _stream_state(seed, stream)
    k = np.arange(start, start + count, dtype=np.uint64)
    return _uniform_at(state, k)


def gaussians(seed, stream, start, count):
    """Standard normal samples g_start .. g_{start+count-1} of the stream."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count == 0:
        return np.zeros(0)
    state = _stream_state(seed, stream)
    j = np.arange(start, start + count, dtype=np.uint64)
    two = np.uint64(2)
    one = np.uint64(1)
    u1 = _uniform_at(state, j * two)
    u2 = _uniform_at(state, j * two + one)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
