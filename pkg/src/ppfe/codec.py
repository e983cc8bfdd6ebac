"""Encoding-based privacy mechanism: probabilistic uniform quantization plus
reference-time bookkeeping for the legitimate and eavesdropping decoders.

Each channel transmits a quantized, scaled innovation against a reference
value that grows by a factor `a` per step since the last acknowledged
reception. Missing a single packet therefore poisons every later decode on
that channel, while the legitimate side (which mirrors the decoder through
acknowledgments) stays lossless in expectation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# a^gap beyond this log threshold cannot be represented in double precision
_MAX_EXP_LOG = 690.0


class CodecOverflowError(OverflowError):
    """Reference growth a^gap left the floating-point range."""


@dataclass(frozen=True)
class CodecParams:
    """Per-channel encoding parameters: growth base a, step delta, global scale s."""

    a: float
    delta: float
    s: float

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError("growth base a must be positive")
        if not self.delta > 0.0:
            raise ValueError("quantization step delta must be positive")
        if self.s == 0.0:
            raise ValueError("scale s must be nonzero")


@dataclass(frozen=True)
class CodecState:
    """Reference bookkeeping for one (channel, party) pair.

    Before the first successful reception the reference is (t_ref=0, y_ref=0)
    and `initialized` is False; the growth factor is then skipped entirely, so
    the bootstrap packet decodes as z*s regardless of the elapsed time.
    """

    y_ref: np.ndarray
    t_ref: int = 0
    initialized: bool = False

    def __post_init__(self):
        y = np.asarray(self.y_ref, dtype=float)
        y.setflags(write=False)
        object.__setattr__(self, "y_ref", y)
        if self.t_ref < 0:
            raise ValueError("reference time must be >= 0")


def bootstrap_state(dim: int) -> CodecState:
    return CodecState(y_ref=np.zeros(dim))


@dataclass(frozen=True)
class EncodedPacket:
    """Lattice vector z (component-wise multiple of delta) with its time stamp."""

    z: np.ndarray
    k: int

    def lattice_indices(self, delta: float) -> np.ndarray:
        return np.rint(self.z / delta).astype(np.int64)

    def to_wire(self, channel: int, delta: float) -> tuple:
        """Exact serialization as (k, channel, integer lattice indices, delta)."""
        return (self.k, channel, tuple(int(d) for d in self.lattice_indices(delta)), delta)

    @staticmethod
    def from_wire(wire: tuple) -> "EncodedPacket":
        k, _channel, indices, delta = wire
        return EncodedPacket(z=np.asarray(indices, dtype=float) * delta, k=k)


def quantize(zbar: np.ndarray, delta: float, rng: np.random.Generator,
             return_q: bool = False):
    """Probabilistic uniform quantization onto the lattice {d*delta, d integer}.

    Per component, with d = floor(zbar/delta) and q = zbar/delta - d, returns
    d*delta with probability 1-q and (d+1)*delta with probability q. The
    floor is taken toward -inf so q in [0, 1) for negative inputs too. The
    error is zero-mean with variance q(1-q)delta^2 <= delta^2/4.
    """
    if not delta > 0.0:
        raise ValueError("quantization step delta must be positive")
    z = np.asarray(zbar, dtype=float)
    if not np.isfinite(z).all():
        raise ValueError("quantizer input must be finite")
    scaled = z / delta
    d = np.floor(scaled)
    q = scaled - d
    out = (d + (rng.random(z.shape) < q)) * delta
    if return_q:
        return out, q
    return out


def _growth_factor(params: CodecParams, gap: int, k: int) -> float:
    if gap < 0:
        raise ValueError(f"step {k} precedes the reference time")
    if gap == 0:
        return 1.0
    if params.a > 1.0 and gap * math.log(params.a) > _MAX_EXP_LOG:
        raise CodecOverflowError(
            f"reference growth a^{gap} = {params.a}^{gap} overflows at step {k}"
        )
    return params.a ** gap


def _reconstruct(state: CodecState, params: CodecParams, z: np.ndarray, k: int) -> np.ndarray:
    if not state.initialized:
        return np.asarray(z, dtype=float) * params.s
    factor = _growth_factor(params, k - state.t_ref, k)
    return np.asarray(z, dtype=float) * params.s + factor * state.y_ref


def encode(state: CodecState, params: CodecParams, y: np.ndarray, k: int,
           rng: np.random.Generator, transparent: bool = False) -> EncodedPacket:
    """Quantize (y - a^{k-t_ref} y_ref) / s; the reference advances only on ACK.

    `transparent` is a test-only mode that skips quantization (identity map,
    zero encoding error) to expose the deterministic reference recursion.
    """
    y = np.asarray(y, dtype=float)
    if state.initialized:
        factor = _growth_factor(params, k - state.t_ref, k)
        pre = (y - factor * state.y_ref) / params.s
    else:
        if k < state.t_ref:
            raise ValueError(f"step {k} precedes the reference time")
        pre = y / params.s
    z = pre if transparent else quantize(pre, params.delta, rng)
    return EncodedPacket(z=z, k=k)


def decode(state: CodecState, params: CodecParams, z: np.ndarray, k: int
           ) -> tuple[np.ndarray, CodecState]:
    """Legitimate decode: ybar = z s + a^{k-t_ref} y_ref, reference moved to (k, ybar)."""
    ybar = _reconstruct(state, params, z, k)
    return ybar, CodecState(y_ref=ybar, t_ref=k, initialized=True)


def ack(state: CodecState, decoded: np.ndarray, k: int) -> CodecState:
    """Encoder-side mirror of a successful legitimate reception at step k."""
    return CodecState(y_ref=np.asarray(decoded, dtype=float), t_ref=k, initialized=True)


def eavesdrop_decode(state: CodecState, params: CodecParams, z: np.ndarray, k: int
                     ) -> tuple[np.ndarray, CodecState]:
    """Eavesdropper decode: identical formula, driven by its own reception history."""
    return decode(state, params, z, k)
