"""Centralized fusion filter over decoded, partially received measurements.

The same predict/update recursion serves the legitimate user and the
eavesdropper; the two runs differ only in their channel outcomes and decoded
streams. Dropped channels are removed from the stacked update (reduced form)
instead of being stacked with zero rows, which is algebraically equivalent to
the outcome-weighted full stack but keeps the innovation covariance
invertible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import CodecParams
from .model import SensorModel, SystemModel, symmetrize

COND_LIMIT = 1e12


@dataclass(frozen=True)
class FilterState:
    """Estimate and covariance at step k, tagged predicted or updated."""

    x: np.ndarray
    P: np.ndarray
    k: int
    phase: str  # "predicted" | "updated"

    def __post_init__(self):
        if self.phase not in ("predicted", "updated"):
            raise ValueError("phase must be 'predicted' or 'updated'")
        x = np.asarray(self.x, dtype=float)
        p = symmetrize(np.asarray(self.P, dtype=float))
        x.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", p)


def initial_state(model: SystemModel) -> FilterState:
    """Prior (x0_mean, P0), playing the role of the step-0 prediction."""
    return FilterState(x=model.x0_mean, P=model.P0, k=0, phase="predicted")


@dataclass(frozen=True)
class AugmentedMeasurement:
    """Stack of decoded measurements over the received channel set.

    Rdec holds the decoding-error covariance blocks s^2 q(1-q) delta^2 per
    component (the delta^2/4 bound when the realized q is unknown), applied
    exactly once in the covariance update.
    """

    received: tuple[int, ...]
    y: np.ndarray
    C: np.ndarray
    R: np.ndarray
    Rdec: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.received) == 0


def build_augmented(
    outcomes,
    decoded,
    sensors: list[SensorModel],
    codecs: list[CodecParams],
    q_values=None,
) -> AugmentedMeasurement:
    """Reduced stacking over channels with outcome 1.

    `decoded` must hold a vector exactly where the outcome is 1. `q_values`
    optionally supplies per-component realized quantization probabilities
    (exact Rdec blocks); otherwise the conservative bound delta^2/4 is used.
    """
    received = [i for i, g in enumerate(outcomes) if g]
    if not received:
        n = 0
        return AugmentedMeasurement(
            received=(), y=np.empty(0), C=np.empty((0, sensors[0].C.shape[1])),
            R=np.empty((0, 0)), Rdec=np.empty((0, 0)))
    ys, cs, r_blocks, rdec_diag = [], [], [], []
    for i in received:
        if decoded[i] is None:
            raise ValueError(f"channel {i} has outcome 1 but no decoded value")
        ys.append(np.asarray(decoded[i], dtype=float))
        cs.append(sensors[i].C)
        r_blocks.append(sensors[i].r_eff)
        s2 = codecs[i].s ** 2
        d2 = codecs[i].delta ** 2
        if q_values is not None and q_values[i] is not None:
            q = np.asarray(q_values[i], dtype=float)
            rdec_diag.append(s2 * q * (1.0 - q) * d2)
        else:
            rdec_diag.append(np.full(sensors[i].d_y, s2 * d2 / 4.0))
    n = sum(c.shape[0] for c in cs)
    r = np.zeros((n, n))
    pos = 0
    for blk in r_blocks:
        m = blk.shape[0]
        r[pos:pos + m, pos:pos + m] = blk
        pos += m
    return AugmentedMeasurement(
        received=tuple(received),
        y=np.concatenate(ys),
        C=np.vstack(cs),
        R=r,
        Rdec=np.diag(np.concatenate(rdec_diag)),
    )


def predict(state: FilterState, model: SystemModel, u=None) -> FilterState:
    """Time update: x <- A x + B u, P <- A P A^T + D Q D^T."""
    if state.phase != "updated":
        raise ValueError("predict expects an updated state")
    u = model.input_at(state.k) if u is None else np.asarray(u, dtype=float)
    x = model.A @ state.x + model.B @ u
    p = model.A @ state.P @ model.A.T + model.qeff
    return FilterState(x=x, P=p, k=state.k + 1, phase="predicted")


def update(state: FilterState, aug: AugmentedMeasurement) -> FilterState:
    """Measurement update; an empty augmentation leaves (x, P) unchanged."""
    if state.phase != "predicted":
        raise ValueError("update expects a predicted state")
    if aug.empty:
        return FilterState(x=state.x, P=state.P, k=state.k, phase="updated")
    c = aug.C
    s = c @ state.P @ c.T + aug.R
    eig = np.linalg.eigvalsh(symmetrize(s))
    if eig[0] <= 0.0 or eig[-1] / eig[0] > COND_LIMIT:
        raise ValueError(
            f"innovation covariance ill-conditioned (cond > {COND_LIMIT:.0e}) "
            f"for received channels {aug.received}"
        )
    k_gain = np.linalg.solve(symmetrize(s), c @ state.P).T
    x = state.x + k_gain @ (aug.y - c @ state.x)
    p = state.P - k_gain @ s @ k_gain.T + k_gain @ aug.Rdec @ k_gain.T
    return FilterState(x=x, P=symmetrize(p), k=state.k, phase="updated")


def run_filter(
    model: SystemModel,
    sensors: list[SensorModel],
    codecs: list[CodecParams],
    outcomes: np.ndarray,
    decoded,
    q_values=None,
) -> list[FilterState]:
    """Alternate predict/update from the prior over an (M, horizon) outcome matrix.

    Returns the full alternating state sequence [pred_0, upd_0, pred_1, ...]
    of length 2*horizon; `decoded[k][i]` must be the decoded vector where
    outcomes[i, k] == 1 and None elsewhere.
    """
    outcomes = np.asarray(outcomes)
    horizon = outcomes.shape[1]
    # bound-mode Rdec is outcome-determined, so augmentations repeat per pattern
    cache: dict[tuple, AugmentedMeasurement] = {}
    states: list[FilterState] = []
    st = initial_state(model)
    for k in range(horizon):
        if k > 0:
            st = predict(st, model, model.input_at(k - 1))
        states.append(st)
        key = tuple(outcomes[:, k])
        if q_values is None and key in cache:
            aug = cache[key]
            if not aug.empty:
                aug = AugmentedMeasurement(
                    received=aug.received,
                    y=np.concatenate([np.asarray(decoded[k][i], dtype=float) for i in aug.received]),
                    C=aug.C, R=aug.R, Rdec=aug.Rdec)
        else:
            aug = build_augmented(
                outcomes[:, k], decoded[k], sensors, codecs,
                None if q_values is None else q_values[k])
            if q_values is None:
                cache[key] = aug
        st = update(st, aug)
        states.append(st)
    return states


def filter_trace_csv(states: list[FilterState], path) -> None:
    """Export updated states: k, estimate components, diag(P), trace(P)."""
    upd = [s for s in states if s.phase == "updated"]
    if not upd:
        raise ValueError("no updated states to export")
    d = upd[0].x.size
    header = (["k"] + [f"xhat_{j + 1}" for j in range(d)]
              + [f"P_{j + 1}{j + 1}" for j in range(d)] + ["trace_P"])
    lines = [",".join(header)]
    for s in upd:
        row = ([str(s.k)] + [format(v, ".17g") for v in s.x]
               + [format(v, ".17g") for v in np.diag(s.P)]
               + [format(float(np.trace(s.P)), ".17g")])
        lines.append(",".join(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
