"""Seeded Monte Carlo harness: wires plant, channels, codec and both
estimators; computes MSE curves, detects critical events, and evaluates the
two secrecy criteria (bounded legitimate covariance, divergent eavesdropper
mean error) empirically.
"""
from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .analysis import BoundParams, BoundSequence, cap_gamma, iterate_bound
from .channel import ChannelModel, OutcomeTrace, sample_outcomes
from .codec import (CodecOverflowError, CodecParams, CodecState, ack,
                    bootstrap_state, decode, eavesdrop_decode, encode)
from .estimator import run_filter
from .model import SensorModel, SystemModel, from_config, simulate_plant, three_tank_preset
from .rng import substream

EVE_SATURATION = 1e15

# secrecy criterion (ii): fitted log growth rate may undershoot ln(min a_i>1) by this much
SLOPE_MARGIN = 0.05


def fmt17(x: float) -> str:
    """Round-trip decimal formatting so regression fixtures are bitwise stable."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class Scenario:
    """One complete experiment description, deterministic given `seed`."""

    model: SystemModel
    sensors: tuple[SensorModel, ...]
    gamma_bar: np.ndarray
    gamma_bar_eve: np.ndarray
    a: np.ndarray
    delta: np.ndarray
    s: float
    horizon: int
    trials: int
    seed: int
    outcome_override: OutcomeTrace | None = None
    eve_reference_policy: str = "own"  # "own" | "legit-time"
    transparent_quantizer: bool = False
    track_eavesdropper: bool = True
    name: str = ""

    def __post_init__(self):
        m = len(self.sensors)
        for label, arr in (("gamma_bar", self.gamma_bar), ("gamma_bar_eve", self.gamma_bar_eve),
                           ("a", self.a), ("delta", self.delta)):
            v = np.atleast_1d(np.asarray(arr, dtype=float))
            if v.size != m:
                raise ValueError(f"{label} must have one entry per channel ({m})")
            v.setflags(write=False)
            object.__setattr__(self, label, v)
        object.__setattr__(self, "sensors", tuple(self.sensors))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.eve_reference_policy not in ("own", "legit-time"):
            raise ValueError("eve_reference_policy must be 'own' or 'legit-time'")
        if self.outcome_override is not None:
            ov = self.outcome_override
            if ov.n_channels != m or ov.horizon != self.horizon:
                raise ValueError("outcome override must be (M, horizon)")

    @property
    def n_channels(self) -> int:
        return len(self.sensors)

    @property
    def codecs(self) -> list[CodecParams]:
        return [CodecParams(a=float(self.a[i]), delta=float(self.delta[i]), s=float(self.s))
                for i in range(self.n_channels)]


_TANK_GAMMA = (0.9, 0.95, 0.85)
_TANK_GAMMA_EVE = (0.9, 0.85, 0.95)

_A_GROUPS = {
    "A1": (0.5, 0.5, 5.0),
    "A2": (0.5, 5.0, 5.0),
    "A3": (0.5, 0.5, 10.0),
}
_D_GROUPS = {
    "D1": (0.1, 0.1, 0.1),
    "D2": (0.1, 0.01, 0.001),
    "D3": (0.001, 0.001, 0.001),
}


def scenario_preset(name: str, seed: int = 0, horizon: int = 500, trials: int = 200) -> Scenario:
    """Named three-tank experiment groups.

    The a-groups vary the growth bases at delta=0.01, s=1; the delta-groups
    vary the quantization steps at a=(5,5,5), s=1.
    """
    model, sensors = three_tank_preset()
    common = dict(
        model=model, sensors=tuple(sensors),
        gamma_bar=np.array(_TANK_GAMMA), gamma_bar_eve=np.array(_TANK_GAMMA_EVE),
        s=1.0, horizon=horizon, trials=trials, seed=seed, name=name,
    )
    key = name.removeprefix("three-tank-group")
    if key in _A_GROUPS:
        return Scenario(a=np.array(_A_GROUPS[key]), delta=np.full(3, 0.01), **common)
    if key in _D_GROUPS:
        return Scenario(a=np.full(3, 5.0), delta=np.array(_D_GROUPS[key]), **common)
    known = [f"three-tank-group{k}" for k in (*_A_GROUPS, *_D_GROUPS)]
    raise ValueError(f"unknown scenario preset {name!r}; known: {known}")


def scenario_from_dict(cfg: dict) -> Scenario:
    """Build a Scenario from a parsed configuration tree."""
    if "preset" in cfg and "model" not in cfg:
        base = scenario_preset(cfg["preset"],
                               seed=int(cfg.get("seed", 0)),
                               horizon=int(cfg.get("horizon", 500)),
                               trials=int(cfg.get("trials", 200)))
        overrides = {}
        for key in ("s", "eve_reference_policy", "transparent_quantizer", "track_eavesdropper"):
            if key in cfg:
                overrides[key] = cfg[key]
        for key in ("a", "delta", "gamma_bar", "gamma_bar_eve"):
            if key in cfg:
                overrides[key] = np.asarray(cfg[key], dtype=float)
        return replace(base, **overrides) if overrides else base
    model, sensors = from_config(cfg["model"])
    chan = cfg["channel"]
    codec = cfg["codec"]
    override = None
    if "outcome_override" in cfg:
        ov = cfg["outcome_override"]
        override = OutcomeTrace(auth=np.asarray(ov["auth"]), wire=np.asarray(ov["wire"]))
    return Scenario(
        model=model,
        sensors=tuple(sensors),
        gamma_bar=np.asarray(chan["gamma"], dtype=float),
        gamma_bar_eve=np.asarray(chan["gamma_eve"], dtype=float),
        a=np.asarray(codec["a"], dtype=float),
        delta=np.asarray(codec["delta"], dtype=float),
        s=float(codec["s"]),
        horizon=int(cfg["horizon"]),
        trials=int(cfg.get("trials", 1)),
        seed=int(cfg.get("seed", 0)),
        outcome_override=override,
        eve_reference_policy=cfg.get("eve_reference_policy", "own"),
        transparent_quantizer=bool(cfg.get("transparent_quantizer", False)),
        track_eavesdropper=bool(cfg.get("track_eavesdropper", True)),
        name=cfg.get("name", ""),
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def detect_critical_events(trace: OutcomeTrace) -> list[tuple[int, int, bool]]:
    """All (channel, step) pairs with an authorized success and a wiretap miss.

    The worst-case flag marks events after which the wiretap stream is
    all-ones for the rest of the trace.
    """
    events = []
    for i in range(trace.n_channels):
        auth = trace.auth[i]
        wire = trace.wire[i]
        for k in np.nonzero((auth == 1) & (wire == 0))[0]:
            events.append((i, int(k), bool(wire[k + 1:].all())))
    return events


def build_worst_case(n_channels: int, horizon: int, channel: int, k_bar: int) -> OutcomeTrace:
    """Authorized link lossless; wiretap misses exactly (channel, k_bar)."""
    if not 0 <= k_bar < horizon:
        raise ValueError("k_bar must lie in [0, horizon)")
    if not 0 <= channel < n_channels:
        raise ValueError("channel index out of range")
    auth = np.ones((n_channels, horizon), dtype=np.uint8)
    wire = np.ones((n_channels, horizon), dtype=np.uint8)
    wire[channel, k_bar] = 0
    return OutcomeTrace(auth=auth, wire=wire)


@dataclass
class TrialResult:
    """Per-trial error series; eavesdropper entries are NaN once saturated."""

    legit_err: np.ndarray      # (H, d_x) filtered errors x_k - xhat_{k|k}
    pred_err: np.ndarray       # (H, d_x) prediction errors x_k - xhat_{k|k-1}
    eve_err: np.ndarray        # (H, d_x)
    eve_saturated: np.ndarray  # (H,) uint8
    events: list[tuple[int, int, bool]]
    diverged: bool


def run_trial(scenario: Scenario, trial: int) -> TrialResult:
    """One closed pipeline: plant -> encode -> both channels -> decode -> both filters.

    Deterministic in (scenario.seed, trial). Eavesdropper decode overflow or a
    decode error beyond 1e15 marks the trial diverged from that step onward
    instead of raising; divergence is the finding, not a failure.
    """
    model, sensors = scenario.model, list(scenario.sensors)
    h, m = scenario.horizon, scenario.n_channels
    codecs = scenario.codecs
    transparent = scenario.transparent_quantizer

    traj = simulate_plant(model, sensors, h, substream(scenario.seed, "plant", trial))
    if scenario.outcome_override is not None:
        trace = scenario.outcome_override
    else:
        trace = sample_outcomes(
            ChannelModel(scenario.gamma_bar, scenario.gamma_bar_eve),
            h, substream(scenario.seed, "channel", trial))
    quant_rng = substream(scenario.seed, "quantizer", trial)

    enc = [bootstrap_state(s.d_y) for s in sensors]
    dec = [bootstrap_state(s.d_y) for s in sensors]
    eve = [bootstrap_state(s.d_y) for s in sensors]
    legit_decoded = [[None] * m for _ in range(h)]
    eve_decoded = [[None] * m for _ in range(h)]
    q_zero = [[None] * m for _ in range(h)] if transparent else None

    track_eve = scenario.track_eavesdropper
    diverged_at = h
    for k in range(h):
        for i in range(m):
            y = traj.measurements[i][k]
            enc_snapshot = enc[i]
            packet = encode(enc_snapshot, codecs[i], y, k, quant_rng, transparent=transparent)
            if trace.auth[i, k]:
                ybar, dec[i] = decode(dec[i], codecs[i], packet.z, k)
                enc[i] = ack(enc[i], ybar, k)
                legit_decoded[k][i] = ybar
                if q_zero is not None:
                    q_zero[k][i] = np.zeros(sensors[i].d_y)
            if track_eve and k < diverged_at and trace.wire[i, k]:
                try:
                    if scenario.eve_reference_policy == "legit-time":
                        # overheard ACK timing, own reference value
                        hybrid = CodecState(y_ref=eve[i].y_ref, t_ref=enc_snapshot.t_ref,
                                            initialized=eve[i].initialized)
                        ybar_e, eve[i] = eavesdrop_decode(hybrid, codecs[i], packet.z, k)
                    else:
                        ybar_e, eve[i] = eavesdrop_decode(eve[i], codecs[i], packet.z, k)
                except CodecOverflowError:
                    diverged_at = k
                    continue
                err = ybar_e - y
                if not np.isfinite(err).all() or np.abs(err).max() > EVE_SATURATION:
                    diverged_at = k
                else:
                    eve_decoded[k][i] = ybar_e

    x_true = traj.states[:h]
    states = run_filter(model, sensors, codecs, trace.auth, legit_decoded, q_zero)
    pred_err = x_true - np.array([st.x for st in states[0::2]])
    legit_err = x_true - np.array([st.x for st in states[1::2]])

    eve_err = np.full((h, model.d_x), np.nan)
    eve_sat = np.zeros(h, dtype=np.uint8)
    if track_eve:
        he = diverged_at
        if he > 0:
            q_e = None if q_zero is None else q_zero[:he]
            e_states = run_filter(model, sensors, codecs, trace.wire[:, :he],
                                  eve_decoded[:he], q_e)
            est = x_true[:he] - np.array([st.x for st in e_states[1::2]])
            # the filter itself can blow up one step before the decode check trips
            bad = np.nonzero(np.linalg.norm(est, axis=1) > EVE_SATURATION)[0]
            if bad.size:
                he = int(bad[0])
            eve_err[:he] = est[:he]
        eve_sat[he:] = 1
        if he < h:
            diverged_at = he

    return TrialResult(
        legit_err=legit_err,
        pred_err=pred_err,
        eve_err=eve_err,
        eve_saturated=eve_sat,
        events=detect_critical_events(trace),
        diverged=diverged_at < h,
    )


@dataclass
class RunResult:
    """Trial-aggregated metrics, all length-horizon series."""

    mse_legit: np.ndarray          # mean ||x - xhat||^2 over trials
    mse_eve: np.ndarray            # mean over unsaturated trials; +inf when none remain
    eve_saturated: np.ndarray      # 1 where any trial has saturated
    emp_cov: np.ndarray            # (H, d, d) trial-averaged prediction-error outer products
    emp_cov_trace_se: np.ndarray   # standard error of the empirical trace
    eve_mean_err: np.ndarray       # (H, d) mean eavesdropper error over unsaturated trials
    events: list[tuple[int, int, int, bool]]  # (trial, channel, k_bar, worst_case)
    diverged_trials: int
    trials: int
    horizon: int
    bound: BoundSequence | None = None
    bound_trace: np.ndarray | None = None
    scenario_name: str = ""

    @property
    def emp_cov_trace(self) -> np.ndarray:
        return np.einsum("kii->k", self.emp_cov)


def bound_params_for(scenario: Scenario) -> BoundParams:
    """Analysis-side parameters for a scenario; lossless links are capped."""
    return BoundParams(
        A=scenario.model.A,
        qeff=scenario.model.qeff,
        sensors=scenario.sensors,
        gamma_bar=cap_gamma(scenario.gamma_bar, warn=False),
        s=scenario.s,
        delta=scenario.delta,
    )


def compute_bound(scenario: Scenario, recompute: bool = True, tol: float = 1e-10,
                  max_steps: int | None = None) -> tuple[BoundSequence, np.ndarray]:
    """Bound iterates for a scenario plus the length-horizon trace series.

    trace[0] is tr(P0) (the exact step-0 prediction covariance); trace[k]
    for k >= 1 follows the iterates from V_1 = A P0 A^T + Qeff, held at the
    last iterate after convergence. `max_steps` defaults to the horizon; a
    larger budget lets the fixed-point verdict settle past the horizon.
    """
    params = bound_params_for(scenario)
    model = scenario.model
    v1 = model.A @ model.P0 @ model.A.T + model.qeff
    if max_steps is None:
        max_steps = max(scenario.horizon - 1, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        seq = iterate_bound(v1, params, max_steps=max_steps,
                            recompute=recompute, tol=tol)
    traces = seq.trace()
    out = np.empty(scenario.horizon)
    out[0] = float(np.trace(model.P0))
    for k in range(1, scenario.horizon):
        out[k] = traces[min(k - 1, traces.size - 1)]
    return seq, out


def _trial_star(args) -> TrialResult:
    return run_trial(*args)


def run_monte_carlo(scenario: Scenario, workers: int = 1, compute_bound_trace: bool = False,
                    bound_recompute: bool = True) -> RunResult:
    """Trial-parallel execution; the aggregation order is fixed by trial index,
    so results are bitwise independent of the worker count."""
    h, t = scenario.horizon, scenario.trials
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, t // (workers * 4))
            results = list(pool.map(_trial_star, ((scenario, i) for i in range(t)),
                                    chunksize=chunk))
    else:
        results = [run_trial(scenario, i) for i in range(t)]

    legit = np.stack([r.legit_err for r in results])   # (T, H, d)
    pred = np.stack([r.pred_err for r in results])
    eve = np.stack([r.eve_err for r in results])
    sat = np.stack([r.eve_saturated for r in results])  # (T, H)

    mse_legit = np.einsum("thd,thd->h", legit, legit) / t
    emp_cov = np.einsum("thi,thj->hij", pred, pred) / t
    sq = np.einsum("thd,thd->th", pred, pred)
    trace_se = sq.std(axis=0, ddof=1) / math.sqrt(t) if t > 1 else np.zeros(h)

    alive = sat == 0
    n_alive = alive.sum(axis=0)
    eve_sq = np.where(alive, np.einsum("thd,thd->th", np.nan_to_num(eve), np.nan_to_num(eve)), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mse_eve = np.where(n_alive > 0, eve_sq.sum(axis=0) / np.maximum(n_alive, 1), np.inf)
        mean_err = np.where(n_alive[:, None] > 0,
                            np.nan_to_num(eve).sum(axis=0) / np.maximum(n_alive, 1)[:, None],
                            np.nan)
    if not scenario.track_eavesdropper:
        mse_eve = np.full(h, np.nan)
        mean_err = np.full((h, scenario.model.d_x), np.nan)

    events = [(i_trial, ch, k, wc)
              for i_trial, r in enumerate(results)
              for (ch, k, wc) in r.events]

    bound_seq = bound_trace = None
    if compute_bound_trace:
        bound_seq, bound_trace = compute_bound(scenario, recompute=bound_recompute)

    return RunResult(
        mse_legit=mse_legit,
        mse_eve=mse_eve,
        eve_saturated=(sat.any(axis=0)).astype(np.uint8),
        emp_cov=emp_cov,
        emp_cov_trace_se=trace_se,
        eve_mean_err=mean_err,
        events=events,
        diverged_trials=sum(r.diverged for r in results),
        trials=t,
        horizon=h,
        bound=bound_seq,
        bound_trace=bound_trace,
        scenario_name=scenario.name,
    )


def secrecy_report(result: RunResult, scenario: Scenario) -> dict:
    """Empirical check of the two secrecy criteria.

    (i)  the empirical prediction covariance trace stays below the bound
         trace plus 3 standard errors at every step, and the bound is bounded;
    (ii) the eavesdropper mean-error norm grows geometrically at rate at
         least ln(min{a_i > 1}) - 0.05 past the first critical event, or the
         divergence flag tripped.
    """
    if result.bound_trace is None or result.bound is None:
        raise ValueError("result must carry a bound trace (compute_bound_trace=True)")
    emp = result.emp_cov_trace
    slack = 3.0 * result.emp_cov_trace_se
    within = emp <= result.bound_trace + slack
    crit_i = bool(within.all()) and not result.bound.diverged

    growing = [float(a) for a in scenario.a if a > 1.0]
    detail: dict = {
        "criterion_i": crit_i,
        "bound_diverged": bool(result.bound.diverged),
        "max_bound_violation": float((emp - result.bound_trace - slack).max()),
        "diverged_trials": result.diverged_trials,
    }
    if result.diverged_trials > 0:
        crit_ii = True
        detail["criterion_ii_mode"] = "diverged-flag"
        detail["slope"] = None
    elif not growing:
        crit_ii = False
        detail["criterion_ii_mode"] = "no-growth-channel"
        detail["slope"] = None
    else:
        growth_events = [k for (_t, ch, k, _w) in result.events if scenario.a[ch] > 1.0]
        if not growth_events:
            crit_ii = False
            detail["criterion_ii_mode"] = "no-critical-event"
            detail["slope"] = None
        else:
            start = min(growth_events) + 2
            norms = np.linalg.norm(np.nan_to_num(result.eve_mean_err), axis=1)
            ks = np.arange(result.horizon)
            mask = (ks >= start) & np.isfinite(result.mse_eve) & (norms > 0)
            want = math.log(min(growing)) - SLOPE_MARGIN
            if mask.sum() < 4:
                crit_ii = False
                detail["criterion_ii_mode"] = "window-too-short"
                detail["slope"] = None
            else:
                slope = float(np.polyfit(ks[mask], np.log(norms[mask]), 1)[0])
                crit_ii = slope >= want
                detail["criterion_ii_mode"] = "log-linear-fit"
                detail["slope"] = slope
                detail["slope_required"] = want
    detail["criterion_ii"] = crit_ii
    detail["secrecy"] = crit_i and crit_ii
    return detail


def write_mse_csv(result: RunResult, path) -> None:
    """Per-step metrics: k, mse_legit, mse_eve, mse_eve_saturated, trace_emp_cov[, trace_bound]."""
    header = ["k", "mse_legit", "mse_eve", "mse_eve_saturated", "trace_emp_cov"]
    with_bound = result.bound_trace is not None
    if with_bound:
        header.append("trace_bound")
    emp = result.emp_cov_trace
    lines = [",".join(header)]
    for k in range(result.horizon):
        row = [str(k), fmt17(result.mse_legit[k]), fmt17(result.mse_eve[k]),
               str(int(result.eve_saturated[k])), fmt17(emp[k])]
        if with_bound:
            row.append(fmt17(result.bound_trace[k]))
        lines.append(",".join(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_events_csv(result: RunResult, path) -> None:
    """Critical-event log: trial, channel, k_bar, worst_case."""
    lines = ["trial,channel,k_bar,worst_case"]
    for (trial, ch, k, wc) in sorted(result.events):
        lines.append(f"{trial},{ch},{k},{int(wc)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
