"""Boundedness and secrecy analysis: distortion-rate bounds, the modified
algebraic Riccati map over lossy channels, capacity/entropy and PBH solvability
conditions, and the eavesdropper gain floor.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import total_capacity
from .codec import quantize
from .model import SensorModel, psd_factor, symmetrize

GAMMA_CAP = 1.0 - 1e-9
DIVERGENCE_TRACE = 1e12


def cap_gamma(gamma_bar, warn: bool = True) -> np.ndarray:
    """Clip reception probabilities at 1 - 1e-9 for the bound machinery."""
    g = np.atleast_1d(np.asarray(gamma_bar, dtype=float))
    if np.any(g > GAMMA_CAP):
        if warn:
            warnings.warn(
                "reception probabilities at 1 capped to 1-1e-9 for the bound analysis",
                stacklevel=2,
            )
        g = np.minimum(g, GAMMA_CAP)
    return g


@dataclass(frozen=True)
class BoundParams:
    """Inputs of the covariance-bound iteration.

    `delta` holds the codec quantization steps (used when distortion rates are
    refreshed from the running iterate); `distortion_rates`/`eta` hold fixed distortion
    rates and split scalars for the fixed-parameter mode.
    """

    A: np.ndarray
    qeff: np.ndarray
    sensors: tuple[SensorModel, ...]
    gamma_bar: np.ndarray
    s: float
    delta: np.ndarray | None = None
    distortion_rates: np.ndarray | None = None
    eta: np.ndarray | None = None

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gamma_bar, dtype=float))
        if np.any(g <= 0.0) or np.any(g > GAMMA_CAP):
            raise ValueError("gamma_bar entries must lie in (0, 1-1e-9]; cap lossless links first")
        if g.size != len(self.sensors):
            raise ValueError("need one reception probability per sensor")
        if self.s == 0.0:
            raise ValueError("scale s must be nonzero")
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "qeff", symmetrize(np.asarray(self.qeff, dtype=float)))
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "gamma_bar", g)
        if self.delta is not None:
            object.__setattr__(self, "delta", np.atleast_1d(np.asarray(self.delta, dtype=float)))
        if self.distortion_rates is not None:
            dn = np.atleast_1d(np.asarray(self.distortion_rates, dtype=float))
            if np.any(dn <= 0.0) or np.any(dn >= 1.0):
                raise ValueError("distortion rates must lie in (0, 1)")
            object.__setattr__(self, "distortion_rates", dn)
        if self.eta is not None:
            et = np.atleast_1d(np.asarray(self.eta, dtype=float))
            if np.any(et <= 0.0):
                raise ValueError("eta scalars must be positive")
            object.__setattr__(self, "eta", et)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.d_y for s in self.sensors)


@dataclass
class BoundSequence:
    """Iterates of the covariance bound with their convergence verdict."""

    iterates: list[np.ndarray]
    converged: bool
    diverged: bool
    fixed_point: np.ndarray | None
    w_history: list[float] = field(default_factory=list)
    degenerate_steps: int = 0

    def trace(self) -> np.ndarray:
        return np.array([float(np.trace(v)) for v in self.iterates])


def default_distortion_rate(sensor: SensorModel, sigma: np.ndarray, delta: float, s: float) -> float:
    """Conservative rate d with s^2 E[ee^T] <= d (C Sigma C^T + R), from Var(e) <= delta^2/4."""
    m = sensor.C @ symmetrize(np.asarray(sigma, dtype=float)) @ sensor.C.T + sensor.r_eff
    lam = float(np.linalg.eigvalsh(m)[0])
    if lam <= 0.0:
        raise ValueError("innovation covariance must be positive definite")
    return min(1.0 - 1e-6, (s * s) * (delta * delta / 4.0) / lam)


def default_eta(rate: float, s: float) -> float:
    """Minimizer of |s| eta + rate / (|s| eta) over eta > 0."""
    if rate <= 0.0:
        raise ValueError("distortion rate must be positive")
    return math.sqrt(rate) / abs(s)


def stack_sensors(sensors) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    """Row-stacked C, block-diagonal effective R, and per-channel output dimensions."""
    dims = tuple(s.d_y for s in sensors)
    c = np.vstack([s.C for s in sensors])
    n = sum(dims)
    r = np.zeros((n, n))
    pos = 0
    for s in sensors:
        r[pos:pos + s.d_y, pos:pos + s.d_y] = s.r_eff
        pos += s.d_y
    return c, r, dims


def _expand(values, dims) -> np.ndarray:
    return np.concatenate([np.full(m, v) for v, m in zip(values, dims)])


def _inflation_diag(distortion_rates: np.ndarray, eta, s: float, dims) -> np.ndarray:
    s_abs = abs(s)
    if eta is None:
        eta = np.array([default_eta(d, s) for d in distortion_rates])
    else:
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
    blocks = np.sqrt(s * s * distortion_rates + s_abs * eta + distortion_rates / (s_abs * eta))
    return np.diag(_expand(blocks, dims))


def noise_inflation_matrix(params: BoundParams, distortion_rates=None, eta=None) -> np.ndarray:
    """Block-diagonal inflation with entries sqrt(s^2 d + |s| eta + d/(|s| eta)).

    With the default eta = sqrt(d)/|s| the last two terms collapse to
    2 sqrt(d), the tightest value of this family.
    """
    if distortion_rates is None:
        distortion_rates = params.distortion_rates
    dn = np.atleast_1d(np.asarray(distortion_rates, dtype=float))
    if dn.size != len(params.sensors):
        raise ValueError("need one distortion rate per channel")
    et = eta if eta is not None else params.eta
    return _inflation_diag(dn, et, params.s, params.dims)


def retention_scalar(sigma_minus, c_stack, r_block, v_mat, warn: bool = True) -> float:
    """sqrt(lambda_min(S - V S V) / lambda_max(S)) for the stacked innovation
    covariance S and the inflation matrix V.

    Degenerates to 0 (with a warning) when S - V S V is indefinite, i.e. the
    encoding noise overwhelms the innovation and the bound falls back to the
    prediction-only recursion.
    """
    s_mat = symmetrize(c_stack @ symmetrize(np.asarray(sigma_minus, dtype=float)) @ c_stack.T + r_block)
    eig_s = np.linalg.eigvalsh(s_mat)
    if eig_s[0] <= 0.0:
        raise ValueError("stacked innovation covariance is singular")
    diff = symmetrize(s_mat - v_mat @ s_mat @ v_mat)
    lam = float(np.linalg.eigvalsh(diff)[0])
    if lam < 0.0:
        if warn:
            warnings.warn(
                "S - V S V is indefinite; information-retention scalar degenerates to 0",
                stacklevel=2,
            )
        return 0.0
    return math.sqrt(lam / float(eig_s[-1]))


def hadamard_weight(gamma_bar, dims) -> np.ndarray:
    """Bernoulli second-moment weight: cross-channel blocks 1, own blocks 1/gamma_i."""
    g = np.atleast_1d(np.asarray(gamma_bar, dtype=float))
    n = sum(dims)
    w = np.ones((n, n))
    pos = 0
    for gi, m in zip(g, dims):
        w[pos:pos + m, pos:pos + m] = 1.0 / gi
        pos += m
    return w


def _r_inv_sqrt(r: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(symmetrize(r))
    if w[0] <= 0.0:
        raise ValueError("R must be positive definite")
    return (u / np.sqrt(w)) @ u.T


def whitened_stack(sensors, w: float) -> np.ndarray:
    """Stack of R_i^{-1/2} C_i scaled by the retention scalar w."""
    return np.vstack([_r_inv_sqrt(s.r_eff) @ s.C for s in sensors]) * w


def riccati_map(x: np.ndarray, params: BoundParams, w: float) -> np.ndarray:
    """One application of the lossy-channel Riccati map.

    Maps X to A X A^T + Q - A X H^T [M ∘ (H X H^T + I)]^{-1} H X A^T, with H
    the whitened measurement stack and M the channel-wise Hadamard weight
    accounting for Bernoulli reception.
    """
    x = symmetrize(np.asarray(x, dtype=float))
    a = params.A
    h = whitened_stack(params.sensors, w)
    n = h.shape[0]
    inner = hadamard_weight(params.gamma_bar, params.dims) * (h @ x @ h.T + np.eye(n))
    t1 = a @ x @ h.T
    try:
        gain_term = t1 @ np.linalg.solve(inner, t1.T)
    except np.linalg.LinAlgError:
        raise ValueError("inner Hadamard-weighted matrix is singular") from None
    return symmetrize(a @ x @ a.T + params.qeff - gain_term)


def iterate_bound(
    v1: np.ndarray,
    params: BoundParams,
    max_steps: int,
    recompute: bool = True,
    tol: float = 1e-10,
    divergence_trace: float = DIVERGENCE_TRACE,
) -> BoundSequence:
    """Iterate the Riccati map from V_1 (caller-supplied, >= the first prediction covariance).

    With `recompute`, the distortion rates and the retention scalar w are
    refreshed from the running iterate (which stands in for the prediction
    covariance they reference); otherwise the fixed distortion_rates/eta of `params`
    are used and w is frozen at its V_1 value. Convergence is declared at
    relative Frobenius change < tol, divergence at trace > divergence_trace.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    c_stack, r_block, _ = stack_sensors(params.sensors)
    if recompute and params.delta is None:
        raise ValueError("recompute mode needs the codec quantization steps in params.delta")
    if not recompute and params.distortion_rates is None:
        raise ValueError("fixed mode needs distortion rates in params.distortion_rates")

    def step_w(v):
        if recompute:
            dn = np.array([
                default_distortion_rate(s, v, d, params.s)
                for s, d in zip(params.sensors, params.delta)
            ])
            vm = noise_inflation_matrix(params, distortion_rates=dn)
        else:
            vm = noise_inflation_matrix(params)
        return retention_scalar(v, c_stack, r_block, vm, warn=False)

    current = symmetrize(np.asarray(v1, dtype=float))
    iterates = [current]
    w_hist: list[float] = []
    degenerate = 0
    converged = False
    diverged = False
    frozen_w = None if recompute else step_w(current)
    for _ in range(max_steps - 1):
        w = step_w(current) if recompute else frozen_w
        if w == 0.0:
            degenerate += 1
        w_hist.append(w)
        nxt = riccati_map(current, params, w)
        iterates.append(nxt)
        rel = np.linalg.norm(nxt - current, "fro") / max(1.0, np.linalg.norm(current, "fro"))
        current = nxt
        if float(np.trace(current)) > divergence_trace:
            diverged = True
            break
        if rel < tol:
            converged = True
            break
    if degenerate:
        warnings.warn(
            f"information-retention scalar degenerated to 0 on {degenerate} bound steps "
            "(prediction-only recursion)",
            stacklevel=2,
        )
    return BoundSequence(
        iterates=iterates,
        converged=converged,
        diverged=diverged,
        fixed_point=iterates[-1] if converged else None,
        w_history=w_hist,
        degenerate_steps=degenerate,
    )


def mahler_entropy(a: np.ndarray) -> tuple[float, float]:
    """Product of eigenvalue magnitudes clipped below at 1, and its logarithm."""
    ev = np.linalg.eigvals(np.asarray(a, dtype=float))
    m = float(np.prod(np.maximum(np.abs(ev), 1.0)))
    return m, math.log(m)


def capacity_condition(a: np.ndarray, gamma_bar) -> dict:
    """Compare the summed channel capacity against the plant's instability entropy."""
    per_channel = [float(-0.5 * math.log1p(-g)) if g < 1.0 else math.inf
                   for g in np.atleast_1d(gamma_bar)]
    cap = total_capacity(gamma_bar)
    mahler, entropy = mahler_entropy(a)
    return {
        "per_channel_capacity": per_channel,
        "total_capacity": cap,
        "mahler_measure": mahler,
        "entropy": entropy,
        "satisfied": bool(cap > entropy),
    }


def pbh_unit_circle(a: np.ndarray, qeff: np.ndarray,
                    eig_tol: float = 1e-8, rank_rtol: float = 1e-10) -> dict:
    """Rank test of [A - lambda I, B] at unit-circle eigenvalues, B B^T = qeff.

    Rank can only drop at eigenvalues of A, so checking the finitely many
    unit-circle eigenvalues settles the all-frequency condition.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    b = psd_factor(qeff)
    eigs = np.linalg.eigvals(a)
    unit = [complex(l) for l in eigs if abs(abs(l) - 1.0) < eig_tol]
    failures = []
    for lam in unit:
        block = np.hstack([a - lam * np.eye(d), b.astype(complex)])
        sv = np.linalg.svd(block, compute_uv=False)
        rank = int(np.sum(sv > rank_rtol * sv[0])) if sv[0] > 0.0 else 0
        if rank < d:
            failures.append(lam)
    return {
        "unit_circle_eigenvalues": unit,
        "failures": failures,
        "passed": not failures,
    }


def check_stability_inequality(
    a: np.ndarray,
    sigma_breve: np.ndarray,
    gain: np.ndarray,
    gamma_bar,
    dims,
    h: np.ndarray,
) -> tuple[bool, float]:
    """Verify a candidate (Sigma, K) for the strict stability inequality.

    Evaluates Sigma - (A - K Gam H) Sigma (A - K Gam H)^T
    - K [diag{gam(1-gam) 1 1^T} ∘ (H Sigma H^T)] K^T and reports whether its
    minimum eigenvalue is positive (strict feasibility) plus that margin.
    Verification only; no synthesis is attempted.
    """
    g = np.atleast_1d(np.asarray(gamma_bar, dtype=float))
    sigma = symmetrize(np.asarray(sigma_breve, dtype=float))
    n = sum(dims)
    gam_diag = np.diag(_expand(g, dims))
    mask = np.zeros((n, n))
    pos = 0
    for gi, m in zip(g, dims):
        mask[pos:pos + m, pos:pos + m] = gi * (1.0 - gi)
        pos += m
    closed = a - gain @ gam_diag @ h
    rhs = closed @ sigma @ closed.T + gain @ (mask * (h @ sigma @ h.T)) @ gain.T
    margin = float(np.linalg.eigvalsh(symmetrize(sigma - rhs))[0])
    return margin > 0.0, margin


def gain_floor(qeff: np.ndarray, c_stack: np.ndarray, p_eve: np.ndarray,
               r_block: np.ndarray) -> tuple[float, float]:
    """Gain floor kappa with (K_e)^T K_e >= kappa I, and the verification margin.

    kappa = lambda_min(Q)^2 lambda_min(C^T C) / lambda_max(C P C^T + R)^2;
    a singular Q makes the floor vacuous (kappa = 0, with a warning).
    """
    if c_stack.size == 0 or not np.any(c_stack):
        raise ValueError("measurement stack must be nonzero")
    p_eve = symmetrize(np.asarray(p_eve, dtype=float))
    s_mat = symmetrize(c_stack @ p_eve @ c_stack.T + r_block)
    eig_s = np.linalg.eigvalsh(s_mat)
    if eig_s[0] <= 0.0:
        raise ValueError("innovation covariance must be positive definite")
    lam_q = float(np.linalg.eigvalsh(symmetrize(qeff))[0])
    if lam_q <= 0.0:
        warnings.warn("lambda_min(Q) <= 0: gain floor is vacuous (kappa = 0)", stacklevel=2)
        kappa = 0.0
    else:
        lam_c = max(0.0, float(np.linalg.eigvalsh(symmetrize(c_stack.T @ c_stack))[0]))
        kappa = lam_q ** 2 * lam_c / float(eig_s[-1]) ** 2
    k_gain = np.linalg.solve(s_mat, c_stack @ p_eve).T
    margin = float(np.linalg.eigvalsh(
        symmetrize(k_gain.T @ k_gain) - kappa * np.eye(s_mat.shape[0]))[0])
    return kappa, margin


@dataclass(frozen=True)
class NoiseDominationReport:
    """Monte Carlo verdict on the two encoding-noise dominations."""

    ok_blockwise: bool
    ok_stacked: bool
    margin_blockwise: float
    margin_stacked: float
    slack: float

    @property
    def ok(self) -> bool:
        return self.ok_blockwise and self.ok_stacked


def noise_domination_check(
    sigma_minus: np.ndarray,
    sensors,
    codecs,
    outcomes,
    n_samples: int,
    rng: np.random.Generator,
    distortion_rates=None,
    eta=None,
) -> NoiseDominationReport:
    """Estimate Rdec + s E[v e^T + e v^T] through the actual encoder and check
    both dominations (blockwise middle term, and V S V) within 3-standard-error slack.

    Pairs (v, e) are drawn at the prediction point: x ~ N(0, Sigma^-),
    v_i ~ N(0, R_i), the innovation C_i x + v_i is scaled by 1/s and quantized
    from the bootstrap reference.
    """
    if n_samples < 10_000:
        raise ValueError("need at least 1e4 samples")
    sensors = list(sensors)
    codecs = list(codecs)
    gam = np.atleast_1d(np.asarray(outcomes, dtype=float))
    sigma = symmetrize(np.asarray(sigma_minus, dtype=float))
    s = codecs[0].s
    if any(c.s != s for c in codecs):
        raise ValueError("all channels must share the scale s")
    dims = tuple(sn.d_y for sn in sensors)
    n = sum(dims)

    fx = psd_factor(sigma)
    x = (fx @ rng.standard_normal((fx.shape[1], n_samples))).T
    v_cols, e_cols = [], []
    for sn, cd in zip(sensors, codecs):
        v = (psd_factor(sn.R) @ rng.standard_normal((sn.d_v, n_samples))).T
        y = x @ sn.C.T + v @ sn.E.T
        zbar = y / cd.s
        e = quantize(zbar, cd.delta, rng) - zbar
        v_cols.append(y - x @ sn.C.T)  # measurement-noise part E v
        e_cols.append(e)
    v_all = np.hstack([gam[i] * v_cols[i] for i in range(len(sensors))])
    e_all = np.hstack([gam[i] * e_cols[i] for i in range(len(sensors))])

    # per-sample symmetric contribution, then mean and entrywise standard error
    contrib = (s * s) * np.einsum("ti,tj->tij", e_all, e_all)
    cross = np.einsum("ti,tj->tij", v_all, e_all)
    contrib += s * (cross + np.transpose(cross, (0, 2, 1)))
    lhs = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / math.sqrt(n_samples)
    slack = 3.0 * float(np.linalg.norm(se, 2))

    s_abs = abs(s)
    dn_all = np.array([
        default_distortion_rate(sn, sigma, codecs[i].delta, s)
        if distortion_rates is None else float(np.atleast_1d(distortion_rates)[i])
        for i, sn in enumerate(sensors)
    ])
    eta_all = (np.array([default_eta(d, s) for d in dn_all])
               if eta is None else np.atleast_1d(np.asarray(eta, dtype=float)))
    mid = np.zeros((n, n))
    pos = 0
    for i, sn in enumerate(sensors):
        m = sn.d_y
        coef = gam[i] ** 2 * (s * s * dn_all[i] + s_abs * eta_all[i]
                              + dn_all[i] / (s_abs * eta_all[i]))
        mid[pos:pos + m, pos:pos + m] = coef * (sn.C @ sigma @ sn.C.T + sn.r_eff)
        pos += m

    c_gam = np.vstack([gam[i] * sensors[i].C for i in range(len(sensors))])
    r_gam = np.zeros((n, n))
    pos = 0
    for i, sn in enumerate(sensors):
        m = sn.d_y
        r_gam[pos:pos + m, pos:pos + m] = gam[i] ** 2 * sn.r_eff
        pos += m
    v_mat = _inflation_diag(dn_all, eta_all, s, dims)
    right = v_mat @ symmetrize(c_gam @ sigma @ c_gam.T + r_gam) @ v_mat

    margin_mid = float(np.linalg.eigvalsh(symmetrize(mid - lhs))[0])
    margin_right = float(np.linalg.eigvalsh(symmetrize(right - lhs))[0])
    return NoiseDominationReport(
        ok_blockwise=margin_mid > -slack,
        ok_stacked=margin_right > -slack,
        margin_blockwise=margin_mid,
        margin_stacked=margin_right,
        slack=slack,
    )
