"""Per-slot clustering optimizer.

The binary association problem is relaxed to the unit box with a
concave-minus-convex penalty pushing entries back to {0, 1}. The
energy-efficiency ratio is handled by the quadratic transform with a
closed-form auxiliary update; the rate terms are majorized by proximal
linearizations whose curvature weight doubles whenever the true
objective regresses, restoring the ascent property. The inner concave
subproblem is solved by projected gradient ascent with Armijo
backtracking, and the final relaxed point is thresholded with a
service-floor repair (every UE keeps its best-estimate AP).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .phy import SlotContext, fbl_rate_and_slope

_EPS_GRAD = 1e-9  # floor under sqrt(a) in derivative denominators only


@dataclass(frozen=True)
class SolverParams:
    """Knobs of the per-slot solve."""

    V: float = 5.0  # EE weight against queue pressure
    rho_pen: float = 1.0  # binary-penalty weight
    J_max: int = 20  # outer iterations
    eps_sca: float = 1e-3  # relative surrogate-improvement stop
    mu0: float = 1.0  # initial proximal curvature
    inner_iters: int = 200  # projected-gradient iteration cap
    inner_tol: float = 1e-4  # gradient-map norm stop
    delta_smooth: float = 1e-6  # power-sharing smoothing
    transform_B: float = 1.0  # bandwidth constant inside the EE transform
    multi_start: int = 3  # relaxed solves per slot (1 = given warm start only)
    mu_max: float = 1e12
    armijo_c: float = 1e-4

    def __post_init__(self):
        if self.V <= 0:
            raise ValueError("EE weight must be positive")
        if self.rho_pen < 0:
            raise ValueError("penalty weight must be nonnegative")
        if self.J_max < 1:
            raise ValueError("need at least one outer iteration")
        if min(self.eps_sca, self.mu0, self.inner_tol, self.delta_smooth, self.transform_B) <= 0:
            raise ValueError("tolerances and constants must be positive")


@dataclass(frozen=True)
class RelaxedCluster:
    """Box-relaxed association matrix."""

    a: np.ndarray  # (K, L) in [0, 1]

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if np.any(a < -1e-12) or np.any(a > 1.0 + 1e-12):
            raise ValueError("relaxed association must stay in the unit box")
        object.__setattr__(self, "a", np.clip(a, 0.0, 1.0))


def relaxed_eta(X: np.ndarray, delta_smooth: float) -> np.ndarray:
    """Smooth power sharing a / (column sum + delta).

    Coincides with the hard equal split up to O(delta) at binary points
    and gates each share by its own association weight.
    """
    a = np.asarray(X, dtype=float)
    return a / (a.sum(axis=0) + delta_smooth)


def _relaxed_rates_value(ctx: SlotContext, a: np.ndarray, sp: SolverParams):
    """Rates/SINRs of the relaxed pipeline, value-only (no gradients)."""
    delta = sp.delta_smooth
    cl = a.sum(axis=0)
    dn = cl + delta
    se = np.sqrt(a) / np.sqrt(dn)
    sG = ctx.sqrt_gamma if ctx.contamination == "standard" else ctx.sqrt_beta
    s = (se * ctx.sqrt_gamma).sum(axis=1)
    I1 = ctx.bmg @ (cl / dn)
    T = sG @ se.T
    Tm = np.where(ctx.contaminates, T, 0.0)
    nmt = ctx.N - ctx.tau_p
    D = ctx.rho_d * I1 + ctx.rho_d * nmt * (Tm**2).sum(axis=1) + 1.0
    g = ctx.rho_d * nmt * s**2 / D
    rates, _ = fbl_rate_and_slope(g, ctx.fbl)
    return rates, g


def rate_value_and_gradients(ctx: SlotContext, a: np.ndarray, sp: SolverParams, cliff_safe: bool = False):
    """Relaxed rates plus analytic gradients dR[k, i, l] = d rate_k / d a[i, l].

    With `cliff_safe` the slopes of the factors that saturate within
    O(delta) of an empty column (square-root power shares, activation
    steps) are evaluated no closer to the cliff than unit occupancy,
    where the relaxation is smooth; the tangents there are numerically
    degenerate (up to 1/delta) and stall any step-size control built on
    them. Values are untouched. The exact flavor (default) matches
    finite differences in the interior and is what gradient checks use.
    """
    delta = sp.delta_smooth
    K, L = a.shape
    cl = a.sum(axis=0)
    dn = cl + delta
    sd = np.sqrt(dn)
    sa = np.sqrt(a)
    se = sa / sd
    sg = ctx.sqrt_gamma
    sG = sg if ctx.contamination == "standard" else ctx.sqrt_beta
    s = (se * sg).sum(axis=1)
    I1 = ctx.bmg @ (cl / dn)
    T = sG @ se.T
    Tm = np.where(ctx.contaminates, T, 0.0)
    nmt = ctx.N - ctx.tau_p
    rho = ctx.rho_d
    D = rho * I1 + rho * nmt * (Tm**2).sum(axis=1) + 1.0
    g = rho * nmt * s**2 / D
    rates, slope = fbl_rate_and_slope(g, ctx.fbl)

    if cliff_safe:
        dn_s = np.maximum(dn, 1.0)
        h1 = 1.0 / (2.0 * np.sqrt(np.maximum(a, 0.25)) * np.sqrt(dn_s))
        h2 = -sa / (2.0 * dn_s**1.5)
        dI1 = ctx.bmg * (delta / dn_s**2)
    else:
        h1 = 1.0 / (2.0 * np.sqrt(np.maximum(a, _EPS_GRAD)) * sd)
        h2 = -sa / (2.0 * dn**1.5)
        dI1 = ctx.bmg * (delta / dn**2)

    ds = np.broadcast_to((sg * h2)[:, None, :], (K, K, L)).copy()
    idx = np.arange(K)
    ds[idx, idx, :] += sg * h1

    A1 = Tm @ h2
    dI2 = 2.0 * ((sG * A1)[:, None, :] + np.einsum("ki,il->kil", Tm, h1) * sG[:, None, :])
    dD = rho * dI1[:, None, :] + rho * nmt * dI2
    dg = (2.0 * rho * nmt * s / D)[:, None, None] * ds - (g / D)[:, None, None] * dD
    dR = slope[:, None, None] * dg
    return rates, dR, g


def relaxed_power(ctx: SlotContext, a: np.ndarray, delta_smooth: float) -> float:
    """Network power with the smooth share in the amplifier term."""
    cl = a.sum(axis=0)
    dn = cl + delta_smooth
    tx = (ctx.power.rho_d_watts / ctx.alpha_ap) * (cl / dn)
    return float(tx.sum() + ctx.power.P_link * cl.sum() + ctx.power.P_cir * cl.size + ctx.power.P_edu)


def relaxed_power_grad(ctx: SlotContext, a: np.ndarray, delta_smooth: float) -> np.ndarray:
    """(L,) column gradient of the relaxed power (same for every UE row)."""
    dn = a.sum(axis=0) + delta_smooth
    return (ctx.power.rho_d_watts / ctx.alpha_ap) * (delta_smooth / dn**2) + ctx.power.P_link


def optimal_y(r_sum: float, p_tot: float, V: float, B: float) -> float:
    """Closed-form auxiliary variable of the quadratic transform."""
    if p_tot <= 0:
        raise ValueError("total power must be positive")
    return math.sqrt(V * B * max(r_sum, 0.0)) / p_tot


def relaxed_objective(ctx: SlotContext, a: np.ndarray, y: float, theta: np.ndarray, sp: SolverParams) -> float:
    """Transformed relaxed objective at fixed auxiliary variable."""
    rates, _ = _relaxed_rates_value(ctx, a, sp)
    r_sum = float(rates.sum())
    p_tot = relaxed_power(ctx, a, sp.delta_smooth)
    pen = sp.rho_pen * float(np.sum(a - a * a))
    return 2.0 * y * math.sqrt(sp.V * sp.transform_B * r_sum) - y * y * p_tot + float(theta @ rates) - pen


def relaxed_objective_grad(ctx: SlotContext, a: np.ndarray, y: float, theta: np.ndarray, sp: SolverParams):
    """Value and analytic gradient of the relaxed objective."""
    rates, dR, _ = rate_value_and_gradients(ctx, a, sp)
    r_sum = float(rates.sum())
    p_tot = relaxed_power(ctx, a, sp.delta_smooth)
    gP = relaxed_power_grad(ctx, a, sp.delta_smooth)
    pen = sp.rho_pen * float(np.sum(a - a * a))
    val = 2.0 * y * math.sqrt(sp.V * sp.transform_B * r_sum) - y * y * p_tot + float(theta @ rates) - pen

    gsum = dR.sum(axis=0)
    vb = sp.V * sp.transform_B
    if r_sum > 0:
        gtr = (y * vb / math.sqrt(vb * r_sum)) * gsum
    else:
        gtr = np.zeros_like(a)
    grad = gtr - y * y * gP[None, :] + np.einsum("k,kil->il", theta, dR) - sp.rho_pen * (1.0 - 2.0 * a)
    return val, grad


class Surrogate:
    """Concave model of the relaxed objective anchored at one iterate.

    Each rate is replaced by a first-order expansion minus a proximal
    quadratic, the binary penalty's convex part is linearized (a global
    underestimate of the penalty's negative), and power enters through a
    linear model tight at the anchor. Slopes of the cliff factors are
    evaluated at the unit-occupancy floor (see `rate_value_and_gradients`);
    pure tangents remain available for diagnostics. Ascent of the true
    objective is enforced from outside by escalating the proximal weight
    whenever a step regresses.
    """

    def __init__(
        self,
        ctx: SlotContext,
        anchor: np.ndarray,
        y: float,
        mu: float,
        theta: np.ndarray,
        sp: SolverParams,
        cliff_safe: bool = True,
    ):
        self.ctx = ctx
        self.anchor = anchor
        self.y = y
        self.mu = mu
        self.theta = theta
        self.sp = sp
        rates0, dR0, _ = rate_value_and_gradients(ctx, anchor, sp, cliff_safe=cliff_safe)
        self.rates0 = rates0
        self.dR0 = dR0
        self.Gsum = dR0.sum(axis=0)
        self.Gtheta = np.einsum("k,kil->il", theta, dR0)
        self.theta_sum = float(theta.sum())
        self.K = anchor.shape[0]
        self.vb = sp.V * sp.transform_B
        # linear power model: exact value at the anchor, unit-move slopes
        self.p0 = relaxed_power(ctx, anchor, sp.delta_smooth)
        self.c0 = anchor.sum(axis=0)
        cl = np.maximum(self.c0, 1.0) if cliff_safe else self.c0
        act = sp.delta_smooth / (cl + sp.delta_smooth) ** 2
        self.p_slope = (ctx.power.rho_d_watts / ctx.alpha_ap) * act + ctx.power.P_link

    def _power(self, X: np.ndarray) -> float:
        return self.p0 + float(self.p_slope @ (X.sum(axis=0) - self.c0))

    def rate_bounds(self, X: np.ndarray) -> np.ndarray:
        """Per-UE proximal rate models at X."""
        dX = X - self.anchor
        q = float(np.sum(dX * dX))
        return self.rates0 + np.einsum("kil,il->k", self.dR0, dX) - 0.5 * self.mu * q

    def value(self, X: np.ndarray) -> float:
        rt = self.rate_bounds(X)
        r_sum = float(rt.sum())
        tr = 2.0 * self.y * math.sqrt(self.vb * max(r_sum, 0.0))
        dX = X - self.anchor
        pen = self.sp.rho_pen * float(np.sum(X - (self.anchor**2 + 2.0 * self.anchor * dX)))
        return tr - self.y**2 * self._power(X) + float(self.theta @ rt) - pen

    def value_grad(self, X: np.ndarray):
        dX = X - self.anchor
        q = float(np.sum(dX * dX))
        rt = self.rates0 + np.einsum("kil,il->k", self.dR0, dX) - 0.5 * self.mu * q
        r_sum = float(rt.sum())
        gR = self.Gsum - self.K * self.mu * dX
        if r_sum > 0:
            tr = 2.0 * self.y * math.sqrt(self.vb * r_sum)
            gtr = (self.y * self.vb / math.sqrt(self.vb * r_sum)) * gR
        else:
            tr = 0.0
            gtr = np.zeros_like(X)
        pen = self.sp.rho_pen * float(np.sum(X - (self.anchor**2 + 2.0 * self.anchor * dX)))
        val = tr - self.y**2 * self._power(X) + float(self.theta @ rt) - pen
        grad = (
            gtr
            - self.y**2 * self.p_slope[None, :]
            + self.Gtheta
            - self.theta_sum * self.mu * dX
            - self.sp.rho_pen * (1.0 - 2.0 * self.anchor)
        )
        return val, grad


def inner_maximize(surrogate, X_init: np.ndarray, sp: SolverParams) -> np.ndarray:
    """Projected gradient ascent on the unit box with Armijo backtracking.

    Stops on a small unit-step gradient map or the iteration cap; the
    returned point never scores below the start.
    """
    X = np.clip(np.asarray(X_init, dtype=float), 0.0, 1.0)
    val, grad = surrogate.value_grad(X)
    best_X, best_val = X, val
    s_prev = 1.0
    for _ in range(sp.inner_iters):
        gmap = np.clip(X + grad, 0.0, 1.0) - X
        if np.linalg.norm(gmap) <= sp.inner_tol:
            break
        ginf = float(np.max(np.abs(grad)))
        s = min(2.0 * s_prev, 1.0 / max(ginf, 1.0))
        accepted = False
        for _ in range(60):
            Xn = np.clip(X + s * grad, 0.0, 1.0)
            step = Xn - X
            if not step.any():
                break
            fn = surrogate.value(Xn)
            if fn >= val + sp.armijo_c * float(np.vdot(grad, step)):
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        s_prev = s
        X = Xn
        val, grad = surrogate.value_grad(X)
        if val > best_val:
            best_X, best_val = X, val
    return best_X


def _maximize_surrogate(sur: "Surrogate", X_init: np.ndarray, sp: SolverParams) -> np.ndarray:
    """Maximize the surrogate by iteratively reweighted closed-form steps.

    With the square-root transform term linearized at the current point,
    the rest of the surrogate is a diagonal concave quadratic around the
    anchor, so each round is one vectorized exact update; the transform
    weight is then refreshed. Returns the best iterate by surrogate
    value, never worse than the start.
    """
    X = np.clip(np.asarray(X_init, dtype=float), 0.0, 1.0)
    best_X, best_v = X, sur.value(X)
    lin_base = sur.Gtheta - sur.y**2 * sur.p_slope[None, :] - sp.rho_pen * (1.0 - 2.0 * sur.anchor)
    for _ in range(sp.inner_iters):
        S = float(sur.rate_bounds(X).sum())
        w = 0.0 if (sur.y == 0.0 or S <= 0.0) else sur.y * sur.vb / math.sqrt(sur.vb * S)
        num = w * sur.Gsum + lin_base
        denom = sur.mu * (w * sur.K + sur.theta_sum)
        if denom < 1e-12:
            Xn = np.where(num > 0.0, 1.0, np.where(num < 0.0, 0.0, X))
        else:
            Xn = np.clip(sur.anchor + num / denom, 0.0, 1.0)
        moved = float(np.max(np.abs(Xn - X)))
        X = Xn
        v = sur.value(X)
        if v > best_v:
            best_X, best_v = X, v
        if moved < 1e-10:
            break
    return best_X


def warm_start_nearest(gamma: np.ndarray) -> np.ndarray:
    """Single association with the best-estimate AP per UE."""
    X = np.zeros_like(np.asarray(gamma, dtype=float))
    X[np.arange(X.shape[0]), np.argmax(gamma, axis=1)] = 1.0
    return X


def sca_solve(ctx: SlotContext, theta: np.ndarray, sp: SolverParams, X_warm: np.ndarray):
    """Alternating auxiliary/association ascent on the relaxed problem.

    Each outer iteration refreshes the auxiliary variable in closed
    form, then maximizes the proximal surrogate anchored at the current
    point. If the true relaxed objective regresses, the proximal weight
    doubles and the step is recomputed, which keeps the recorded
    objective trace nondecreasing (within 1e-9).
    """
    X = np.clip(np.asarray(X_warm, dtype=float), 0.0, 1.0)
    mu = sp.mu0
    escalations = 0
    rates, _ = _relaxed_rates_value(ctx, X, sp)
    y = optimal_y(float(rates.sum()), relaxed_power(ctx, X, sp.delta_smooth), sp.V, sp.transform_B)
    trace = [relaxed_objective(ctx, X, y, theta, sp)]
    iters = 0
    for _ in range(sp.J_max):
        iters += 1
        rates, _ = _relaxed_rates_value(ctx, X, sp)
        y = optimal_y(float(rates.sum()), relaxed_power(ctx, X, sp.delta_smooth), sp.V, sp.transform_B)
        f0 = relaxed_objective(ctx, X, y, theta, sp)
        clean = True
        escalations_this = 0
        while True:
            sur = Surrogate(ctx, X, y, mu, theta, sp)
            Xn = _maximize_surrogate(sur, X, sp)
            fn = relaxed_objective(ctx, Xn, y, theta, sp)
            if fn >= f0 - 1e-12:
                break
            # cheap fallback first: backtrack toward the anchor on the
            # true objective (the proposal direction is usually right,
            # its length is what overshoots the sharp activation costs)
            direction = Xn - X
            alpha, found = 0.5, False
            for _ in range(12):
                Xa = X + alpha * direction
                fa = relaxed_objective(ctx, Xa, y, theta, sp)
                if fa >= f0 + 1e-12:
                    Xn, fn, found = Xa, fa, True
                    break
                alpha *= 0.5
            if found:
                break
            clean = False
            mu *= 2.0
            escalations += 1
            escalations_this += 1
            if mu > sp.mu_max or escalations_this >= 3:
                Xn, fn = X, f0
                break
        improvement = sur.value(Xn) - sur.value(X)
        stalled = fn - f0 <= 1e-10 * max(1.0, abs(f0))
        X = Xn
        trace.append(fn)
        if clean:
            # widen the trust region again once steps verify
            mu = max(sp.mu0, 0.5 * mu)
        if improvement <= sp.eps_sca * max(1.0, abs(f0)) or stalled:
            break
    rates, _ = _relaxed_rates_value(ctx, X, sp)
    y = optimal_y(float(rates.sum()), relaxed_power(ctx, X, sp.delta_smooth), sp.V, sp.transform_B)
    trace.append(relaxed_objective(ctx, X, y, theta, sp))
    info = {
        "y": y,
        "iters": iters,
        "mu": mu,
        "mu_escalations": escalations,
        "trace": trace,
        "relaxed_obj": trace[-1],
    }
    return X, info


def project_binary(X: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Threshold at 1/2 (ties up); repair empty rows with the best-gamma AP."""
    a = (np.asarray(X, dtype=float) >= 0.5).astype(np.int8)
    empty = np.flatnonzero(a.sum(axis=1) == 0)
    if empty.size:
        a[empty, np.argmax(np.asarray(gamma)[empty], axis=1)] = 1
    return a


def p2_objective(ctx: SlotContext, a: np.ndarray, theta: np.ndarray, sp: SolverParams) -> float:
    """Hard-association per-slot objective: weighted EE plus queue-weighted rates."""
    res = ctx.evaluate(a)
    return sp.V * sp.transform_B * float(res.rate.sum()) / res.p_tot + float(theta @ res.rate)


def solve_slot(ctx: SlotContext, theta: np.ndarray, sp: SolverParams, warm: np.ndarray):
    """Relaxed solves plus binary projection; returns the association and
    diagnostics (iterations, objective trace, projected objective, and
    the relaxed point for warm-starting the next slot).

    The relaxed landscape keeps local basins, so up to `multi_start`
    starts are tried (the given warm start, then full cooperation, then
    the box center) and the best projected objective wins. Each start
    keeps its own nondecreasing trace.
    """
    K, L = ctx.shape
    starts = [np.clip(np.asarray(warm, dtype=float), 0.0, 1.0)]
    if sp.multi_start >= 2:
        starts.append(np.ones((K, L)))
    if sp.multi_start >= 3:
        starts.append(np.full((K, L), 0.5))

    best = None
    for X0 in starts[: max(sp.multi_start, 1)]:
        X, info = sca_solve(ctx, theta, sp, X0)
        a = project_binary(X, ctx.gamma)
        p2 = p2_objective(ctx, a, theta, sp)
        if best is None or p2 > best[0]:
            best = (p2, a, X, info)

    p2, a, X, info = best
    diagnostics = {
        "sca_iters": info["iters"],
        "mu_escalations": info["mu_escalations"],
        "relaxed_obj": info["relaxed_obj"],
        "trace": info["trace"],
        "y": info["y"],
        "p2_obj": p2,
        "X_relaxed": X,
    }
    return a, diagnostics


def exhaustive_p2(ctx: SlotContext, theta: np.ndarray, sp: SolverParams, require_service: bool = True):
    """Brute-force optimum of the per-slot objective over binary
    associations (every UE served when `require_service`). Only viable
    for K*L small; used as a test oracle."""
    K, L = ctx.shape
    if K * L > 16:
        raise ValueError("exhaustive search is limited to K*L <= 16")
    start = 1 if require_service else 0
    rows = [np.array([(m >> l) & 1 for l in range(L)], dtype=np.int8) for m in range(start, 2**L)]
    best_a, best_val = None, -np.inf
    for combo in itertools.product(rows, repeat=K):
        a = np.stack(combo)
        val = p2_objective(ctx, a, theta, sp)
        if val > best_val:
            best_a, best_val = a, val
    return best_a, best_val
