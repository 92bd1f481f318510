"""Closed-form per-slot physical layer: SINR, short-packet rate, power, EE.

The SINR follows the use-and-then-forget analysis of pilot-subspace
zero-forcing with equal per-AP power sharing. Rates use the normal
approximation for finite blocklengths with the dispersion penalty; the
`literal` rate form keeps an alternative transcription in which the log
term takes the inverse SINR (kept selectable for reproducibility, see
README), while the default `standard` form is monotone in SINR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# inverse standard-normal quantile (rational approximation, |err| < 1e-9
# over p in [1e-300, 1-1e-16]); no dependency beyond numpy
# ---------------------------------------------------------------------------

_CENT_NUM = (
    2.5090809287301226727e3,
    3.3430575583588128105e4,
    6.7265770927008700853e4,
    4.5921953931549871457e4,
    1.3731693765509461125e4,
    1.9715909503065514427e3,
    1.3314166789178437745e2,
    3.3871328727963666080e0,
)
_CENT_DEN = (
    5.2264952788528545610e3,
    2.8729085735721942674e4,
    3.9307895800092710610e4,
    2.1213794301586595867e4,
    5.3941960214247511077e3,
    6.8718700749205790830e2,
    4.2313330701600911252e1,
    1.0,
)
_TAIL_NUM = (
    7.74545014278341407640e-4,
    2.27238449892691845833e-2,
    2.41780725177450611770e-1,
    1.27045825245236838258e0,
    3.64784832476320460504e0,
    5.76949722146069140550e0,
    4.63033784615654529590e0,
    1.42343711074968357734e0,
)
_TAIL_DEN = (
    1.05075007164441684324e-9,
    5.47593808499534494600e-4,
    1.51986665636164571966e-2,
    1.48103976427480074590e-1,
    6.89767334985100004550e-1,
    1.67638483018380384940e0,
    2.05319162663775882187e0,
    1.0,
)
_FAR_NUM = (
    2.01033439929228813265e-7,
    2.71155556874348757815e-5,
    1.24266094738807843860e-3,
    2.65321895265761230930e-2,
    2.96560571828504891230e-1,
    1.78482653991729133580e0,
    5.46378491116411436990e0,
    6.65790464350110377720e0,
)
_FAR_DEN = (
    2.04426310338993978564e-15,
    1.42151175831644588870e-7,
    1.84631831751005468180e-5,
    7.86869131145613259100e-4,
    1.48753612908506148525e-2,
    1.36929880922735805310e-1,
    5.99832206555887937690e-1,
    1.0,
)


def _poly(coeffs, r):
    acc = np.zeros_like(r) + coeffs[0]
    for c in coeffs[1:]:
        acc = acc * r + c
    return acc


def inverse_normal_cdf(p):
    """Quantile of the standard normal distribution, vectorized."""
    scalar = np.ndim(p) == 0
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("probability must lie strictly inside (0, 1)")
    q = p - 0.5
    central = np.abs(q) <= 0.425
    out = np.empty_like(p)

    if np.any(central):
        r = 0.180625 - q[central] ** 2
        out[central] = q[central] * _poly(_CENT_NUM, r) / _poly(_CENT_DEN, r)

    tail = ~central
    if np.any(tail):
        qt = q[tail]
        r = np.where(qt < 0.0, p[tail], 1.0 - p[tail])
        r = np.sqrt(-np.log(r))
        near = r <= 5.0
        x = np.empty_like(r)
        x[near] = _poly(_TAIL_NUM, r[near] - 1.6) / _poly(_TAIL_DEN, r[near] - 1.6)
        x[~near] = _poly(_FAR_NUM, r[~near] - 5.0) / _poly(_FAR_DEN, r[~near] - 5.0)
        out[tail] = np.where(qt < 0.0, -x, x)
    return float(out[0]) if scalar else out


def inverse_q(eps):
    """Inverse Gaussian Q-function: the (1 - eps)-quantile of N(0, 1)."""
    return -inverse_normal_cdf(eps)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterMatrix:
    """Binary AP-UE association; every UE keeps at least one serving AP."""

    a: np.ndarray  # (K, L) in {0, 1}

    def __post_init__(self):
        a = np.asarray(self.a)
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("association entries must be binary")
        if np.any(a.sum(axis=1) == 0):
            raise ValueError("every UE needs at least one serving AP")
        object.__setattr__(self, "a", a.astype(np.int8))

    def cluster_sizes(self) -> np.ndarray:
        return self.a.sum(axis=1)


@dataclass(frozen=True)
class PowerParams:
    """Per-AP and network power model constants (watts)."""

    alpha_m: tuple = (0.4,)  # per-EDU amplifier efficiency in (0, 1]
    P_cir: float = 0.2  # per AP, always on
    P_link: float = 0.01  # per active association
    P_edu: float = 5.0  # network-level constant
    rho_d_watts: float = 1.0  # radiated DL budget per active AP

    def __post_init__(self):
        alpha = tuple(np.atleast_1d(np.asarray(self.alpha_m, dtype=float)))
        if any(not (0.0 < a <= 1.0) for a in alpha):
            raise ValueError("amplifier efficiency must lie in (0, 1]")
        if min(self.P_cir, self.P_link, self.P_edu, self.rho_d_watts) < 0:
            raise ValueError("power constants must be nonnegative")
        object.__setattr__(self, "alpha_m", alpha)

    def alpha_per_ap(self, edu_of_ap: np.ndarray) -> np.ndarray:
        alpha = np.asarray(self.alpha_m, dtype=float)
        if alpha.size == 1:
            return np.full(len(edu_of_ap), alpha[0])
        return alpha[np.asarray(edu_of_ap)]


@dataclass(frozen=True)
class FblParams:
    """Finite-blocklength rate parameters."""

    eps_decode: float = 1e-5  # target decoding error probability
    tau_c: int = 200  # symbols per block
    eta_p: float = 0.01  # pilot fraction tau_p / tau_c
    form: str = "standard"  # 'standard' | 'literal'

    def __post_init__(self):
        if not 0.0 < self.eps_decode < 0.5:
            raise ValueError("decoding error target must be in (0, 0.5)")
        if not 0.0 < self.eta_p < 1.0:
            raise ValueError("pilot fraction must be in (0, 1)")
        if self.form not in ("standard", "literal"):
            raise ValueError("rate form must be 'standard' or 'literal'")

    @cached_property
    def kappa(self) -> float:
        """Dispersion weight Q^{-1}(eps) / sqrt(tau_c (1 - eta_p))."""
        return float(inverse_q(self.eps_decode)) / math.sqrt(self.tau_c * (1.0 - self.eta_p))

    @cached_property
    def prefactor(self) -> float:
        return (1.0 - self.eta_p) / LN2


@dataclass(frozen=True)
class SlotPhyResult:
    """Hard-association physical-layer outcome for one slot."""

    sinr: np.ndarray  # (K,)
    rate: np.ndarray  # (K,) bits/s/Hz, clamped at 0
    p_ap: np.ndarray  # (L,) watts
    p_tot: float  # watts
    ee_inst: float  # bits/s per watt (bandwidth-scaled)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def equal_power_coeffs(cluster: np.ndarray) -> np.ndarray:
    """Equal power split across the UEs served by each AP.

    Active AP columns sum to one; idle AP columns are all zero.
    """
    a = np.asarray(cluster, dtype=float)
    served = a.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = np.where(served > 0, a / np.where(served > 0, served, 1.0), 0.0)
    return eta


def _sharing_matrix(pilot_sharing, K: int) -> np.ndarray:
    share = np.asarray(pilot_sharing)
    if share.dtype == bool and share.shape == (K, K):
        return share
    out = np.zeros((K, K), dtype=bool)
    for k in range(K):
        out[k, list(pilot_sharing[k])] = True
    return out


def fzf_sinr(
    beta: np.ndarray,
    gamma: np.ndarray,
    pilot_sharing,
    eta_bar: np.ndarray,
    cluster: np.ndarray,
    rho_d: float,
    N: int,
    tau_p: int,
    contamination: str = "standard",
) -> np.ndarray:
    """Effective downlink SINR of zero-forcing over the pilot subspace.

    Numerator: coherent gain rho_d (N - tau_p) (sum_l sqrt(eta_bar*gamma))^2.
    Denominator: estimation-error leakage from every transmission,
    coherent pilot-contamination beams, and unit (normalized) noise.
    `contamination='standard'` weighs the contamination beams by the
    victim's estimate quality gamma (matches the Monte Carlo oracle);
    `'literal'` uses the raw gain beta instead, an upper bound on the
    interference.
    """
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    K, L = beta.shape
    a = np.asarray(cluster, dtype=float)
    eta = np.asarray(eta_bar, dtype=float) * a  # gate: idle associations cannot leak
    share = _sharing_matrix(pilot_sharing, K)

    coh = np.sqrt(eta * gamma).sum(axis=1)
    num = rho_d * (N - tau_p) * coh**2

    err = rho_d * ((beta - gamma) @ eta.sum(axis=0))
    G = gamma if contamination == "standard" else beta
    if contamination not in ("standard", "literal"):
        raise ValueError("contamination form must be 'standard' or 'literal'")
    # T[k, i] = sum_l sqrt(eta[i, l] * G[k, l])
    T = np.sqrt(G) @ np.sqrt(eta).T
    mask = share & ~np.eye(K, dtype=bool)
    cont = rho_d * (N - tau_p) * ((T * mask) ** 2).sum(axis=1)

    return num / (err + cont + 1.0)


def fbl_dispersion(sinr):
    """Channel dispersion V = 1 - 1/(1+g)^2."""
    g = np.asarray(sinr, dtype=float)
    return 1.0 - 1.0 / (1.0 + g) ** 2


def fbl_rate(sinr, fbl: FblParams):
    """Achievable spectral efficiency with the dispersion penalty, >= 0."""
    g = np.asarray(sinr, dtype=float)
    if np.any(g < 0):
        raise ValueError("SINR must be nonnegative")
    pen = fbl.kappa * np.sqrt(fbl_dispersion(g))
    if fbl.form == "standard":
        body = np.log1p(g) - pen
    else:
        with np.errstate(divide="ignore"):
            body = np.where(g > 0, np.log1p(1.0 / np.maximum(g, 1e-300)), 0.0) - pen
    out = fbl.prefactor * np.maximum(body, 0.0)
    return float(out) if out.ndim == 0 else out


def fbl_rate_and_slope(sinr, fbl: FblParams):
    """Rate and its derivative in SINR (zero where the clamp is active)."""
    g = np.asarray(sinr, dtype=float)
    V = fbl_dispersion(g)
    sqrtV = np.sqrt(V)
    pen = fbl.kappa * sqrtV
    if fbl.form == "standard":
        body = np.log1p(g) - pen
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = 1.0 / (1.0 + g) - fbl.kappa / np.where(sqrtV > 0, (1.0 + g) ** 3 * sqrtV, np.inf)
    else:
        with np.errstate(divide="ignore"):
            body = np.where(g > 0, np.log1p(1.0 / np.maximum(g, 1e-300)), 0.0) - pen
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = -1.0 / np.maximum(g * (1.0 + g), 1e-300) - fbl.kappa / np.where(
                sqrtV > 0, (1.0 + g) ** 3 * sqrtV, np.inf
            )
    active = body > 0
    rate = fbl.prefactor * np.where(active, body, 0.0)
    drate = fbl.prefactor * np.where(active, slope, 0.0)
    return rate, drate


def ap_power(cluster: np.ndarray, eta: np.ndarray, params: PowerParams, edu_of_ap) -> np.ndarray:
    """Per-AP consumption: amplifier draw, per-link load, circuit floor."""
    a = np.asarray(cluster, dtype=float)
    eta = np.asarray(eta, dtype=float)
    alpha = params.alpha_per_ap(np.asarray(edu_of_ap))
    tx = (params.rho_d_watts / alpha) * (eta * a).sum(axis=0)
    return tx + params.P_link * a.sum(axis=0) + params.P_cir


def total_power(p_ap: np.ndarray, params: PowerParams) -> float:
    """Network power: all APs plus the EDU-side constant."""
    return float(np.sum(p_ap) + params.P_edu)


def instantaneous_ee(rates: np.ndarray, p_tot: float, B: float) -> float:
    """Delivered bits per second per watt in one slot."""
    if p_tot <= 0:
        raise ValueError("total power must be positive")
    return float(B * np.sum(rates) / p_tot)


# ---------------------------------------------------------------------------
# per-slot evaluation context
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlotContext:
    """Everything slot evaluation needs that is fixed across slots."""

    beta: np.ndarray
    gamma: np.ndarray
    sharing: np.ndarray  # (K, K) bool, same-pilot indicator
    N: int
    tau_p: int
    rho_d: float
    fbl: FblParams
    power: PowerParams
    edu_of_ap: np.ndarray
    bandwidth_B: float
    contamination: str = "standard"
    # caches
    sqrt_gamma: np.ndarray = field(init=False)
    sqrt_beta: np.ndarray = field(init=False)
    bmg: np.ndarray = field(init=False)
    contaminates: np.ndarray = field(init=False)
    alpha_ap: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sqrt_gamma", np.sqrt(self.gamma))
        object.__setattr__(self, "sqrt_beta", np.sqrt(self.beta))
        object.__setattr__(self, "bmg", self.beta - self.gamma)
        K = self.beta.shape[0]
        object.__setattr__(self, "contaminates", self.sharing & ~np.eye(K, dtype=bool))
        object.__setattr__(self, "alpha_ap", self.power.alpha_per_ap(self.edu_of_ap))

    @property
    def shape(self) -> tuple[int, int]:
        return self.beta.shape

    def evaluate(self, cluster: np.ndarray) -> SlotPhyResult:
        """Hard-association slot outcome under equal power sharing."""
        a = np.asarray(cluster)
        eta = equal_power_coeffs(a)
        sinr = fzf_sinr(
            self.beta, self.gamma, self.sharing, eta, a, self.rho_d, self.N, self.tau_p, self.contamination
        )
        rate = fbl_rate(sinr, self.fbl)
        p_ap = ap_power(a, eta, self.power, self.edu_of_ap)
        p_tot = total_power(p_ap, self.power)
        return SlotPhyResult(
            sinr=sinr,
            rate=rate,
            p_ap=p_ap,
            p_tot=p_tot,
            ee_inst=instantaneous_ee(rate, p_tot, self.bandwidth_B),
        )
