"""Network geometry, large-scale fading, and pilot assignment.

All positions live on a square wrap-around (toroidal) area. Large-scale
gains are stored normalized by the receiver noise power, so products
like ``rho_d * beta`` are SNRs and the ``+1`` noise terms in the SINR
and estimation formulas are literal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .streams import STREAM_POSITIONS, STREAM_SHADOWING, substream

# Three-slope urban path-loss model, distances in km inside the formulas.
# The mid-slope intercept is fixed so the model is continuous at both
# breakpoints (50 m and 10 m); below 10 m the loss is constant.
_D0 = 10.0  # m
_D1 = 50.0  # m
_FAR_INTERCEPT_DB = -140.7
_MID_INTERCEPT_DB = _FAR_INTERCEPT_DB - 15.0 * np.log10(_D1 / 1000.0)  # -121.185 dB
_NEAR_CONST_DB = _MID_INTERCEPT_DB - 20.0 * np.log10(_D0 / 1000.0)  # -81.185 dB

SHADOW_SIGMA_DB = 8.0  # log-normal shadowing, applied only beyond 50 m


class ConfigurationError(ValueError):
    """Raised for structurally invalid experiment configurations."""


@dataclass(frozen=True)
class NetworkConfig:
    """Static geometry and radio parameters for one experiment.

    Powers are physical watts; `noise_power_watts()` gives the thermal
    noise floor used to normalize the large-scale gains.
    """

    area_side: float = 500.0  # m, square wrap-around area
    M: int = 2  # EDUs
    L: int = 20  # APs
    N: int = 6  # antennas per AP
    K: int = 8  # single-antenna UEs
    tau_c: int = 200  # symbols per coherence block
    tau_p: int = 2  # pilot symbols per block
    bandwidth_B: float = 20e6  # Hz
    rho_p: float = 0.2  # W, uplink pilot power
    rho_d: float = 1.0  # W, downlink power budget per AP
    noise_figure_dB: float = 9.0
    seed: int = 0

    def __post_init__(self):
        if self.N <= self.tau_p:
            raise ConfigurationError(
                f"zero-forcing on the pilot subspace needs N > tau_p (got N={self.N}, tau_p={self.tau_p})"
            )
        if not self.tau_p < self.tau_c:
            raise ConfigurationError("tau_p must be smaller than tau_c")
        for name in ("M", "L", "N", "K", "tau_c", "tau_p"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.area_side <= 0:
            raise ConfigurationError("area_side must be positive")

    @property
    def eta_p(self) -> float:
        """Pilot overhead fraction tau_p / tau_c."""
        return self.tau_p / self.tau_c

    def noise_power_watts(self) -> float:
        """Thermal noise power over the full bandwidth, in watts."""
        noise_dbm = -174.0 + 10.0 * np.log10(self.bandwidth_B) + self.noise_figure_dB
        return 10.0 ** (noise_dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class Topology:
    """One realization of AP/UE placement, EDU map, and pilot plan."""

    ap_positions: np.ndarray  # (L, 2) m
    ue_positions: np.ndarray  # (K, 2) m
    edu_of_ap: np.ndarray  # (L,) int, EDU index per AP
    pilot_of_ue: np.ndarray  # (K,) int in [0, tau_p)
    tau_p: int

    @property
    def pilot_sharing(self) -> list[frozenset[int]]:
        """For each UE k, the set of UEs on the same pilot (k included)."""
        groups = [frozenset(np.flatnonzero(self.pilot_of_ue == p)) for p in range(self.tau_p)]
        return [groups[p] for p in self.pilot_of_ue]

    def sharing_matrix(self) -> np.ndarray:
        """(K, K) boolean, True where two UEs use the same pilot."""
        return self.pilot_of_ue[:, None] == self.pilot_of_ue[None, :]

    def to_json_dict(self) -> dict:
        """Plain-type dump for reproducibility audits."""
        return {
            "ap_positions": self.ap_positions.tolist(),
            "ue_positions": self.ue_positions.tolist(),
            "edu_of_ap": self.edu_of_ap.tolist(),
            "pilot_of_ue": self.pilot_of_ue.tolist(),
            "tau_p": int(self.tau_p),
        }


@dataclass(frozen=True)
class LargeScaleState:
    """Noise-normalized large-scale power gains, UE-by-AP."""

    beta: np.ndarray  # (K, L), > 0

    def __post_init__(self):
        if np.any(self.beta <= 0):
            raise ValueError("large-scale gains must be strictly positive")


def wrap_distance(p, q, side: float) -> float:
    """Toroidal distance on the [0, side)^2 wrap-around square.

    Equals the minimum Euclidean distance over the 9 shifted images of q;
    computed per axis, which is equivalent on a square torus. The result
    never exceeds side * sqrt(2) / 2.
    """
    d = np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float))
    d = np.minimum(d, side - d)
    return float(np.hypot(d[..., 0], d[..., 1]))


def _wrap_distance_matrix(P: np.ndarray, Q: np.ndarray, side: float) -> np.ndarray:
    d = np.abs(P[:, None, :] - Q[None, :, :])
    d = np.minimum(d, side - d)
    return np.hypot(d[..., 0], d[..., 1])


def path_loss_db(d) -> np.ndarray:
    """Three-slope distance-dependent loss in dB (negative values)."""
    d = np.asarray(d, dtype=float)
    d_km = np.maximum(d, 1e-9) / 1000.0
    far = _FAR_INTERCEPT_DB - 35.0 * np.log10(d_km)
    mid = _MID_INTERCEPT_DB - 20.0 * np.log10(d_km)
    return np.where(d > _D1, far, np.where(d > _D0, mid, _NEAR_CONST_DB))


def large_scale_gain(d, shadow_dB=0.0, noise_scale: float = 1.0):
    """Linear power gain at distance d with shadowing, noise-normalized.

    `noise_scale` is 1/noise-power; pass 1.0 for the raw (unnormalized)
    gain. Shadowing enters as a plain dB offset.
    """
    return 10.0 ** ((path_loss_db(d) + shadow_dB) / 10.0) * noise_scale


def generate_topology(cfg: NetworkConfig) -> tuple[Topology, LargeScaleState]:
    """Draw one network realization, deterministically from cfg.seed.

    APs and UEs are i.i.d. uniform on the square; EDUs take contiguous
    AP blocks; pilots are assigned round-robin by UE index; shadowing is
    log-normal (8 dB) beyond 50 m only.
    """
    if cfg.L % cfg.M != 0:
        raise ConfigurationError(f"L={cfg.L} APs cannot be split evenly over M={cfg.M} EDUs")

    rng_pos = substream(cfg.seed, STREAM_POSITIONS)
    ap_positions = rng_pos.uniform(0.0, cfg.area_side, size=(cfg.L, 2))
    ue_positions = rng_pos.uniform(0.0, cfg.area_side, size=(cfg.K, 2))

    edu_of_ap = np.repeat(np.arange(cfg.M), cfg.L // cfg.M)
    pilot_of_ue = np.arange(cfg.K) % cfg.tau_p

    dist = _wrap_distance_matrix(ue_positions, ap_positions, cfg.area_side)
    rng_sh = substream(cfg.seed, STREAM_SHADOWING)
    shadow = rng_sh.normal(0.0, SHADOW_SIGMA_DB, size=dist.shape)
    shadow = np.where(dist > _D1, shadow, 0.0)

    beta = large_scale_gain(dist, shadow, noise_scale=1.0 / cfg.noise_power_watts())

    topo = Topology(
        ap_positions=ap_positions,
        ue_positions=ue_positions,
        edu_of_ap=edu_of_ap,
        pilot_of_ue=pilot_of_ue,
        tau_p=cfg.tau_p,
    )
    return topo, LargeScaleState(beta=beta)
