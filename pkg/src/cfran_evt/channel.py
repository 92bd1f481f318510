"""MMSE channel-estimation quality and a Monte Carlo SINR oracle.

`estimation_quality` is the closed form used everywhere in the
simulator. `mc_uatf_sinr` draws explicit fading/estimate realizations,
builds the pilot-subspace zero-forcing precoder, and accumulates the
use-and-then-forget effective SINR empirically; it exists to validate
the closed-form SINR in `phy` and is never on the per-slot hot path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import NetworkConfig, Topology, large_scale_gain

# Realizations used to estimate the precoder-norm expectation, cached
# per (AP, pilot) pair. The norm estimate biases every accumulated SINR
# multiplicatively, so it gets far more samples than the main pass.
_NORM_PREPASS = 50_000
# Fixed accumulation chunk so results do not depend on n_real batching.
_CHUNK = 2048


@dataclass(frozen=True)
class EstimationQuality:
    """Per-(UE, AP) MMSE estimate variance, same normalization as beta."""

    gamma: np.ndarray  # (K, L), 0 <= gamma <= beta

    def __post_init__(self):
        if np.any(self.gamma < 0):
            raise ValueError("estimation quality must be nonnegative")


def estimation_quality(beta: np.ndarray, pilot_sharing, tau_p: int, rho_p: float) -> EstimationQuality:
    """Closed-form MMSE estimate variance under pilot contamination.

    gamma[k, l] = tau_p*rho_p*beta[k, l]^2 / (tau_p*rho_p*sum_{i in P_k} beta[i, l] + 1)

    `pilot_sharing` maps UE k to the set of UEs on its pilot (k included).
    """
    if rho_p <= 0:
        raise ValueError("pilot power must be positive")
    beta = np.asarray(beta, dtype=float)
    K = beta.shape[0]
    share = np.zeros((K, K))
    for k in range(K):
        share[k, list(pilot_sharing[k])] = 1.0
    tp = tau_p * rho_p
    gamma = tp * beta**2 / (tp * (share @ beta) + 1.0)
    return EstimationQuality(gamma=gamma)


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)


def _precoder_norms(seed, L: int, N: int, tau_p: int, n_prepass: int = _NORM_PREPASS) -> np.ndarray:
    """Empirical E||G (G^H G)^-1 e_i||^2 per (AP, pilot); approx 1/(N - tau_p)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    norms = np.empty((L, tau_p))
    batch = 10_000
    for l in range(L):
        acc = np.zeros(tau_p)
        done = 0
        while done < n_prepass:
            r = min(batch, n_prepass - done)
            G = _cn(rng, (r, N, tau_p))
            GhG = np.einsum("rni,rnj->rij", G.conj(), G)
            # ||G (G^H G)^-1 e_i||^2 equals the i-th diagonal of (G^H G)^-1
            inv = np.linalg.inv(GhG)
            acc += np.einsum("rii->i", inv.real)
            done += r
        norms[l] = acc / n_prepass
    return norms


def mc_uatf_sinr(
    beta: np.ndarray,
    gamma: np.ndarray,
    topology: Topology,
    cluster: np.ndarray,
    eta_bar: np.ndarray,
    rho_d: float,
    N: int,
    n_real: int,
    seed: int = 0,
) -> np.ndarray:
    """Empirical use-and-then-forget downlink SINR per UE.

    Per realization: pilot-subspace columns are drawn i.i.d. CN(0, I_N)
    per (pilot, AP); UE estimates are sqrt(gamma) times their pilot's
    column (pilot sharers are fully correlated), estimation errors are
    independent CN(0, (beta-gamma) I_N). The zero-forcing precoder is
    normalized by its pre-estimated mean squared norm. The SINR treats
    the mean desired coefficient as the signal and all deviation plus
    cross-UE leakage plus unit noise as interference.

    Realizations with a singular pilot Gram matrix are skipped; more
    than 1% skipped aborts the run.
    """
    if n_real < 1:
        raise ValueError("need at least one realization")
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    K, L = beta.shape
    tau_p = topology.tau_p
    pilots = np.asarray(topology.pilot_of_ue)
    a = np.asarray(cluster, dtype=float)
    amp = np.sqrt(rho_d * np.asarray(eta_bar, dtype=float) * a)  # (K, L)
    sqrt_err = np.sqrt(np.maximum(beta - gamma, 0.0))
    sqrt_gam = np.sqrt(gamma)

    norms = _precoder_norms(seed, L, N, tau_p)

    sum_d = np.zeros(K, dtype=complex)
    sum_d2 = np.zeros(K)
    sum_i2 = np.zeros((K, K))
    n_used = 0
    n_skipped = 0

    n_chunks = (n_real + _CHUNK - 1) // _CHUNK
    for c in range(n_chunks):
        r = min(_CHUNK, n_real - c * _CHUNK)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1 + c,)))
        V = _cn(rng, (r, L, N, tau_p))  # pilot-subspace columns
        err = _cn(rng, (r, K, L, N))

        GhG = np.einsum("rlni,rlnj->rlij", V.conj(), V)
        det = np.linalg.det(GhG)
        good = np.all(np.abs(det) > 1e-12, axis=1)
        n_skipped += int(r - good.sum())
        if not np.any(good):
            continue
        V = V[good]
        err = err[good]
        GhG = GhG[good]
        n_used += int(good.sum())

        W = V @ np.linalg.inv(GhG)  # (r, L, N, tau_p)
        # per-UE precoders, statistically normalized
        w = W[:, :, :, pilots] / np.sqrt(norms[:, pilots])[None, :, None, :]  # (r, L, N, K)
        # true channels: correlated estimate part + independent error part
        g = sqrt_gam.T[None, :, None, :] * V[:, :, :, pilots] + sqrt_err.T[None, :, None, :] * np.transpose(
            err, (0, 2, 3, 1)
        )  # (r, L, N, K), last axis = UE whose channel it is
        # C[r, k, j]: coefficient of UE j's symbol at UE k's receiver
        C = np.einsum("rlnk,rlnj,jl->rkj", g.conj(), w, amp, optimize=True)

        idx = np.arange(K)
        sum_d += C[:, idx, idx].sum(axis=0)
        sum_d2 += (np.abs(C[:, idx, idx]) ** 2).sum(axis=0)
        sum_i2 += (np.abs(C) ** 2).sum(axis=0)

    if n_skipped > 0.01 * n_real:
        raise RuntimeError(f"{n_skipped}/{n_real} realizations skipped (singular pilot Gram matrices)")
    if n_used == 0:
        raise RuntimeError("no usable realizations")

    mean_d = sum_d / n_used
    var_d = np.maximum(sum_d2 / n_used - np.abs(mean_d) ** 2, 0.0)
    cross = sum_i2 / n_used
    np.fill_diagonal(cross, 0.0)
    denom = var_d + cross.sum(axis=1) + 1.0
    return np.abs(mean_d) ** 2 / denom


def sinr_validation(
    net: NetworkConfig,
    n_instances: int = 20,
    n_real: int = 10_000,
    seed: int = 0,
    contamination: str = "standard",
    min_sinr: float = 0.05,
) -> tuple[list[dict], float]:
    """Closed-form SINR against the Monte Carlo oracle on random small cases.

    Draws instances (K <= 3, L <= 4) from the configured channel model
    with random feasible associations; pilot sharing occurs whenever the
    drawn K exceeds tau_p. Instances whose closed-form SINR falls below
    `min_sinr` for some UE are redrawn: in a deep fade the relative-error
    metric is dominated by the estimator's own noise floor (the desired
    mean is measured against interference variance that dwarfs it) and
    says nothing about the formula. Returns per-instance rows and the
    overall worst relative error.
    """
    from .phy import equal_power_coeffs, fzf_sinr  # local import, no cycle at module load
    from .topology import _wrap_distance_matrix

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(99,)))
    rows = []
    worst = 0.0
    for i in range(n_instances):
        for _ in range(500):
            Ki = int(rng.integers(1, 4))
            Li = int(rng.integers(1, 5))
            ue = rng.uniform(0.0, net.area_side, size=(Ki, 2))
            ap = rng.uniform(0.0, net.area_side, size=(Li, 2))
            dist = _wrap_distance_matrix(ue, ap, net.area_side)
            shadow = np.where(dist > 50.0, rng.normal(0.0, 8.0, size=dist.shape), 0.0)
            beta = large_scale_gain(dist, shadow, noise_scale=1.0 / net.noise_power_watts())

            pilots = np.arange(Ki) % net.tau_p
            share = pilots[:, None] == pilots[None, :]
            gamma = estimation_quality(
                beta, [set(np.flatnonzero(share[k])) for k in range(Ki)], net.tau_p, net.rho_p
            ).gamma

            a = (rng.random((Ki, Li)) < 0.6).astype(np.int8)
            empty = np.flatnonzero(a.sum(axis=1) == 0)
            if empty.size:
                a[empty, np.argmax(gamma[empty], axis=1)] = 1
            eta = equal_power_coeffs(a)

            cf = fzf_sinr(beta, gamma, share, eta, a, net.rho_d, net.N, net.tau_p, contamination)
            if net.rho_d == 0 or np.all(cf >= min_sinr):
                break
        topo = Topology(
            ap_positions=ap,
            ue_positions=ue,
            edu_of_ap=np.zeros(Li, dtype=int),
            pilot_of_ue=pilots,
            tau_p=net.tau_p,
        )
        mc_seed = int(rng.integers(0, 2**62))
        mc = mc_uatf_sinr(beta, gamma, topo, a, eta, net.rho_d, net.N, n_real, seed=mc_seed)
        rel = np.where(cf > 0, np.abs(cf - mc) / np.where(cf > 0, cf, 1.0), np.abs(mc))
        err = float(rel.max())
        worst = max(worst, err)
        rows.append(
            {
                "instance": i,
                "K": Ki,
                "L": Li,
                "pilot_sharing": bool(Ki > net.tau_p),
                "closed_form": cf.tolist(),
                "monte_carlo": mc.tolist(),
                "max_rel_err": err,
            }
        )
    return rows, worst
