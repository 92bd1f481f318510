"""Slot-loop orchestration: policies, experiments, paired comparisons.

Per-slot ordering: observe the backlog, form the scheduling pressure,
solve the clustering problem, transmit, update virtual queues from the
observed state, then advance the physical queue with fresh arrivals.
Arrivals come from a dedicated stream of the master seed, so policies
compared under one seed see identical traffic.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .channel import estimation_quality
from .config import ExperimentConfig, effective_config
from .evt import GpdFit, InsufficientExceedances, extract_pot, fit_gpd_mle, tail_descriptor
from .phy import SlotContext
from .queueing import QueueState, advance_queue, draw_arrivals, theta_weights, update_virtual_queues
from .solver import project_binary, solve_slot, warm_start_nearest
from .streams import STREAM_ARRIVALS, substream
from .topology import generate_topology

POLICY_KINDS = ("evt_aware", "queue_aware_baseline", "static_nearest")

CSV_COLUMNS = ("t", "k", "Q", "Z", "rate", "sinr", "S_k", "p_tot", "ee", "sca_iters", "obj")


@dataclass(frozen=True)
class Policy:
    """Clustering decision rule for one experiment."""

    kind: str = "evt_aware"
    evt_feedback: bool = True

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"policy kind must be one of {POLICY_KINDS}")


@dataclass
class SlotMetrics:
    """Columnar per-slot record over the measured horizon."""

    t: np.ndarray  # (n,)
    Q: np.ndarray  # (n, K) backlog observed at slot start
    Z: np.ndarray  # (n, K) excess above threshold
    rate: np.ndarray  # (n, K)
    sinr: np.ndarray  # (n, K)
    S: np.ndarray  # (n, K) cluster sizes
    p_tot: np.ndarray  # (n,)
    ee: np.ndarray  # (n,)
    sum_rate: np.ndarray  # (n,)
    sca_iters: np.ndarray  # (n,)
    obj: np.ndarray  # (n,) post-projection per-slot objective

    def __len__(self):
        return self.t.size


@dataclass
class ExperimentResult:
    """One (policy, seed) run: config echo, metrics, summary, fits."""

    policy: Policy
    seed: int
    config: dict
    csv_path: str | None
    metrics: SlotMetrics
    summary: dict
    arrival_checksum: str
    fits: list


def build_slot_context(cfg: ExperimentConfig, seed: int | None = None):
    """Topology draw plus the immutable per-slot evaluation context."""
    net = cfg.network if seed is None else replace(cfg.network, seed=seed)
    topo, ls = generate_topology(net)
    gamma = estimation_quality(ls.beta, topo.pilot_sharing, net.tau_p, net.rho_p).gamma
    ctx = SlotContext(
        beta=ls.beta,
        gamma=gamma,
        sharing=topo.sharing_matrix(),
        N=net.N,
        tau_p=net.tau_p,
        rho_d=net.rho_d,
        fbl=cfg.fbl,
        power=cfg.power,
        edu_of_ap=topo.edu_of_ap,
        bandwidth_B=net.bandwidth_B,
        contamination=cfg.sinr_contamination,
    )
    return topo, ls, ctx


def _prior_fit(cfg: ExperimentConfig) -> GpdFit:
    return GpdFit(
        xi=cfg.evt.prior_xi,
        sigma=cfg.evt.prior_sigma,
        threshold=cfg.tail.Q0,
        n_exceed=0,
        n_total=0,
        log_likelihood=float("nan"),
        boundary=False,
    )


def run_experiment(
    cfg: ExperimentConfig,
    policy: Policy,
    T: int | None = None,
    warmup: int | None = None,
    seed: int | None = None,
    csv_path=None,
) -> ExperimentResult:
    """Run one policy for T slots; record metrics from `warmup` onward.

    Deterministic given (cfg, policy, seed). The tail-unaware baseline
    runs the identical solver with zero virtual-queue weights and no
    online tail fitting.
    """
    T = cfg.sim.T if T is None else int(T)
    warmup = cfg.sim.warmup if warmup is None else int(warmup)
    if not T >= warmup >= 0:
        raise ValueError("need T >= warmup >= 0")
    seed = cfg.network.seed if seed is None else int(seed)

    topo, ls, ctx = build_slot_context(cfg, seed)
    K = cfg.network.K
    tail = cfg.tail
    evt_cfg = cfg.evt

    baseline = policy.kind == "queue_aware_baseline"
    static = policy.kind == "static_nearest"
    evt_on = policy.kind == "evt_aware"
    feedback_on = evt_on and policy.evt_feedback and evt_cfg.evt_feedback

    base_a2, base_a3 = tail.alpha2, tail.alpha3
    cur_a2, cur_a3 = base_a2, base_a3

    arr_rng = substream(seed, STREAM_ARRIVALS)
    checksum = hashlib.blake2b(digest_size=16)

    state = QueueState.zeros(K)
    X_warm = warm_start_nearest(ctx.gamma)
    a_static = project_binary(X_warm, ctx.gamma)
    fits: list[GpdFit] = [_prior_fit(cfg) for _ in range(K)]

    Qh = np.zeros((T + 1, K))
    n_rec = T - warmup
    rec = SlotMetrics(
        t=np.zeros(n_rec, dtype=int),
        Q=np.zeros((n_rec, K)),
        Z=np.zeros((n_rec, K)),
        rate=np.zeros((n_rec, K)),
        sinr=np.zeros((n_rec, K)),
        S=np.zeros((n_rec, K), dtype=int),
        p_tot=np.zeros(n_rec),
        ee=np.zeros(n_rec),
        sum_rate=np.zeros(n_rec),
        sca_iters=np.zeros(n_rec, dtype=int),
        obj=np.zeros(n_rec),
    )

    for t in range(T):
        Z = state.z(tail.Q0)
        alphas = (0.0, 0.0, 0.0) if baseline else (tail.alpha1, cur_a2, cur_a3)
        theta = theta_weights(state, tail, alphas)

        if static:
            a = a_static
            diag = {"sca_iters": 0, "p2_obj": float("nan"), "trace": []}
        else:
            a, diag = solve_slot(ctx, theta, cfg.solver, X_warm)
            X_warm = diag["X_relaxed"]
            if cfg.sim.strict:
                trace = np.asarray(diag["trace"])
                if np.any(np.diff(trace) < -1e-6):
                    raise RuntimeError(f"objective regression beyond tolerance in slot {t}")

        res = ctx.evaluate(a)
        state = update_virtual_queues(state, tail)

        A = draw_arrivals(arr_rng, K, tail.A_max, tail.arrival_kind, tail.onoff_p)
        checksum.update(A.tobytes())
        Q_next = advance_queue(state.Q, res.rate, A)
        Qh[t + 1] = Q_next

        if t >= warmup:
            i = t - warmup
            rec.t[i] = t
            rec.Q[i] = state.Q
            rec.Z[i] = Z
            rec.rate[i] = res.rate
            rec.sinr[i] = res.sinr
            rec.S[i] = np.asarray(a).sum(axis=1)
            rec.p_tot[i] = res.p_tot
            rec.ee[i] = res.ee_inst
            rec.sum_rate[i] = float(res.rate.sum())
            rec.sca_iters[i] = diag["sca_iters"]
            rec.obj[i] = diag["p2_obj"]

        state = replace(state, Q=Q_next)

        if evt_on and (t + 1) % evt_cfg.refit_every == 0:
            lo = max(0, t + 2 - evt_cfg.window)
            win = Qh[lo : t + 2]
            ratios1, ratios2 = [], []
            for k in range(K):
                exc, p_exc = extract_pot(win[:, k], tail.Q0)
                if exc.size >= evt_cfg.n_min:
                    try:
                        fits[k] = fit_gpd_mle(
                            exc, n_min=evt_cfg.n_min, threshold=tail.Q0, n_total=win.shape[0]
                        )
                    except InsufficientExceedances:
                        pass
                if feedback_on:
                    try:
                        desc = tail_descriptor(p_exc, fits[k])
                        ratios1.append(desc.m1 / tail.zeta1 if tail.zeta1 > 0 else evt_cfg.feedback_cap)
                        ratios2.append(desc.m2 / tail.zeta2 if tail.zeta2 > 0 else evt_cfg.feedback_cap)
                    except Exception:
                        ratios1.append(evt_cfg.feedback_cap)
                        ratios2.append(evt_cfg.feedback_cap)
            if feedback_on and ratios1:
                # relax toward base, then escalate on predicted overshoot
                cur_a2 = base_a2 + (1.0 - evt_cfg.feedback_decay) * (cur_a2 - base_a2)
                cur_a3 = base_a3 + (1.0 - evt_cfg.feedback_decay) * (cur_a3 - base_a3)
                r1, r2 = max(ratios1), max(ratios2)
                if r1 > 1.0:
                    cur_a2 = min(evt_cfg.feedback_cap * base_a2, cur_a2 * (1.0 + evt_cfg.feedback_gain * (r1 - 1.0)))
                if r2 > 1.0:
                    cur_a3 = min(evt_cfg.feedback_cap * base_a3, cur_a3 * (1.0 + evt_cfg.feedback_gain * (r2 - 1.0)))

    summary = summarize(rec, tail, n_min=evt_cfg.n_min)
    summary["virtual_queue_end_ratios"] = {
        "U_over_T": (state.U / T).tolist() if T else [0.0] * K,
        "Y_over_T": (state.Y / T).tolist() if T else [0.0] * K,
        "W_over_T": (state.W / T).tolist() if T else [0.0] * K,
    }
    summary["online_fits"] = [
        {
            "xi": f.xi,
            "sigma": f.sigma,
            "threshold": f.threshold,
            "n_exceed": f.n_exceed,
            "n_total": f.n_total,
            "boundary": f.boundary,
        }
        for f in fits
    ]
    summary["policy"] = policy.kind
    summary["seed"] = seed
    summary["T"] = T
    summary["warmup"] = warmup

    digest = checksum.hexdigest()
    path_str = None
    if csv_path is not None:
        write_metrics_csv(csv_path, rec)
        path_str = str(csv_path)
    return ExperimentResult(
        policy=policy,
        seed=seed,
        config=effective_config(cfg),
        csv_path=path_str,
        metrics=rec,
        summary=summary,
        arrival_checksum=digest,
        fits=fits,
    )


def summarize(metrics: SlotMetrics, tail, n_min: int = 50) -> dict:
    """Distribution tables recomputable from the per-slot records.

    Conditional cluster-size statistics are reported as absent (None)
    rather than zero when one regime never occurs.
    """
    n = len(metrics)
    out = {"slots": int(n)}
    if n == 0:
        out.update(
            ee_cdf=None,
            exceed_freq=None,
            p_exc=None,
            cluster_size_tail=None,
            cluster_size_nontail=None,
            offline_fits=None,
        )
        return out

    qs = np.linspace(0.0, 1.0, 101)
    out["ee_cdf"] = {"q": qs.tolist(), "value": np.quantile(metrics.ee, qs).tolist()}
    out["exceed_freq"] = (metrics.Q >= tail.Q0).mean(axis=0).tolist()
    out["p_exc"] = (metrics.Q > tail.Q0).mean(axis=0).tolist()

    def _stats(values):
        if values.size == 0:
            return None
        q1, q2, q3 = np.quantile(values, [0.25, 0.5, 0.75])
        return {"mean": float(values.mean()), "q25": float(q1), "median": float(q2), "q75": float(q3), "n": int(values.size)}

    tail_mask = metrics.Z > 0
    out["cluster_size_tail"] = _stats(metrics.S[tail_mask])
    out["cluster_size_nontail"] = _stats(metrics.S[~tail_mask])

    offline = []
    for k in range(metrics.Q.shape[1]):
        exc, p_exc = extract_pot(metrics.Q[:, k], tail.Q0)
        entry = {"ue": k, "p_exc": float(p_exc), "n_exceed": int(exc.size)}
        if exc.size >= n_min:
            try:
                fit = fit_gpd_mle(exc, n_min=n_min, threshold=tail.Q0, n_total=n)
                entry.update(xi=fit.xi, sigma=fit.sigma, boundary=fit.boundary)
            except InsufficientExceedances:
                pass
        offline.append(entry)
    out["offline_fits"] = offline
    out["ee_median"] = float(np.median(metrics.ee))
    return out


def compare_policies(cfg: ExperimentConfig, T: int | None = None, warmup: int | None = None, seeds=None) -> dict:
    """Paired runs of the tail-aware policy against the queue-aware
    baseline on matched seeds, traffic, and topologies."""
    seeds = list(cfg.sim.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    T_eff = cfg.sim.T if T is None else int(T)
    warm_eff = cfg.sim.warmup if warmup is None else int(warmup)

    rows = []
    for seed in seeds:
        res_e = run_experiment(cfg, Policy("evt_aware"), T, warmup, seed)
        res_b = run_experiment(cfg, Policy("queue_aware_baseline"), T, warmup, seed)
        if res_e.arrival_checksum != res_b.arrival_checksum:
            raise AssertionError("matched-seed arrival streams diverged")

        def _row(res):
            s = res.summary
            tail_s = s["cluster_size_tail"]
            non_s = s["cluster_size_nontail"]
            return {
                "exceed_freq_mean": float(np.mean(s["exceed_freq"])) if s["exceed_freq"] else float("nan"),
                "ee_median": s.get("ee_median", float("nan")),
                "tail_mean_S": tail_s["mean"] if tail_s else None,
                "nontail_mean_S": non_s["mean"] if non_s else None,
            }

        rows.append({"seed": seed, "evt_aware": _row(res_e), "baseline": _row(res_b)})

    n_better_exceed = sum(
        1 for r in rows if r["evt_aware"]["exceed_freq_mean"] <= r["baseline"]["exceed_freq_mean"]
    )
    infeasible = [
        r["seed"]
        for r in rows
        if r["evt_aware"]["exceed_freq_mean"] > 0.5 and r["baseline"]["exceed_freq_mean"] > 0.5
    ]
    return {
        "seeds": seeds,
        "T": T_eff,
        "warmup": warm_eff,
        "per_seed": rows,
        "evt_exceed_leq_baseline_count": n_better_exceed,
        "evt_ee_median": float(np.median([r["evt_aware"]["ee_median"] for r in rows])),
        "baseline_ee_median": float(np.median([r["baseline"]["ee_median"] for r in rows])),
        "infeasible_seeds": infeasible,
        "overloaded": bool(len(infeasible) == len(rows)),
        "low_confidence": bool(len(seeds) < 3 or (T_eff - warm_eff) < 1000),
    }


# ---------------------------------------------------------------------------
# per-slot CSV
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def write_metrics_csv(path, metrics: SlotMetrics) -> None:
    """Fixed-schema per-slot CSV, one row per (slot, UE); byte-stable."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i in range(len(metrics)):
            t = int(metrics.t[i])
            for k in range(metrics.Q.shape[1]):
                w.writerow(
                    (
                        t,
                        k,
                        _fmt(metrics.Q[i, k]),
                        _fmt(metrics.Z[i, k]),
                        _fmt(metrics.rate[i, k]),
                        _fmt(metrics.sinr[i, k]),
                        int(metrics.S[i, k]),
                        _fmt(metrics.p_tot[i]),
                        _fmt(metrics.ee[i]),
                        int(metrics.sca_iters[i]),
                        _fmt(metrics.obj[i]),
                    )
                )


def read_metrics_csv(path) -> SlotMetrics:
    """Parse a per-slot CSV back into columnar metrics (exact floats)."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns {header}")
        rows = list(r)
    if not rows:
        K = 0
        empty = np.zeros((0, 0))
        return SlotMetrics(
            t=np.zeros(0, dtype=int),
            Q=empty,
            Z=empty,
            rate=empty,
            sinr=empty,
            S=np.zeros((0, 0), dtype=int),
            p_tot=np.zeros(0),
            ee=np.zeros(0),
            sum_rate=np.zeros(0),
            sca_iters=np.zeros(0, dtype=int),
            obj=np.zeros(0),
        )
    K = max(int(row[1]) for row in rows) + 1
    n = len(rows) // K
    m = SlotMetrics(
        t=np.zeros(n, dtype=int),
        Q=np.zeros((n, K)),
        Z=np.zeros((n, K)),
        rate=np.zeros((n, K)),
        sinr=np.zeros((n, K)),
        S=np.zeros((n, K), dtype=int),
        p_tot=np.zeros(n),
        ee=np.zeros(n),
        sum_rate=np.zeros(n),
        sca_iters=np.zeros(n, dtype=int),
        obj=np.zeros(n),
    )
    for idx, row in enumerate(rows):
        i, k = divmod(idx, K)
        m.t[i] = int(row[0])
        m.Q[i, k] = float(row[2])
        m.Z[i, k] = float(row[3])
        m.rate[i, k] = float(row[4])
        m.sinr[i, k] = float(row[5])
        m.S[i, k] = int(row[6])
        m.p_tot[i] = float(row[7])
        m.ee[i] = float(row[8])
        m.sca_iters[i] = int(row[9])
        m.obj[i] = float(row[10])
    m.sum_rate[:] = m.rate.sum(axis=1)
    return m
