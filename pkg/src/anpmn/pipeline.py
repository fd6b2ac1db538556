"""Closed-loop error-state UKF over IMU/GNSS streams, four variants, metrics.

Variants
--------
* ``ukf``       constant process/measurement noise
* ``mb-aukf``   innovation-window covariance matching for Q and R
* ``anpn-ukf``  process noise regressed by the inertial-window network
* ``anpmn-ukf`` both covariances regressed and blended with the constants

Filter cadence: strapdown mechanization runs at the IMU rate; the 15-state
UKF predicts once per GNSS fix with the state transition and process noise
accumulated over the elapsed IMU steps (Phi-weighted recursion
``Q <- Phi Q Phi^T + Q_d`` per step, which the plain sum underestimates once
attitude noise leaks into velocity over a full fix interval).  The error
estimate is injected into the nominal state after every update and the
filter mean reset to zero.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adaptive import (
    BlendConfig, InnovationWindow, adapt_Q, adapt_R, blend_Q, blend_R,
    innovation_covariance,
)
from .ins import (
    ERR_DIM,
    ImuSample, NavState, ProcessNoiseSpec, TangentFrame,
    build_F, build_G, discretize_Q, gnss_h, inject_and_reset,
    mechanize, quat_from_rpy,
)
from .net import SigmaNet, infer_sigma_q, infer_sigma_r
from .simdata import NoisyStream
from .ukf import GaussianState, UtParams, compute_weights, predict, update

__all__ = [
    "VARIANTS",
    "RunConfig",
    "RunResult",
    "FixRecord",
    "BenchmarkRow",
    "BenchmarkResult",
    "FilterDivergenceError",
    "default_run_config",
    "run_filter",
    "prmse",
    "benchmark",
]

log = logging.getLogger("anpmn")

VARIANTS = ("ukf", "mb-aukf", "anpn-ukf", "anpmn-ukf")


class FilterDivergenceError(RuntimeError):
    """Covariance trace exceeded the configured ceiling."""


@dataclass(frozen=True)
class RunConfig:
    """Everything one filter run needs besides the stream and the networks."""

    noise: ProcessNoiseSpec
    r_sigma: np.ndarray            # GNSS position noise std per axis, m
    p0_diag: np.ndarray            # initial covariance diagonal, 15 entries
    ut_alpha: float = 1e-3
    ut_beta: float = 2.0
    ut_kappa: float = 0.0
    classic_center_weight: bool = False
    window: int = 100              # innovation window length (fix epochs)
    blend_alpha: float = 0.5
    blend_beta: float = 0.7
    adapt_q: bool = True
    adapt_r: bool = True
    q_diag_only: bool = False      # apply only the diagonal of the matched Q
    init_vel: tuple = (0.0, 0.0, 0.0)
    init_rpy: tuple = (0.0, 0.0, 0.0)
    trace_ceiling: float = 1e9
    log_covariance: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "r_sigma",
                           np.broadcast_to(np.asarray(self.r_sigma, float), (3,)).copy())
        p0 = np.asarray(self.p0_diag, dtype=float)
        if p0.shape != (ERR_DIM,):
            raise ValueError(f"p0_diag needs {ERR_DIM} entries, got {p0.shape}")
        if np.any(p0 < 0) or np.any(self.r_sigma < 0):
            raise ValueError("variances must be >= 0")
        object.__setattr__(self, "p0_diag", p0)


def default_run_config(**overrides) -> RunConfig:
    """Baseline tuning: mid-range sensor noise, 10 m / 1 deg initial bands."""
    deg = np.radians(1.0)
    base = dict(
        noise=ProcessNoiseSpec(sig_a=0.005, sig_g=0.005, sig_ab=1e-4, sig_gb=1e-5),
        r_sigma=np.full(3, 2.0),
        p0_diag=np.array(
            [10.0, 10.0, 10.0,
             0.1, 0.1, 0.1,
             deg**2, deg**2, (2 * deg) ** 2,
             4e-4, 4e-4, 4e-4,
             4e-6, 4e-6, 4e-6]
        ),
    )
    base.update(overrides)
    return RunConfig(**base)


@dataclass
class FixRecord:
    """Filter internals at one GNSS update (for consistency analysis)."""

    t: float
    innovation: np.ndarray
    cov_trace: float
    nav: NavState | None = None
    ba: np.ndarray | None = None
    bg: np.ndarray | None = None
    cov: np.ndarray | None = None


@dataclass
class RunResult:
    variant: str
    traj_id: str
    t: np.ndarray
    est_pos_ned: np.ndarray
    gt_pos_ned: np.ndarray
    prmse_m: float
    runtime_s: float
    fixes: list[FixRecord] = field(default_factory=list)
    gap_times: list[float] = field(default_factory=list)


def prmse(est: np.ndarray, gt: np.ndarray) -> float:
    """Root mean square of the 3-D position error norm."""
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {gt.shape}")
    return float(np.sqrt(np.mean(np.sum((est - gt) ** 2, axis=1))))


def _require_nets(variant: str, net_q, net_r) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant in ("anpn-ukf", "anpmn-ukf") and net_q is None:
        raise ValueError(f"variant {variant!r} requires sigma-Q network weights")
    if variant == "anpmn-ukf" and net_r is None:
        raise ValueError("variant 'anpmn-ukf' requires sigma-R network weights")


def run_filter(
    stream: NoisyStream,
    variant: str,
    cfg: RunConfig,
    net_q: SigmaNet | None = None,
    net_r: SigmaNet | None = None,
) -> RunResult:
    """Run one variant over one stream.  Estimation is strictly causal."""
    _require_nets(variant, net_q, net_r)
    use_q_net = variant in ("anpn-ukf", "anpmn-ukf")
    use_r_net = variant == "anpmn-ukf"
    mb = variant == "mb-aukf"

    t = stream.t
    n = stream.n_epochs
    fix_idx = np.flatnonzero(stream.fix_mask)
    if len(fix_idx) == 0:
        raise ValueError("stream contains no GNSS fixes")
    i0 = int(fix_idx[0])
    frame = TangentFrame(*stream.fix_geo[i0])

    t_start = time.perf_counter()

    nav = NavState(
        lat=stream.fix_geo[i0, 0], lon=stream.fix_geo[i0, 1],
        height=stream.fix_geo[i0, 2],
        vel_ned=np.array(cfg.init_vel, dtype=float),
        att=quat_from_rpy(*cfg.init_rpy),
    )
    ba = np.zeros(3)
    bg = np.zeros(3)
    mean = np.zeros(ERR_DIM)
    P = np.diag(cfg.p0_diag)
    weights = compute_weights(UtParams(
        alpha_ut=cfg.ut_alpha, beta_ut=cfg.ut_beta, kappa_ut=cfg.ut_kappa,
        n=ERR_DIM, classic_center_weight=cfg.classic_center_weight,
    ))

    dt_nom = float(np.median(np.diff(t))) if n > 1 else 0.01
    qc_const = cfg.noise.qc_diag(dt_nom)
    r_const = np.diag(cfg.r_sigma**2)
    blend_cfg = BlendConfig(
        alpha_blend=cfg.blend_alpha, beta_blend=cfg.blend_beta,
        q_const=qc_const, r_const=r_const,
    )

    qc_cur = qc_const
    r_cur = r_const
    q_hat = None
    imu_buf: deque = deque(maxlen=100)
    since_refresh = 0
    resid_buf: deque = deque(maxlen=100)
    innov_win = InnovationWindow(capacity=cfg.window)

    phi_acc = np.eye(ERR_DIM)
    q_acc = np.zeros((ERR_DIM, ERR_DIM))
    eye15 = np.eye(ERR_DIM)

    est = np.zeros((n, 3))
    est[i0] = frame.to_ned(nav.lat, nav.lon, nav.height)
    fixes: list[FixRecord] = []
    gaps: list[float] = []

    for i in range(i0 + 1, n):
        dt = float(t[i] - t[i - 1])
        if dt > 1.0:
            gaps.append(float(t[i]))
            log.warning("stream gap of %.2f s ending at t=%.2f", dt, t[i])
        imu = ImuSample(t=float(t[i - 1]), f_b=stream.f[i - 1], w_b=stream.w[i - 1])
        F = build_F(nav, imu.f_b - ba)
        G = build_G(nav)
        nav = mechanize(nav, imu, ba, bg, dt)
        phi_s = eye15 + F * dt
        q_acc = phi_s @ q_acc @ phi_s.T + discretize_Q(G, qc_cur, dt)
        phi_acc = phi_s @ phi_acc

        imu_buf.append(np.concatenate([stream.f[i - 1], stream.w[i - 1]]))
        since_refresh += 1
        if use_q_net and since_refresh >= 100 and len(imu_buf) == 100:
            sig6 = infer_sigma_q(net_q, np.array(imu_buf).T)
            qc_net = qc_const.copy()
            qc_net[0:6] = sig6**2 * dt_nom  # bias slots stay at the constants
            qc_cur = blend_Q(qc_net, blend_cfg)
            since_refresh = 0

        if stream.fix_mask[i]:
            z = frame.to_ned(*stream.fix_geo[i])
            nav_ned = frame.to_ned(nav.lat, nav.lon, nav.height)
            if use_r_net:
                resid_buf.append(z - nav_ned)
                if len(resid_buf) == 100:
                    sig3 = infer_sigma_r(net_r, np.array(resid_buf).T)
                    r_cur = blend_R(np.diag(sig3**2), blend_cfg)

            Q_used = q_acc
            if mb and cfg.adapt_q and q_hat is not None:
                Q_used = q_acc.copy()
                block = q_hat[:9, :9]
                if cfg.q_diag_only:
                    block = np.diag(np.diag(block))
                Q_used[:9, :9] = block

            phi = phi_acc
            pred = predict(GaussianState(mean, P), lambda x: phi @ x, Q_used, weights)
            r_used = r_cur
            nav_for_h = nav
            res = update(
                pred, lambda dx: gnss_h(dx, nav_for_h, frame), z, r_used, weights
            )
            P = res.state.cov

            if mb:
                innov_win.push(res.innovation)
                if innov_win.full:
                    C = innovation_covariance(innov_win)
                    if cfg.adapt_q:
                        q_hat = adapt_Q(C, res.gain)
                    if cfg.adapt_r:
                        r_cur = adapt_R(C, res.innovation_cov - r_used)

            nav, ba, bg = inject_and_reset(nav, res.state.mean, ba, bg, frame)
            mean = np.zeros(ERR_DIM)
            phi_acc = np.eye(ERR_DIM)
            q_acc = np.zeros((ERR_DIM, ERR_DIM))

            tr = float(np.trace(P))
            if tr > cfg.trace_ceiling:
                raise FilterDivergenceError(
                    f"trace(P)={tr:.3e} exceeded ceiling {cfg.trace_ceiling:.3e} "
                    f"at t={t[i]:.2f} ({variant}, {stream.traj_id})"
                )
            rec = FixRecord(t=float(t[i]), innovation=res.innovation, cov_trace=tr)
            if cfg.log_covariance:
                rec.nav = nav
                rec.ba = ba.copy()
                rec.bg = bg.copy()
                rec.cov = P.copy()
            fixes.append(rec)

        est[i] = frame.to_ned(nav.lat, nav.lon, nav.height)

    runtime = time.perf_counter() - t_start
    return RunResult(
        variant=variant, traj_id=stream.traj_id, t=t.copy(),
        est_pos_ned=est, gt_pos_ned=stream.gt_ned.copy(),
        prmse_m=prmse(est, stream.gt_ned), runtime_s=runtime,
        fixes=fixes, gap_times=gaps,
    )


# ---------------------------------------------------------------------------
# benchmark harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkRow:
    traj_id: str
    level_k: int
    variant: str
    prmse_m: float
    runtime_s: float


@dataclass
class BenchmarkResult:
    rows: list[BenchmarkRow]

    def mean_prmse(self) -> dict[str, float]:
        out: dict[str, list[float]] = {}
        for r in self.rows:
            out.setdefault(r.variant, []).append(r.prmse_m)
        return {v: float(np.mean(vals)) for v, vals in out.items()}

    def improvement_over(self, ours: str = "anpmn-ukf") -> dict[str, float]:
        """Percent PRMSE reduction of ``ours`` relative to each baseline."""
        means = self.mean_prmse()
        if ours not in means:
            return {}
        return {
            v: 100.0 * (m - means[ours]) / m
            for v, m in means.items()
            if v != ours
        }

    def runtime_stats(self) -> dict[str, tuple[float, float, float]]:
        """variant -> (mean, min, max) wall-clock seconds per trajectory."""
        out: dict[str, list[float]] = {}
        for r in self.rows:
            out.setdefault(r.variant, []).append(r.runtime_s)
        return {
            v: (float(np.mean(xs)), float(np.min(xs)), float(np.max(xs)))
            for v, xs in out.items()
        }


def _bench_one(args) -> BenchmarkRow:
    stream, variant, cfg, net_q, net_r = args
    res = run_filter(stream, variant, cfg, net_q=net_q, net_r=net_r)
    return BenchmarkRow(
        traj_id=stream.traj_id, level_k=stream.level_k, variant=variant,
        prmse_m=res.prmse_m, runtime_s=res.runtime_s,
    )


def benchmark(
    streams: list[NoisyStream],
    variants: list[str],
    cfg: RunConfig,
    net_q: SigmaNet | None = None,
    net_r: SigmaNet | None = None,
    jobs: int = 1,
) -> BenchmarkResult:
    """PRMSE/runtime comparison over (stream x variant); order-independent."""
    tasks = [(s, v, cfg, net_q, net_r) for s in streams for v in variants]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_bench_one, tasks))
    else:
        rows = [_bench_one(task) for task in tasks]
    rows.sort(key=lambda r: (r.traj_id, r.level_k, VARIANTS.index(r.variant)))
    return BenchmarkResult(rows=rows)
