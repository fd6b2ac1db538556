"""Shared harness pieces for pipeline and acceptance tests."""

import numpy as np

from anpmn.ins import (
    ProcessNoiseSpec, quat_from_rotvec, quat_mul, quat_normalize,
    rotvec_from_quat, rpy_from_quat,
)
from anpmn.pipeline import RunConfig, default_run_config
from anpmn.simdata import (
    NoisyStream, TrajectorySpec, corrupt, generate_ideal, stream_rng,
)


def matched_config(sig_a, sig_g, sig_p, **overrides) -> RunConfig:
    """Run config whose constants equal the given simulation noise levels."""
    return default_run_config(
        noise=ProcessNoiseSpec(sig_a=sig_a, sig_g=sig_g, sig_ab=1e-6, sig_gb=1e-7),
        r_sigma=np.full(3, sig_p),
        **overrides,
    )


def truth_init(ideal, **overrides) -> dict:
    """RunConfig overrides that start the filter at the true initial state."""
    out = dict(
        init_vel=tuple(ideal.vel_ned[0]),
        init_rpy=(0.0, 0.0, float(ideal.yaw[0])),
    )
    out.update(overrides)
    return out


def step_change_stream(seed: int, duration_s: float = 300.0,
                       level_lo=(0.003, 0.003, 1.5),
                       level_hi=(0.015, 0.015, 3.0)):
    """Circle trajectory whose sensor noise steps up mid-run.

    The two halves draw from independent substreams of the same seed; GNSS
    fixes stay absolute geodetic positions, so the first (low-noise) fix
    anchors the whole stream.
    """
    spec = TrajectorySpec(kind="circle", duration_s=duration_s, speed=8.0,
                          radius=60.0)
    ideal = generate_ideal(spec)
    a = corrupt(ideal, level_lo, stream_rng(seed, 0, 0), gnss_rate_hz=1.0)
    b = corrupt(ideal, level_hi, stream_rng(seed, 0, 1), gnss_rate_hz=1.0)
    half = ideal.f_b.shape[0] // 2
    stream = NoisyStream(
        traj_id=f"step-circle-{seed}", level_k=0,
        sigma_a=level_lo[0], sigma_g=level_lo[1], sigma_p=level_lo[2],
        t=a.t,
        f=np.vstack([a.f[:half], b.f[half:]]),
        w=np.vstack([a.w[:half], b.w[half:]]),
        fix_mask=a.fix_mask,
        fix_geo=np.vstack([a.fix_geo[:half], b.fix_geo[half:]]),
        gt_ned=a.gt_ned,
    )
    return ideal, stream


# ---------------------------------------------------------------------------
# filter-consistency (NEES) harness
# ---------------------------------------------------------------------------

def nees_setup(ideal, sig_a, sig_g, sig_p, seed):
    """One Monte Carlo consistency run at matched noise levels.

    The true vehicle flies the ideal trajectory exactly.  The filter's
    initial belief is offset by a draw from N(0, P0): position error enters
    through the noisy first fix (so the position band equals sigma_p^2),
    velocity/attitude errors through the run-config initial state, and
    constant sensor biases (drawn from the prior bias bands) ride on the
    measurements.  Returns (run config, stream, x0_error_draw, p0_diag).
    """
    deg = np.radians(1.0)
    p0 = np.array(
        [sig_p**2] * 3 + [0.1] * 3 + [deg**2, deg**2, (2 * deg) ** 2]
        + [4e-4] * 3 + [4e-6] * 3
    )
    rng = stream_rng(seed, 7, 7)
    e0 = np.sqrt(p0) * rng.standard_normal(15)
    e0[0:3] = 0.0  # position error comes from the first-fix noise instead

    stream = corrupt(ideal, (sig_a, sig_g, sig_p), stream_rng(seed, 0, 0),
                     gnss_rate_hz=1.0)
    stream.f = stream.f + e0[9:12]
    stream.w = stream.w + e0[12:15]

    # initial attitude: truth rotated by -dpsi so that truth = exp(dpsi) init
    q_init = quat_normalize(
        quat_mul(quat_from_rotvec(-e0[6:9]), ideal.att[0])
    )
    cfg = matched_config(
        sig_a, sig_g, sig_p,
        p0_diag=p0,
        init_vel=tuple(ideal.vel_ned[0] - e0[3:6]),
        init_rpy=tuple(rpy_from_quat(q_init)),
        log_covariance=True,
    )
    return cfg, stream, e0, p0


def nees_per_fix(result, ideal, e0):
    """NEES value at each logged fix of a consistency run."""
    out = []
    for rec in result.fixes:
        i = int(round(rec.t * 100.0))
        e = np.empty(15)
        idx = i  # streams are sampled at exactly 100 Hz from t=0
        e[0:3] = result.gt_pos_ned[idx] - result.est_pos_ned[idx]
        e[3:6] = ideal.vel_ned[i] - rec.nav.vel_ned
        q_err = quat_mul(ideal.att[i], np.array([1, -1, -1, -1]) * rec.nav.att)
        e[6:9] = rotvec_from_quat(quat_normalize(q_err))
        e[9:12] = e0[9:12] - rec.ba
        e[12:15] = e0[12:15] - rec.bg
        out.append(float(e @ np.linalg.solve(rec.cov, e)))
    return np.array(out)
