"""Strapdown INS mechanization and the 15-state error-state model.

State conventions
-----------------
* NavState holds the nominal state: geodetic position (WGS-84, radians and
  meters), NED velocity, and a unit quaternion rotating body vectors into NED.
* The error state is a flat 15-vector ordered ``[dp, dv, dpsi, ba, bg]``:
  position error (NED meters), velocity error, small-angle attitude error
  (navigation frame, applied as a left rotation ``R <- exp([dpsi]x) R``), and
  residual accelerometer/gyro biases (measured = true + bias).
* The filter works in a local NED tangent frame anchored at the first GNSS
  fix; geodetic <-> NED conversion happens only at the I/O boundary.

Earth rotation and transport rate are neglected: the target platforms are
low-speed ground vehicles with GNSS updates at most minutes apart, where both
effects are far below the sensor noise floor.

Error dynamics blocks (continuous time), everything else zero:

    dp_dot   = dv                      F[0:3, 3:6]   = I
    dv_dot   = -[R f_b]x dpsi - R ba   F[3:6, 6:9]   = -skew(R f_b)
                                       F[3:6, 9:12]  = -R
    dpsi_dot = -R bg                   F[6:9, 12:15] = -R

with R the body-to-NED rotation of the nominal attitude.  The noise
distribution G maps [n_a, n_g, n_ab, n_gb] (12-vector) into [dv, dpsi, ba, bg].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DP", "DV", "DPSI", "BA", "BG", "ERR_DIM",
    "NavState", "ImuSample", "GnssFix", "ProcessNoiseSpec", "TangentFrame",
    "skew", "quat_mul", "quat_from_rotvec", "rotvec_from_quat", "quat_to_mat",
    "quat_from_rpy", "rpy_from_quat", "quat_normalize",
    "gravity_ned", "radii_of_curvature", "mechanize",
    "build_F", "build_G", "discretize_Q", "gnss_h", "inject_and_reset",
]

# error-state slices, flattening order [dp, dv, dpsi, ba, bg]
DP = slice(0, 3)
DV = slice(3, 6)
DPSI = slice(6, 9)
BA = slice(9, 12)
BG = slice(12, 15)
ERR_DIM = 15

# WGS-84 ellipsoid and normal gravity constants
_WGS84_A = 6378137.0
_WGS84_F = 1.0 / 298.257223563
_WGS84_E2 = _WGS84_F * (2.0 - _WGS84_F)
_GAMMA_E = 9.7803253359          # equatorial normal gravity, m/s^2
_SOMIGLIANA_K = 1.931852652458e-3


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


# ---------------------------------------------------------------------------
# quaternion helpers, scalar-first [w, x, y, z], body -> NED convention
# ---------------------------------------------------------------------------

def quat_mul(q: np.ndarray, r: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q
    w2, x2, y2, z2 = r
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    """Axis-angle exponential; series branch keeps small angles exact."""
    angle = np.linalg.norm(v)
    if angle < 1e-10:
        # sin(a/2)/a ~ 1/2 - a^2/48
        half_sinc = 0.5 - angle * angle / 48.0
        return quat_normalize(np.concatenate(([1.0 - angle * angle / 8.0], half_sinc * v)))
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) / angle * v))


def rotvec_from_quat(q: np.ndarray) -> np.ndarray:
    """Logarithm map, inverse of ``quat_from_rotvec``."""
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < 1e-10:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(vec_norm, q[0])
    return angle / vec_norm * q[1:]


def quat_to_mat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix applying the quaternion (body -> NED for NavState.att)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Quaternion from roll/pitch/yaw (NED: yaw about down, ZYX order)."""
    qz = np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)])
    qy = np.array([np.cos(pitch / 2), 0.0, np.sin(pitch / 2), 0.0])
    qx = np.array([np.cos(roll / 2), np.sin(roll / 2), 0.0, 0.0])
    return quat_mul(quat_mul(qz, qy), qx)


def rpy_from_quat(q: np.ndarray) -> tuple[float, float, float]:
    """ZYX Euler angles (roll, pitch, yaw), inverse of ``quat_from_rpy``."""
    R = quat_to_mat(q)
    pitch = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return float(roll), float(pitch), float(yaw)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class NavState:
    """Nominal strapdown state: geodetic position, NED velocity, attitude."""

    lat: float       # rad
    lon: float       # rad
    height: float    # m
    vel_ned: np.ndarray
    att: np.ndarray  # unit quaternion body -> NED, scalar first

    def __post_init__(self) -> None:
        self.vel_ned = np.asarray(self.vel_ned, dtype=float).reshape(3)
        self.att = np.asarray(self.att, dtype=float).reshape(4)
        if abs(self.lat) > np.pi / 2:
            raise ValueError(f"latitude {self.lat} rad outside [-pi/2, pi/2]")


@dataclass(frozen=True)
class ImuSample:
    """One IMU epoch: specific force and angular rate in the body frame.

    Values represent the average over the sample interval [t, t + dt], which
    is how rate sensors integrate internally.
    """

    t: float
    f_b: np.ndarray  # m/s^2
    w_b: np.ndarray  # rad/s


@dataclass(frozen=True)
class GnssFix:
    """Timestamped geodetic position fix."""

    t: float
    lat: float
    lon: float
    height: float


@dataclass(frozen=True)
class ProcessNoiseSpec:
    """Per-sample (at the IMU rate) noise standard deviations.

    ``sig_a``/``sig_g`` are white-noise stds of one specific-force / angular
    rate sample; ``sig_ab``/``sig_gb`` are per-sample bias random-walk
    increment stds.  ``qc_diag`` converts to the continuous PSD diagonal
    consistent with the first-order discretization Q_d = G Qc G^T dt.
    """

    sig_a: np.ndarray
    sig_g: np.ndarray
    sig_ab: np.ndarray
    sig_gb: np.ndarray

    def __post_init__(self) -> None:
        for name in ("sig_a", "sig_g", "sig_ab", "sig_gb"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy()
            if np.any(v < 0):
                raise ValueError(f"{name} entries must be >= 0")
            object.__setattr__(self, name, v)

    def qc_diag(self, dt: float) -> np.ndarray:
        """Continuous PSD diagonal (12,) for IMU interval ``dt``.

        White measurement noise of per-sample std s has PSD s^2 * dt; a bias
        random walk with per-sample increment std s has PSD s^2 / dt.
        """
        return np.concatenate([
            self.sig_a**2 * dt,
            self.sig_g**2 * dt,
            self.sig_ab**2 / dt,
            self.sig_gb**2 / dt,
        ])


@dataclass(frozen=True)
class TangentFrame:
    """Local NED tangent plane anchored at a geodetic point.

    The mapping is linear in (lat, lon, h) with radii of curvature frozen at
    the anchor, so ``to_ned``/``to_geodetic`` are exact inverses.
    """

    lat0: float
    lon0: float
    h0: float

    @property
    def _scales(self) -> tuple[float, float]:
        rm, rn = radii_of_curvature(self.lat0)
        return rm + self.h0, (rn + self.h0) * np.cos(self.lat0)

    def to_ned(self, lat: float, lon: float, height: float) -> np.ndarray:
        sn, se = self._scales
        return np.array([
            (lat - self.lat0) * sn,
            (lon - self.lon0) * se,
            -(height - self.h0),
        ])

    def to_geodetic(self, ned: np.ndarray) -> tuple[float, float, float]:
        sn, se = self._scales
        return (
            self.lat0 + ned[0] / sn,
            self.lon0 + ned[1] / se,
            self.h0 - ned[2],
        )


# ---------------------------------------------------------------------------
# gravity and geodesy
# ---------------------------------------------------------------------------

def radii_of_curvature(lat: float) -> tuple[float, float]:
    """WGS-84 meridian and prime-vertical radii (R_M, R_N) at ``lat``."""
    s2 = np.sin(lat) ** 2
    den = 1.0 - _WGS84_E2 * s2
    rn = _WGS84_A / np.sqrt(den)
    rm = _WGS84_A * (1.0 - _WGS84_E2) / den**1.5
    return rm, rn


def gravity_ned(lat: float, h: float) -> np.ndarray:
    """Normal gravity as a NED vector [0, 0, g].

    Somigliana model on the WGS-84 ellipsoid with the standard free-air
    height correction.
    """
    s2 = np.sin(lat) ** 2
    g0 = _GAMMA_E * (1.0 + _SOMIGLIANA_K * s2) / np.sqrt(1.0 - _WGS84_E2 * s2)
    g = g0 - (3.0877e-6 - 4.4e-9 * s2) * h + 7.2e-14 * h * h
    return np.array([0.0, 0.0, g])


# ---------------------------------------------------------------------------
# mechanization and error-state model
# ---------------------------------------------------------------------------

def mechanize(
    nav: NavState,
    imu: ImuSample,
    ba: np.ndarray,
    bg: np.ndarray,
    dt: float,
) -> NavState:
    """Advance the nominal state one IMU interval.

    First-order strapdown update: exact axis-angle attitude increment, a
    half-increment rotation correction on the specific force, trapezoidal
    velocity for the position integral, quaternion renormalized each step.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt={dt} outside (0, 0.1] s")
    w = imu.w_b - bg
    f = imu.f_b - ba
    dtheta = w * dt

    R = quat_to_mat(nav.att)
    # rotate specific force through the mid-increment attitude
    f_ned = R @ (f + 0.5 * np.cross(dtheta, f))
    v_new = nav.vel_ned + (f_ned + gravity_ned(nav.lat, nav.height)) * dt
    v_avg = 0.5 * (nav.vel_ned + v_new)

    rm, rn = radii_of_curvature(nav.lat)
    lat = nav.lat + v_avg[0] * dt / (rm + nav.height)
    lon = nav.lon + v_avg[1] * dt / ((rn + nav.height) * np.cos(nav.lat))
    height = nav.height - v_avg[2] * dt

    att = quat_normalize(quat_mul(nav.att, quat_from_rotvec(dtheta)))
    return NavState(lat=lat, lon=lon, height=height, vel_ned=v_new, att=att)


def build_F(nav: NavState, f_b: np.ndarray) -> np.ndarray:
    """Continuous-time error dynamics matrix at the nominal state.

    ``f_b`` is the bias-corrected specific force driving the current step.
    """
    R = quat_to_mat(nav.att)
    F = np.zeros((ERR_DIM, ERR_DIM))
    F[DP, DV] = np.eye(3)
    F[DV, DPSI] = -skew(R @ np.asarray(f_b, dtype=float))
    F[DV, BA] = -R
    F[DPSI, BG] = -R
    return F


def build_G(nav: NavState) -> np.ndarray:
    """Noise distribution matrix mapping [n_a, n_g, n_ab, n_gb] into the state."""
    R = quat_to_mat(nav.att)
    G = np.zeros((ERR_DIM, 12))
    G[DV, 0:3] = R
    G[DPSI, 3:6] = -R
    G[BA, 6:9] = np.eye(3)
    G[BG, 9:12] = np.eye(3)
    return G


def discretize_Q(G: np.ndarray, Qc: np.ndarray, dt: float) -> np.ndarray:
    """First-order discrete process noise Q_d = G Qc G^T dt (symmetric PSD)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    Qc = np.asarray(Qc, dtype=float)
    if Qc.ndim == 1:
        Qc = np.diag(Qc)
    if Qc.shape != (G.shape[1],) * 2:
        raise ValueError(f"Qc shape {Qc.shape} incompatible with G {G.shape}")
    if np.any(np.diag(Qc) < 0):
        raise ValueError("Qc diagonal entries must be >= 0")
    Qd = G @ Qc @ G.T * dt
    return 0.5 * (Qd + Qd.T)


def gnss_h(err: np.ndarray, nav: NavState, frame: TangentFrame) -> np.ndarray:
    """Predicted position measurement: nominal NED position plus dp."""
    return frame.to_ned(nav.lat, nav.lon, nav.height) + err[DP]


def inject_and_reset(
    nav: NavState,
    err: np.ndarray,
    ba: np.ndarray,
    bg: np.ndarray,
    frame: TangentFrame,
) -> tuple[NavState, np.ndarray, np.ndarray]:
    """Fold an estimated error into the nominal state (closed-loop correction).

    Position and velocity are corrected additively, attitude by the
    small-angle rotation exp([dpsi]x) applied in the navigation frame, and
    the bias components accumulate into the running bias estimates.  The
    caller zeroes the filter mean afterwards; the covariance is untouched.
    """
    err = np.asarray(err, dtype=float).reshape(ERR_DIM)
    ned = frame.to_ned(nav.lat, nav.lon, nav.height) + err[DP]
    lat, lon, height = frame.to_geodetic(ned)
    vel = nav.vel_ned + err[DV]
    att = quat_normalize(quat_mul(quat_from_rotvec(err[DPSI]), nav.att))
    nav_new = NavState(lat=lat, lon=lon, height=height, vel_ned=vel, att=att)
    return nav_new, ba + err[BA], bg + err[BG]
