"""Simulated trajectory and labeled-noise dataset generation.

Five analytic baseline trajectories (two straight-line profiles, rectangle,
circle, sine wave) are sampled at 100 Hz.  Ideal specific force and angular
rate follow from closed-form differentiation; graded white Gaussian noise is
then injected per sample on the six inertial axes and the three position
axes, labeled with the generating standard deviations, to form the training
and benchmarking datasets.

Conventions
-----------
* Positions and ground truth live in a local NED tangent plane; the log file
  stores GNSS fixes geodetically and ground truth in NED meters anchored at
  the first fix, so an evaluator anchored at the first fix shares the frame.
* IMU samples carry the interval-average (midpoint) specific force and rate,
  matching how rate sensors integrate internally; ground-truth positions are
  point values at the sample instants.
* Randomness uses the counter-based Philox generator keyed by
  (seed, trajectory index, level index), so every stream is an independent,
  platform-stable substream.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ins import TangentFrame, gravity_ned

__all__ = [
    "TrajectorySpec",
    "IdealTrajectory",
    "NoiseGrid",
    "NoisyStream",
    "Dataset",
    "STREAM_HEADER",
    "LABELS_HEADER",
    "generate_ideal",
    "make_noise_grid",
    "corrupt",
    "build_dataset",
    "default_specs",
    "window_split",
    "extract_windows",
    "write_stream",
    "read_stream",
    "write_dataset",
    "read_dataset",
    "stream_rng",
]

STREAM_HEADER = ["t", "fx", "fy", "fz", "wx", "wy", "wz",
                 "lat", "lon", "h", "gt_n", "gt_e", "gt_d"]
LABELS_HEADER = ["traj_id", "level_k", "sigma_a", "sigma_g", "sigma_p"]

DEFAULT_ORIGIN = (np.radians(40.0), np.radians(15.0), 50.0)
IMU_RATE_HZ = 100.0

KINDS = ("straight", "rectangle", "circle", "sine")


@dataclass(frozen=True)
class TrajectorySpec:
    """Analytic trajectory description.

    Geometry parameters are used per kind: ``radius`` for circles, ``amplitude``
    and ``wavelength`` for sine waves, ``leg_length`` and ``turn_s`` (corner
    arc duration) for rectangles.
    """

    kind: str
    duration_s: float
    speed: float
    radius: float = 50.0
    amplitude: float = 20.0
    wavelength: float = 100.0
    leg_length: float = 80.0
    turn_s: float = 5.0
    origin: tuple[float, float, float] = DEFAULT_ORIGIN
    traj_id: str = ""

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if not 100.0 <= self.duration_s <= 500.0:
            raise ValueError(f"duration {self.duration_s}s outside [100, 500]")
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        for name in ("radius", "amplitude", "wavelength", "leg_length", "turn_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.traj_id:
            object.__setattr__(self, "traj_id", f"{self.kind}-{self.speed:g}mps")


@dataclass
class IdealTrajectory:
    """Noise-free trajectory sampled at 100 Hz.

    ``f_b``/``w_b`` are interval averages over [t, t+dt] (midpoint values);
    ``pos_ned``/``vel_ned``/``yaw``/``att`` are point values at ``t``.
    """

    traj_id: str
    spec: TrajectorySpec
    t: np.ndarray
    pos_ned: np.ndarray
    vel_ned: np.ndarray
    yaw: np.ndarray
    att: np.ndarray
    f_b: np.ndarray
    w_b: np.ndarray

    @property
    def frame(self) -> TangentFrame:
        return TangentFrame(*self.spec.origin)


@dataclass(frozen=True)
class NoiseGrid:
    """K uniformly spaced noise levels for inertial and position noise."""

    sigma_a: np.ndarray
    sigma_g: np.ndarray
    sigma_p: np.ndarray

    def __post_init__(self) -> None:
        if len(self.sigma_a) < 2:
            raise ValueError("noise grid needs at least 2 levels")
        if not len(self.sigma_a) == len(self.sigma_g) == len(self.sigma_p):
            raise ValueError("grid arrays must have equal length")

    @property
    def K(self) -> int:
        return len(self.sigma_a)

    def level(self, k: int) -> tuple[float, float, float]:
        """Zero-based level index -> (sigma_a, sigma_g, sigma_p)."""
        return float(self.sigma_a[k]), float(self.sigma_g[k]), float(self.sigma_p[k])


def make_noise_grid(
    K: int = 25,
    sigma_a_range: tuple[float, float] = (0.001, 0.02),
    sigma_g_range: tuple[float, float] = (0.001, 0.02),
    sigma_p_range: tuple[float, float] = (1.5, 3.0),
) -> NoiseGrid:
    """Uniform grids over the configured ranges, endpoints included."""
    return NoiseGrid(
        sigma_a=np.linspace(*sigma_a_range, K),
        sigma_g=np.linspace(*sigma_g_range, K),
        sigma_p=np.linspace(*sigma_p_range, K),
    )


@dataclass
class NoisyStream:
    """One corrupted trajectory log plus its noise labels.

    ``fix_geo`` holds geodetic GNSS fixes (NaN rows off fix epochs);
    ``gt_ned`` is ground truth in the tangent frame anchored at the first
    fix.  ``fix_ned`` is derived from the stored geodetic values the same way
    a reader would derive it, so written/reloaded streams agree exactly.
    """

    traj_id: str
    level_k: int
    sigma_a: float
    sigma_g: float
    sigma_p: float
    t: np.ndarray
    f: np.ndarray
    w: np.ndarray
    fix_mask: np.ndarray
    fix_geo: np.ndarray
    gt_ned: np.ndarray

    @property
    def n_epochs(self) -> int:
        return len(self.t)

    @property
    def anchor(self) -> TangentFrame:
        i0 = int(np.argmax(self.fix_mask))
        if not self.fix_mask[i0]:
            raise ValueError("stream contains no GNSS fixes")
        return TangentFrame(*self.fix_geo[i0])

    def fix_ned(self) -> np.ndarray:
        """NED positions of the fixes relative to the first fix (NaN off-fix)."""
        frame = self.anchor
        out = np.full_like(self.fix_geo, np.nan)
        idx = np.flatnonzero(self.fix_mask)
        sn, se = frame._scales
        out[idx, 0] = (self.fix_geo[idx, 0] - frame.lat0) * sn
        out[idx, 1] = (self.fix_geo[idx, 1] - frame.lon0) * se
        out[idx, 2] = -(self.fix_geo[idx, 2] - frame.h0)
        return out


@dataclass
class Dataset:
    """All (trajectory x noise level) streams plus their generators."""

    streams: list[NoisyStream]
    ideals: dict[str, IdealTrajectory]
    grid: NoiseGrid
    seed: int
    gnss_rate_hz: float


# ---------------------------------------------------------------------------
# closed-form kinematics
# ---------------------------------------------------------------------------

def _kinematics(spec: TrajectorySpec, t: np.ndarray):
    """Analytic (pos, vel, acc) in NED meters/SI at times ``t``."""
    n = len(t)
    pos = np.zeros((n, 3))
    vel = np.zeros((n, 3))
    acc = np.zeros((n, 3))
    v = spec.speed

    if spec.kind == "straight":
        pos[:, 0] = v * t
        vel[:, 0] = v
    elif spec.kind == "circle":
        om = v / spec.radius
        th = om * t
        pos[:, 0] = spec.radius * np.sin(th)
        pos[:, 1] = spec.radius * (1.0 - np.cos(th))
        vel[:, 0] = v * np.cos(th)
        vel[:, 1] = v * np.sin(th)
        acc[:, 0] = -v * om * np.sin(th)
        acc[:, 1] = v * om * np.cos(th)
    elif spec.kind == "sine":
        k = 2.0 * np.pi / spec.wavelength
        ph = k * v * t
        pos[:, 0] = v * t
        pos[:, 1] = spec.amplitude * np.sin(ph)
        vel[:, 0] = v
        vel[:, 1] = spec.amplitude * k * v * np.cos(ph)
        acc[:, 1] = -spec.amplitude * (k * v) ** 2 * np.sin(ph)
    elif spec.kind == "rectangle":
        _rectangle_kinematics(spec, t, pos, vel, acc)
    return pos, vel, acc


def _rectangle_kinematics(spec, t, pos, vel, acc):
    """Rectangle with constant-rate quarter-circle corners (right turns).

    Segment durations are snapped to the 100 Hz sample grid so that no sample
    interval straddles a leg/arc boundary; midpoint sensor samples then equal
    exact interval averages.  The geometry shift is at most half a sample of
    travel.
    """
    dt = 1.0 / IMU_RATE_HZ
    v = spec.speed
    leg_t = max(1, round(spec.leg_length / v / dt)) * dt
    turn_t = max(1, round(spec.turn_s / dt)) * dt
    om = (np.pi / 2.0) / turn_t
    r_c = v / om
    lap = 4.0 * (leg_t + turn_t)

    # segment table for one lap: (t0, kind, p0, psi0), built by walking the lap
    segs = []
    p = np.zeros(2)
    psi = 0.0
    t0 = 0.0
    for _ in range(4):
        segs.append((t0, "leg", p.copy(), psi))
        p = p + v * leg_t * np.array([np.cos(psi), np.sin(psi)])
        t0 += leg_t
        segs.append((t0, "arc", p.copy(), psi))
        center = p + r_c * np.array([-np.sin(psi), np.cos(psi)])
        psi += np.pi / 2.0
        p = center - r_c * np.array([-np.sin(psi), np.cos(psi)])
        t0 += turn_t

    tau = np.mod(t, lap)
    bounds = [s[0] for s in segs] + [lap]
    for i, (s0, kind, p0, psi0) in enumerate(segs):
        # final segment takes tau == lap should float mod land there
        m = (tau >= s0) & ((tau < bounds[i + 1]) | (i == len(segs) - 1))
        if not np.any(m):
            continue
        dt_seg = tau[m] - s0
        if kind == "leg":
            u = np.array([np.cos(psi0), np.sin(psi0)])
            pos[m, 0] = p0[0] + v * dt_seg * u[0]
            pos[m, 1] = p0[1] + v * dt_seg * u[1]
            vel[m, 0] = v * u[0]
            vel[m, 1] = v * u[1]
        else:
            center = p0 + r_c * np.array([-np.sin(psi0), np.cos(psi0)])
            psi_t = psi0 + om * dt_seg
            pos[m, 0] = center[0] - r_c * (-np.sin(psi_t))
            pos[m, 1] = center[1] - r_c * np.cos(psi_t)
            vel[m, 0] = v * np.cos(psi_t)
            vel[m, 1] = v * np.sin(psi_t)
            acc[m, 0] = -v * om * np.sin(psi_t)
            acc[m, 1] = v * om * np.cos(psi_t)


def generate_ideal(spec: TrajectorySpec) -> IdealTrajectory:
    """Sample the analytic trajectory and derive ideal sensor streams."""
    dt = 1.0 / IMU_RATE_HZ
    n = int(round(spec.duration_s * IMU_RATE_HZ))
    t = np.arange(n) * dt
    tm = t + 0.5 * dt

    pos, vel, _ = _kinematics(spec, t)
    pos_m, vel_m, acc_m = _kinematics(spec, tm)

    def heading(vv):
        return np.arctan2(vv[:, 1], vv[:, 0])

    yaw = heading(vel)
    yaw_m = heading(vel_m)
    h2 = vel_m[:, 0] ** 2 + vel_m[:, 1] ** 2
    yaw_rate_m = (vel_m[:, 0] * acc_m[:, 1] - vel_m[:, 1] * acc_m[:, 0]) / h2

    # level attitude: body x along track, z down -> R_nb = Rz(yaw)
    att = np.zeros((n, 4))
    att[:, 0] = np.cos(yaw / 2.0)
    att[:, 3] = np.sin(yaw / 2.0)

    # gravity at the (midpoint) instantaneous geodetic position
    frame = TangentFrame(*spec.origin)
    sn, se = frame._scales
    lat_m = spec.origin[0] + pos_m[:, 0] / sn
    h_m = spec.origin[2] - pos_m[:, 2]
    g_m = np.array([gravity_ned(la, hh)[2] for la, hh in zip(lat_m, h_m)])

    c, s = np.cos(yaw_m), np.sin(yaw_m)
    f_b = np.empty((n, 3))
    f_b[:, 0] = c * acc_m[:, 0] + s * acc_m[:, 1]
    f_b[:, 1] = -s * acc_m[:, 0] + c * acc_m[:, 1]
    f_b[:, 2] = acc_m[:, 2] - g_m
    w_b = np.zeros((n, 3))
    w_b[:, 2] = yaw_rate_m

    return IdealTrajectory(
        traj_id=spec.traj_id, spec=spec, t=t, pos_ned=pos, vel_ned=vel,
        yaw=yaw, att=att, f_b=f_b, w_b=w_b,
    )


# ---------------------------------------------------------------------------
# noise injection
# ---------------------------------------------------------------------------

def stream_rng(seed: int, traj_idx: int, level_idx: int) -> np.random.Generator:
    """Independent counter-based generator for one (trajectory, level) pair."""
    key = np.array(
        [seed % 2**64, (traj_idx << 32) + level_idx], dtype=np.uint64
    )
    return np.random.Generator(np.random.Philox(key=key))


def _fix_indices(n: int, gnss_rate_hz: float) -> np.ndarray:
    step = IMU_RATE_HZ / gnss_rate_hz
    if abs(step - round(step)) > 1e-9:
        raise ValueError(f"GNSS rate {gnss_rate_hz} Hz does not divide 100 Hz")
    return np.arange(0, n, int(round(step)))


def corrupt(
    ideal: IdealTrajectory,
    level: tuple[float, float, float],
    rng: np.random.Generator,
    level_k: int = 0,
    gnss_rate_hz: float = 100.0,
) -> NoisyStream:
    """Add per-sample white Gaussian noise at the given level.

    Draw order is fixed (specific force, angular rate, fix positions) so a
    seeded generator reproduces the stream exactly.  Position noise is added
    in NED meters and only then converted to geodetic for the log.
    """
    sa, sg, sp = level
    n = len(ideal.t)
    f = ideal.f_b + sa * rng.standard_normal((n, 3))
    w = ideal.w_b + sg * rng.standard_normal((n, 3))

    idx = _fix_indices(n, gnss_rate_hz)
    pos_noisy = ideal.pos_ned[idx] + sp * rng.standard_normal((len(idx), 3))

    frame = ideal.frame
    sn, se = frame._scales
    fix_geo = np.full((n, 3), np.nan)
    fix_geo[idx, 0] = frame.lat0 + pos_noisy[:, 0] / sn
    fix_geo[idx, 1] = frame.lon0 + pos_noisy[:, 1] / se
    fix_geo[idx, 2] = frame.h0 - pos_noisy[:, 2]
    fix_mask = np.zeros(n, dtype=bool)
    fix_mask[idx] = True

    gt_anchor = pos_noisy[0]
    return NoisyStream(
        traj_id=ideal.traj_id, level_k=level_k,
        sigma_a=sa, sigma_g=sg, sigma_p=sp,
        t=ideal.t.copy(), f=f, w=w,
        fix_mask=fix_mask, fix_geo=fix_geo,
        gt_ned=ideal.pos_ned - gt_anchor,
    )


def default_specs(duration_s: float = 100.0) -> list[TrajectorySpec]:
    """The five baseline trajectories (two straight profiles at different speeds)."""
    return [
        TrajectorySpec(kind="straight", duration_s=duration_s, speed=5.0),
        TrajectorySpec(kind="straight", duration_s=duration_s, speed=12.0),
        TrajectorySpec(kind="rectangle", duration_s=duration_s, speed=6.0),
        TrajectorySpec(kind="circle", duration_s=duration_s, speed=8.0, radius=60.0),
        TrajectorySpec(kind="sine", duration_s=duration_s, speed=10.0,
                       amplitude=25.0, wavelength=150.0),
    ]


def build_dataset(
    specs: list[TrajectorySpec],
    grid: NoiseGrid,
    seed: int,
    gnss_rate_hz: float = 100.0,
) -> Dataset:
    """All (trajectory x level) corrupted streams with independent RNG substreams."""
    streams = []
    ideals = {}
    for j, spec in enumerate(specs):
        ideal = generate_ideal(spec)
        ideals[spec.traj_id] = ideal
        for k in range(grid.K):
            rng = stream_rng(seed, j, k)
            streams.append(
                corrupt(ideal, grid.level(k), rng, level_k=k,
                        gnss_rate_hz=gnss_rate_hz)
            )
    return Dataset(streams=streams, ideals=ideals, grid=grid, seed=seed,
                   gnss_rate_hz=gnss_rate_hz)


# ---------------------------------------------------------------------------
# training windows
# ---------------------------------------------------------------------------

def window_split(traj_id: str, level_k: int, window_idx: int) -> str:
    """Stable 80/20 train/val assignment hashed from the window identity."""
    digest = hashlib.sha1(f"{traj_id}|{level_k}|{window_idx}".encode()).digest()
    return "val" if int.from_bytes(digest[:8], "big") % 5 == 0 else "train"


def extract_windows(
    ds: Dataset, which: str, window_len: int = 100
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Non-overlapping labeled windows split into train/val sets.

    ``which`` selects the inertial windows ("sigma_q": 6 x window channels,
    labels [sa,sa,sa,sg,sg,sg]) or the position windows ("sigma_r": 3 x
    window of noisy NED positions, labels [sp,sp,sp]).
    """
    if which not in ("sigma_q", "sigma_r"):
        raise ValueError(f"which must be sigma_q or sigma_r, got {which!r}")
    xs_tr, ys_tr, xs_va, ys_va = [], [], [], []
    for stream in ds.streams:
        if which == "sigma_q":
            data = np.concatenate([stream.f.T, stream.w.T], axis=0)
            label = np.array([stream.sigma_a] * 3 + [stream.sigma_g] * 3)
        else:
            ned = stream.fix_ned()
            fix_rows = ned[stream.fix_mask]
            data = fix_rows.T
            label = np.full(3, stream.sigma_p)
        n_w = data.shape[1] // window_len
        for wi in range(n_w):
            x = data[:, wi * window_len : (wi + 1) * window_len]
            if window_split(stream.traj_id, stream.level_k, wi) == "val":
                xs_va.append(x)
                ys_va.append(label)
            else:
                xs_tr.append(x)
                ys_tr.append(label)
    return (np.array(xs_tr), np.array(ys_tr), np.array(xs_va), np.array(ys_va))


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_stream(stream: NoisyStream, path: Path) -> None:
    """Trajectory-log CSV; GNSS columns are empty off fix epochs."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(STREAM_HEADER)
        for i in range(stream.n_epochs):
            row = [_fmt(stream.t[i])]
            row += [_fmt(v) for v in stream.f[i]]
            row += [_fmt(v) for v in stream.w[i]]
            if stream.fix_mask[i]:
                row += [_fmt(v) for v in stream.fix_geo[i]]
            else:
                row += ["", "", ""]
            row += [_fmt(v) for v in stream.gt_ned[i]]
            wr.writerow(row)


def read_stream(
    path: Path, traj_id: str = "", level_k: int = 0,
    labels: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> NoisyStream:
    """Parse a trajectory-log CSV back into a stream."""
    path = Path(path)
    with path.open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != STREAM_HEADER:
            raise ValueError(
                f"{path.name}: malformed header {header!r}, expected {STREAM_HEADER}"
            )
        rows = list(rd)
    n = len(rows)
    t = np.empty(n)
    f = np.empty((n, 3))
    w = np.empty((n, 3))
    fix_geo = np.full((n, 3), np.nan)
    fix_mask = np.zeros(n, dtype=bool)
    gt = np.empty((n, 3))
    for i, row in enumerate(rows):
        if len(row) != len(STREAM_HEADER):
            raise ValueError(f"{path.name}: row {i + 2} has {len(row)} fields")
        t[i] = float(row[0])
        f[i] = [float(v) for v in row[1:4]]
        w[i] = [float(v) for v in row[4:7]]
        if row[7] != "":
            fix_geo[i] = [float(v) for v in row[7:10]]
            fix_mask[i] = True
        gt[i] = [float(v) for v in row[10:13]]
    return NoisyStream(
        traj_id=traj_id or path.stem, level_k=level_k,
        sigma_a=labels[0], sigma_g=labels[1], sigma_p=labels[2],
        t=t, f=f, w=w, fix_mask=fix_mask, fix_geo=fix_geo, gt_ned=gt,
    )


def stream_filename(traj_id: str, level_k: int) -> str:
    return f"{traj_id}__k{level_k:02d}.csv"


def write_dataset(ds: Dataset, outdir: Path) -> list[Path]:
    """Write every stream plus the labels sidecar; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    labels_path = outdir / "labels.csv"
    with labels_path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(LABELS_HEADER)
        for stream in ds.streams:
            wr.writerow([
                stream.traj_id, stream.level_k,
                _fmt(stream.sigma_a), _fmt(stream.sigma_g), _fmt(stream.sigma_p),
            ])
    written.append(labels_path)
    for stream in ds.streams:
        p = outdir / stream_filename(stream.traj_id, stream.level_k)
        write_stream(stream, p)
        written.append(p)
    return written


def read_dataset(indir: Path) -> list[NoisyStream]:
    """Load every stream listed in the labels sidecar."""
    indir = Path(indir)
    labels_path = indir / "labels.csv"
    with labels_path.open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != LABELS_HEADER:
            raise ValueError(f"labels.csv: malformed header {header!r}")
        rows = list(rd)
    streams = []
    for traj_id, level_k, sa, sg, sp in rows:
        p = indir / stream_filename(traj_id, int(level_k))
        streams.append(
            read_stream(p, traj_id=traj_id, level_k=int(level_k),
                        labels=(float(sa), float(sg), float(sp)))
        )
    return streams
