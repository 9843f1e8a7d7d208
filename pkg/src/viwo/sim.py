"""Ground-truth trajectory, landmark and measurement synthesis.

The platform drives a constant-speed circle on a plane; the ideal IMU
stream is emitted as interval-equivalent rates (the rotation increment is
exact and the accelerometer value reproduces the analytic velocity change
when integrated with constant inputs), so a noiseless stream integrates
back to the analytic trajectory to integration accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lie import left_jacobian_inv, so3_log
from .states import (GRAVITY, CameraExtrinsics, ImuSample, ImuState,
                     NoiseParams, WheelExtrinsics, WheelSample)

# Shared pinhole model for converting pixel noise to normalized units.
FOCAL_PX = 460.0
IMAGE_SIZE = (640, 480)
FOV_TAN = 1.0  # half-cone of the square field of view (90 deg)
MIN_RANGE = 0.5
MAX_RANGE = 40.0

# Forward-looking camera, yawed 6 degrees toward the circle center so both
# landmark rings stay inside the square field of view. Optical axis near
# body x, image x to the right, image y down.
_CAM_YAW = np.radians(6.0)
DEFAULT_CAM_EXTRINSICS = CameraExtrinsics(
    rot_ic=np.array([[np.cos(_CAM_YAW), -np.sin(_CAM_YAW), 0.0],
                     [np.sin(_CAM_YAW), np.cos(_CAM_YAW), 0.0],
                     [0.0, 0.0, 1.0]])
    @ np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
    pos_ic=np.array([0.05, 0.0, 0.03]),
)
# Wheel-odometer frame aligned with the body, origin at the rear axle.
DEFAULT_WHEEL_EXTRINSICS = WheelExtrinsics(
    rot_oi=np.eye(3),
    pos_io=np.array([-0.3, 0.0, -0.4]),
)

TRUE_BIAS_GYRO = 0.001
TRUE_BIAS_ACCEL = 0.001


@dataclass
class DynamicConfig:
    """Moving-feature scenario parameters."""

    n_static: int = 100
    n_dynamic: int = 20
    sigma_v: float = 20.0
    omega0: float = 0.0
    speed: float = 15.0  # 54 km/h
    velocity_per_frame: bool = False  # draw sigma_v as per-frame displacement


@dataclass
class SimConfig:
    radius: float = 25.0
    speed: float = 5.0
    imu_rate: float = 100.0
    wheel_rate: float = 100.0
    cam_rate: float = 10.0
    n_landmarks: int = 360
    duration: float = 62.832  # two loops at the default radius/speed
    seed: int = 0
    noise: NoiseParams = field(default_factory=NoiseParams)
    dynamic: DynamicConfig | None = None

    def __post_init__(self):
        if min(self.imu_rate, self.wheel_rate, self.cam_rate) <= 0:
            raise ValueError("rates must be positive")
        if not self.imu_rate >= self.wheel_rate >= self.cam_rate:
            raise ValueError("rates must satisfy imu >= wheel >= cam")
        for fast, slow in ((self.imu_rate, self.wheel_rate),
                           (self.imu_rate, self.cam_rate)):
            if abs(fast / slow - round(fast / slow)) > 1e-9:
                raise ValueError("slower rates must divide the IMU rate")


@dataclass
class GroundTruth:
    """Analytic trajectory sampled on the IMU-rate grid."""

    times: np.ndarray
    rots: np.ndarray
    vels: np.ndarray
    poss: np.ndarray
    omegas: np.ndarray  # body rates

    def index_at(self, stamp: float) -> int:
        dt = self.times[1] - self.times[0]
        i = int(round(stamp / dt))
        if not (0 <= i < len(self.times)) or abs(self.times[i] - stamp) > 1e-6:
            raise KeyError(f"stamp {stamp} not on the ground-truth grid")
        return i

    def imu_state_at(self, stamp: float, bg=None, ba=None) -> ImuState:
        i = self.index_at(stamp)
        zero = np.zeros(3)
        return ImuState(self.rots[i], self.vels[i], self.poss[i],
                        zero if bg is None else bg,
                        zero if ba is None else ba)


@dataclass
class MeasurementStream:
    """Time-ordered sensor events for one run."""

    imu: list
    wheel: list
    camera: list  # (stamp, {feature id: normalized 2-vector})
    dynamic_ids: set = field(default_factory=set)

    def merged(self):
        """Yield ('imu'|'wheel'|'camera', item) in processing order."""
        events = []
        for s in self.imu:
            events.append((s.stamp, 0, "imu", s))
        for s in self.wheel:
            events.append((s.stamp, 1, "wheel", s))
        for stamp, obs in self.camera:
            events.append((stamp, 2, "camera", (stamp, obs)))
        events.sort(key=lambda e: (e[0], e[1]))
        for _, _, kind, item in events:
            yield kind, item


def generate_trajectory(cfg: SimConfig,
                        wheel_extr: WheelExtrinsics = DEFAULT_WHEEL_EXTRINSICS
                        ) -> GroundTruth:
    """Constant-speed circle in the z = 0 plane, wheel-frame x tangent.

    The wheel-odometer origin traces the circle (it is the non-holonomically
    constrained point, so its lateral/vertical velocity is exactly zero and
    the plane constraints hold with zero residual); the IMU rides at the
    extrinsic lever offset.
    """
    n = int(round(cfg.duration * cfg.imu_rate))
    times = np.arange(n + 1) / cfg.imu_rate
    w_z = cfg.speed / cfg.radius
    theta = w_z * times

    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rots_o = np.zeros((n + 1, 3, 3))  # wheel frame: x tangent, z up
    rots_o[:, 0, 0] = -sin_t
    rots_o[:, 1, 0] = cos_t
    rots_o[:, 0, 1] = -cos_t
    rots_o[:, 1, 1] = -sin_t
    rots_o[:, 2, 2] = 1.0
    pos_o = np.stack([cfg.radius * cos_t, cfg.radius * sin_t,
                      np.zeros(n + 1)], axis=1)
    vel_o = cfg.speed * np.stack([-sin_t, cos_t, np.zeros(n + 1)], axis=1)

    rots = rots_o @ wheel_extr.rot_oi
    omega_body = wheel_extr.rot_oi.T @ np.array([0.0, 0.0, w_z])
    lever = rots @ wheel_extr.pos_io  # wheel origin relative to the IMU
    poss = pos_o - lever
    vels = vel_o - rots @ np.cross(omega_body, wheel_extr.pos_io)
    omegas = np.tile(omega_body, (n + 1, 1))
    return GroundTruth(times=times, rots=rots, vels=vels, poss=poss,
                       omegas=omegas)


def generate_landmarks(cfg: SimConfig, gt: GroundTruth) -> np.ndarray:
    """Landmarks on two rings around the trajectory, deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_landmarks
    n_inner = n // 2
    out = np.empty((n, 3))
    for i, (count, ring_r) in enumerate(((n_inner, 0.7 * cfg.radius),
                                         (n - n_inner, 1.3 * cfg.radius))):
        start = 0 if i == 0 else n_inner
        angles = 2.0 * np.pi * np.arange(count) / count
        out[start:start + count, 0] = ring_r * np.cos(angles)
        out[start:start + count, 1] = ring_r * np.sin(angles)
        out[start:start + count, 2] = rng.uniform(-2.0, 4.0, count)
    return out


def project_visible(rot_c, pos_c, points) -> dict:
    """Normalized projections of the points inside the FOV/range limits."""
    rel = (np.asarray(points) - pos_c) @ rot_c  # rows: camera-frame coords
    out = {}
    for i, p in enumerate(rel):
        if not MIN_RANGE <= p[2] <= MAX_RANGE:
            continue
        x, y = p[0] / p[2], p[1] / p[2]
        if abs(x) <= FOV_TAN and abs(y) <= FOV_TAN:
            out[i] = np.array([x, y])
    return out


def synthesize_measurements(cfg: SimConfig, gt: GroundTruth, landmarks,
                            cam_extr: CameraExtrinsics = DEFAULT_CAM_EXTRINSICS,
                            wheel_extr: WheelExtrinsics = DEFAULT_WHEEL_EXTRINSICS,
                            noise_scale: float = 1.0) -> MeasurementStream:
    """Noisy IMU / wheel / camera stream for the given ground truth.

    IMU samples are stamped at the end of the interval they summarize.
    noise_scale = 0 gives the ideal stream (biases stay at their initial
    constants). With cfg.dynamic set, moving landmarks are appended after
    the static ones and reported in dynamic_ids.
    """
    rng = np.random.default_rng(cfg.seed + 1)
    noise = cfg.noise
    dt = 1.0 / cfg.imu_rate
    n_steps = len(gt.times) - 1
    sq_rate = np.sqrt(cfg.imu_rate)
    sq_dt = np.sqrt(dt)

    bg = np.full(3, TRUE_BIAS_GYRO)
    ba = np.full(3, TRUE_BIAS_ACCEL)
    imu = []
    for k in range(n_steps):
        R0 = gt.rots[k]
        dv = gt.vels[k + 1] - gt.vels[k]
        w_ideal = so3_log(R0.T @ gt.rots[k + 1]) / dt
        a_ideal = left_jacobian_inv(w_ideal * dt) @ (R0.T @ (dv - GRAVITY * dt)) / dt
        w_m = w_ideal + bg + noise_scale * noise.sigma_g * sq_rate * rng.standard_normal(3)
        a_m = a_ideal + ba + noise_scale * noise.sigma_a * sq_rate * rng.standard_normal(3)
        imu.append(ImuSample(omega=w_m, accel=a_m, stamp=gt.times[k + 1]))
        bg = bg + noise_scale * noise.sigma_wg * sq_dt * rng.standard_normal(3)
        ba = ba + noise_scale * noise.sigma_wa * sq_dt * rng.standard_normal(3)

    wheel = []
    stride_w = int(round(cfg.imu_rate / cfg.wheel_rate))
    for k in range(0, n_steps + 1, stride_w):
        w_true = wheel_extr.rot_oi[2] @ gt.omegas[k]
        v_body = gt.rots[k].T @ gt.vels[k] + np.cross(gt.omegas[k], wheel_extr.pos_io)
        v_true = (wheel_extr.rot_oi @ v_body)[0]
        wheel.append(WheelSample(
            w=float(w_true + noise_scale * noise.sigma_wheel_w * rng.standard_normal()),
            v=float(v_true + noise_scale * noise.sigma_wheel_v * rng.standard_normal()),
            stamp=gt.times[k]))

    landmarks = np.asarray(landmarks, dtype=float)
    n_static = len(landmarks)
    dyn_vels = np.zeros((0, 3))
    dyn_points = np.zeros((0, 3))
    dynamic_ids = set()
    if cfg.dynamic is not None:
        n_dyn = cfg.dynamic.n_dynamic
        dyn_points = landmarks[rng.choice(n_static, n_dyn, replace=False)].copy()
        dyn_points += rng.normal(scale=1.0, size=(n_dyn, 3))
        dyn_vels = rng.normal(scale=cfg.dynamic.sigma_v, size=(n_dyn, 3))
        if cfg.dynamic.velocity_per_frame:
            dyn_vels *= cfg.cam_rate
        dynamic_ids = set(range(n_static, n_static + n_dyn))

    sigma_n = noise.sigma_px / FOCAL_PX
    camera = []
    stride_c = int(round(cfg.imu_rate / cfg.cam_rate))
    for k in range(0, n_steps + 1, stride_c):
        t = gt.times[k]
        rot_c = gt.rots[k] @ cam_extr.rot_ic
        pos_c = gt.poss[k] + gt.rots[k] @ cam_extr.pos_ic
        points = landmarks
        if len(dyn_points):
            points = np.vstack([landmarks, dyn_points + dyn_vels * t])
        obs = project_visible(rot_c, pos_c, points)
        if noise_scale > 0.0:
            for z in obs.values():
                z += noise_scale * sigma_n * rng.standard_normal(2)
        camera.append((t, obs))

    return MeasurementStream(imu=imu, wheel=wheel, camera=camera,
                             dynamic_ids=dynamic_ids)


@dataclass
class DynamicScene:
    """Two consecutive camera frames with labeled static/dynamic features."""

    pairs: dict  # id -> (z_prev, z_curr), features visible in both frames
    dynamic_ids: set
    imu_prev: ImuState
    imu_curr: ImuState
    omega_body: np.ndarray
    dt: float


def synthesize_dynamic_scene(cfg: SimConfig,
                             cam_extr: CameraExtrinsics = DEFAULT_CAM_EXTRINSICS,
                             seed: int | None = None) -> DynamicScene:
    """Straight-line (or gentle-arc) vehicle with static plus moving features.

    Features are scattered in the first frame's viewing frustum; moving
    features get a constant per-feature velocity. Only features visible in
    both frames are returned.
    """
    dyn = cfg.dynamic
    if dyn is None:
        raise ValueError("cfg.dynamic must be set for the dynamic scene")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    dt = 1.0 / cfg.cam_rate
    w0, v0 = dyn.omega0, dyn.speed

    def pose(t):
        c, s = np.cos(w0 * t), np.sin(w0 * t)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        if abs(w0) < 1e-9:
            pos = np.array([v0 * t, 0.0, 0.0])
        else:
            pos = (v0 / w0) * np.array([s, 1.0 - c, 0.0])
        vel = v0 * np.array([c, s, 0.0])
        return rot, pos, vel

    states = []
    cams = []
    for t in (0.0, dt):
        rot, pos, vel = pose(t)
        states.append(ImuState(rot, vel, pos, np.zeros(3), np.zeros(3)))
        cams.append((rot @ cam_extr.rot_ic, pos + rot @ cam_extr.pos_ic))

    n_total = dyn.n_static + dyn.n_dynamic
    rot_c0, pos_c0 = cams[0]
    xy = rng.uniform(-0.88, 0.88, size=(n_total, 2))
    depth = rng.uniform(7.0, 38.0, size=n_total)
    points = (np.column_stack([xy * depth[:, None], depth]) @ rot_c0.T) + pos_c0
    vels = np.zeros((n_total, 3))
    scale = dyn.sigma_v * (cfg.cam_rate if dyn.velocity_per_frame else 1.0)
    vels[dyn.n_static:] = rng.normal(scale=scale, size=(dyn.n_dynamic, 3))

    sigma_n = cfg.noise.sigma_px / FOCAL_PX
    frames = []
    for t, (rot_c, pos_c) in zip((0.0, dt), cams):
        obs = project_visible(rot_c, pos_c, points + vels * t)
        for z in obs.values():
            z += sigma_n * rng.standard_normal(2)
        frames.append(obs)

    pairs = {i: (frames[0][i], frames[1][i])
             for i in frames[0] if i in frames[1]}
    return DynamicScene(
        pairs=pairs,
        dynamic_ids={i for i in pairs if i >= dyn.n_static},
        imu_prev=states[0],
        imu_curr=states[1],
        omega_body=np.array([0.0, 0.0, w0]),
        dt=dt,
    )
