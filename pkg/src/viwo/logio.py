"""Measurement-log, ground-truth and report file formats.

All files are line-oriented, space-separated text with a mandatory version
header; parsers reject unknown versions. Measurement records:

    IMU t wx wy wz ax ay az
    WHEEL t w v
    CAM t id u v           (normalized image coordinates)

sorted by t. An IMU record at time t carries the average body rates over
the interval ending at t. Ground truth rows carry quaternions (w x y z).
"""

from __future__ import annotations

import numpy as np

from .lie import quat_to_rot, rot_to_quat
from .sim import GroundTruth, MeasurementStream
from .states import ImuSample, WheelSample

LOG_HEADER = "# viwo-log v1"
GT_HEADER = "# viwo-gt v1"
TRAJ_HEADER = "# viwo-traj v1"
REPORT_HEADER = "# viwo-report v1"


class LogFormatError(ValueError):
    pass


def _check_header(line: str, expected: str, path) -> None:
    if line.strip() != expected:
        raise LogFormatError(
            f"{path}: expected header '{expected}', found '{line.strip()}'")


def write_measurement_log(path, stream: MeasurementStream) -> None:
    events = []
    for s in stream.imu:
        events.append((s.stamp, 0,
                       "IMU %.9f %.12g %.12g %.12g %.12g %.12g %.12g"
                       % (s.stamp, *s.omega, *s.accel)))
    for s in stream.wheel:
        events.append((s.stamp, 1, "WHEEL %.9f %.12g %.12g" % (s.stamp, s.w, s.v)))
    for stamp, obs in stream.camera:
        for fid in sorted(obs):
            z = obs[fid]
            events.append((stamp, 2,
                           "CAM %.9f %d %.12g %.12g" % (stamp, fid, z[0], z[1])))
    events.sort(key=lambda e: (e[0], e[1]))
    with open(path, "w") as f:
        f.write(LOG_HEADER + "\n")
        for _, _, line in events:
            f.write(line + "\n")


def read_measurement_log(path) -> MeasurementStream:
    imu, wheel = [], []
    cam_frames: dict = {}
    with open(path) as f:
        _check_header(f.readline(), LOG_HEADER, path)
        last_t = -np.inf
        for lineno, raw in enumerate(f, start=2):
            parts = raw.split()
            if not parts:
                continue
            try:
                kind = parts[0]
                t = float(parts[1])
                if t < last_t - 1e-12:
                    raise LogFormatError("timestamps must be non-decreasing")
                last_t = max(last_t, t)
                if kind == "IMU":
                    vals = [float(x) for x in parts[2:8]]
                    if len(vals) != 6:
                        raise LogFormatError("IMU record needs 6 values")
                    imu.append(ImuSample(omega=vals[:3], accel=vals[3:], stamp=t))
                elif kind == "WHEEL":
                    wheel.append(WheelSample(w=float(parts[2]),
                                             v=float(parts[3]), stamp=t))
                elif kind == "CAM":
                    fid = int(parts[2])
                    z = np.array([float(parts[3]), float(parts[4])])
                    cam_frames.setdefault(t, {})[fid] = z
                else:
                    raise LogFormatError(f"unknown record '{kind}'")
            except (LogFormatError, ValueError, IndexError) as exc:
                raise LogFormatError(f"{path}:{lineno}: {exc}") from exc
    camera = sorted(cam_frames.items())
    return MeasurementStream(imu=imu, wheel=wheel, camera=camera)


def write_ground_truth(path, gt: GroundTruth) -> None:
    with open(path, "w") as f:
        f.write(GT_HEADER + "\n")
        f.write("# t qw qx qy qz px py pz vx vy vz\n")
        for i, t in enumerate(gt.times):
            q = rot_to_quat(gt.rots[i])
            f.write("%.9f %.12g %.12g %.12g %.12g %.12g %.12g %.12g %.12g %.12g %.12g\n"
                    % (t, *q, *gt.poss[i], *gt.vels[i]))


def read_ground_truth(path) -> GroundTruth:
    times, rots, poss, vels = [], [], [], []
    with open(path) as f:
        _check_header(f.readline(), GT_HEADER, path)
        for lineno, raw in enumerate(f, start=2):
            if raw.startswith("#") or not raw.strip():
                continue
            try:
                vals = [float(x) for x in raw.split()]
                times.append(vals[0])
                rots.append(quat_to_rot(vals[1:5]))
                poss.append(vals[5:8])
                vels.append(vals[8:11])
            except (ValueError, IndexError) as exc:
                raise LogFormatError(f"{path}:{lineno}: {exc}") from exc
    return GroundTruth(times=np.array(times), rots=np.array(rots),
                       vels=np.array(vels), poss=np.array(poss),
                       omegas=np.zeros((len(times), 3)))


def write_trajectory_csv(path, records, so3_log) -> None:
    """Per-camera-frame estimates: pose, velocity, biases, IMU covariance diagonal."""
    with open(path, "w") as f:
        f.write(TRAJ_HEADER + "\n")
        cols = (["t", "px", "py", "pz", "rx", "ry", "rz", "vx", "vy", "vz",
                 "bgx", "bgy", "bgz", "bax", "bay", "baz"]
                + [f"P{i}{i}" for i in range(15)])
        f.write(",".join(cols) + "\n")
        for rec in records:
            rv = so3_log(rec.imu.rot)
            row = ([rec.stamp] + list(rec.imu.pos) + list(rv)
                   + list(rec.imu.vel) + list(rec.imu.bg) + list(rec.imu.ba)
                   + list(np.diag(rec.cov_imu)))
            f.write(",".join("%.10g" % v for v in row) + "\n")


def write_report_csv(path, report) -> None:
    """Long-format metric table: time, mode, metric, value."""
    with open(path, "w") as f:
        f.write(REPORT_HEADER + "\n")
        f.write("time,mode,metric,value\n")
        for t, mode, metric, value in report.long_rows():
            f.write("%.6f,%s,%s,%.10g\n" % (t, mode, metric, value))
