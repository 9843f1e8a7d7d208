"""Event-driven filter driver: feeds a measurement stream through the filter.

Per camera frame: dynamic-feature screening (optional), wheel relative-yaw
update against the newest clone, visual update with finished tracks, window
maintenance (evict the second- and fourth-oldest clones when full, keeping
the oldest for baseline), clone augmentation, then the plane constraints.
Wheel velocity updates run at the wheel sample rate between frames.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import filter as filt
from . import visual, wheel
from .sim import FOCAL_PX
from .states import (CameraExtrinsics, FilterState, NoiseParams,
                     WheelExtrinsics)


class FilterDiverged(RuntimeError):
    pass


@dataclass
class RunOptions:
    wheel_rotation: bool = True
    wheel_velocity: bool = True
    plane: bool = True
    outlier_detection: bool = False
    n_max: int = 11
    sigma_nh: float = wheel.SIGMA_NH
    min_track_len: int = 3  # shortest track force-finished at eviction time


@dataclass
class FrameRecord:
    stamp: float
    imu: object
    cov_imu: np.ndarray


@dataclass
class RunStats:
    frames: int = 0
    velocity_rejects: int = 0
    rotation_rejects: int = 0
    plane_rejects: int = 0
    flagged_features: int = 0
    backend_seconds: float = 0.0

    def ms_per_frame(self) -> float:
        return 1000.0 * self.backend_seconds / max(self.frames, 1)


class OdometryRunner:
    """Owns one filter instance and its track/clone bookkeeping."""

    def __init__(self, state: FilterState, noise: NoiseParams,
                 cam_extr: CameraExtrinsics, wheel_extr: WheelExtrinsics,
                 options: RunOptions | None = None, start_time: float = 0.0,
                 plane_rot=None):
        self.state = state
        self.noise = noise
        self.cam_extr = cam_extr
        self.wheel_extr = wheel_extr
        self.options = options or RunOptions()
        self.clock = start_time
        self.plane_rot = np.eye(3) if plane_rot is None else np.asarray(plane_rot)
        self.sigma_n = noise.sigma_px / FOCAL_PX

        self.live_tracks: dict = {}
        self.landmark_cache: dict = {}
        self.prev_frame: tuple | None = None
        self.last_omega = None
        self.wheel_buffer: list = []
        self.blacklist: set = set()
        self.stats = RunStats()

    # ------------------------------------------------------------------
    def process_imu(self, sample) -> None:
        dt = sample.stamp - self.clock
        if dt <= 0.0:
            return
        while dt > filt._MAX_STEP:
            filt.propagate(self.state, sample, filt._MAX_STEP, self.noise)
            dt -= filt._MAX_STEP
        filt.propagate(self.state, sample, dt, self.noise)
        self.clock = sample.stamp
        self.last_omega = sample.omega

    def process_wheel(self, sample) -> None:
        self.wheel_buffer.append(sample)
        if self.options.wheel_velocity and self.last_omega is not None:
            _, ok = wheel.velocity_update(
                self.state, sample, self.last_omega, self.wheel_extr,
                self.noise.sigma_wheel_v, self.options.sigma_nh)
            if not ok:
                self.stats.velocity_rejects += 1

    # ------------------------------------------------------------------
    def _screen_outliers(self, obs: dict) -> dict:
        opts = self.options
        if not (opts.outlier_detection and self.prev_frame
                and self.last_omega is not None):
            return obs
        prev_stamp, prev_obs = self.prev_frame
        pairs = {}
        depths = {}
        imu = self.state.imu
        rot_c = imu.rot @ self.cam_extr.rot_ic
        pos_c = imu.pos + imu.rot @ self.cam_extr.pos_ic
        for fid, z in obs.items():
            if fid in self.blacklist or fid not in prev_obs:
                continue
            point = self.landmark_cache.get(fid)
            if point is None:
                continue
            depth = float(rot_c.T[2] @ (point - pos_c))
            if depth > visual.MIN_DEPTH:
                pairs[fid] = (prev_obs[fid], z)
                depths[fid] = depth
        dt = self.clock - prev_stamp
        flagged = visual.detect_outliers(pairs, self.state, self.cam_extr,
                                         depths, dt, self.last_omega)
        if flagged:
            self.stats.flagged_features += len(flagged)
            self.blacklist |= flagged
            for fid in flagged:
                self.live_tracks.pop(fid, None)
        return {fid: z for fid, z in obs.items() if fid not in self.blacklist}

    def _wheel_rotation_update(self, stamp: float) -> None:
        if not (self.options.wheel_rotation and self.state.clones):
            return
        t_prev = self.state.clones[-1].stamp
        preint = wheel.preintegrate_yaw(self.wheel_buffer, t_prev, stamp,
                                        self.noise.sigma_wheel_w)
        if preint is None:
            return
        _, ok = wheel.rotation_update(self.state, preint, t_prev,
                                      self.wheel_extr, self.cam_extr)
        if not ok:
            self.stats.rotation_rejects += 1
        self.wheel_buffer = [s for s in self.wheel_buffer if s.stamp >= stamp]

    def _maintain_window(self, finished: list) -> list:
        """Force-finish / prune tracks of the clones to evict; return indices."""
        if len(self.state.clones) < self.options.n_max:
            return []
        evict = [1, 3]
        stamps = {self.state.clones[i].stamp for i in evict}
        for fid in list(self.live_tracks):
            track = self.live_tracks[fid]
            if not any(s in stamps for s, _ in track.observations):
                continue
            if len(track) >= self.options.min_track_len:
                finished.append(self.live_tracks.pop(fid))
            else:
                track.observations = [o for o in track.observations
                                      if o[0] not in stamps]
        return evict

    def _refresh_landmark_cache(self) -> None:
        if not self.options.outlier_detection:
            return
        self.landmark_cache = {}
        for fid, track in self.live_tracks.items():
            if len(track) < 2:
                continue
            feat = visual.triangulate(track, self.state.clones, strict=False)
            if feat is not None:
                self.landmark_cache[fid] = feat.pos_g

    def process_camera(self, stamp: float, obs: dict) -> None:
        obs = self._screen_outliers(obs)
        self._wheel_rotation_update(stamp)

        finished = [self.live_tracks.pop(fid) for fid in list(self.live_tracks)
                    if fid not in obs]
        evict = self._maintain_window(finished)
        finished = [t for t in finished if len(t) >= 2]
        if finished:
            visual.visual_update(self.state, finished, self.sigma_n)
        if evict:
            filt.marginalize_clones(self.state, evict)

        filt.augment_clone(self.state, self.cam_extr, stamp,
                           n_max=self.options.n_max)
        for fid, z in obs.items():
            track = self.live_tracks.get(fid)
            if track is None:
                track = visual.FeatureTrack(id=fid)
                self.live_tracks[fid] = track
            track.add(stamp, z)

        if self.options.plane:
            _, rot_ok, tran_ok = wheel.plane_update(
                self.state, self.plane_rot, self.wheel_extr,
                self.noise.sigma_plane)
            self.stats.plane_rejects += (not rot_ok) + (not tran_ok)

        self._refresh_landmark_cache()
        self.prev_frame = (stamp, obs)
        self.stats.frames += 1
        self._check_health()

    def _check_health(self) -> None:
        imu = self.state.imu
        if not (np.all(np.isfinite(imu.pos)) and np.all(np.isfinite(imu.vel))
                and np.isfinite(self.state.cov.trace())):
            raise FilterDiverged(f"non-finite state at t={self.clock:.3f}")
        if self.state.cov.trace() > 1e8:
            raise FilterDiverged(f"covariance blow-up at t={self.clock:.3f}")

    # ------------------------------------------------------------------
    def run(self, stream, record: bool = True) -> list:
        """Process a whole stream; returns per-camera-frame records."""
        records = []
        t0 = time.perf_counter()
        for kind, item in stream.merged():
            if kind == "imu":
                self.process_imu(item)
            elif kind == "wheel":
                self.process_wheel(item)
            else:
                stamp, obs = item
                self.process_camera(stamp, dict(obs))
                if record:
                    records.append(FrameRecord(
                        stamp=stamp, imu=self.state.imu.copy(),
                        cov_imu=self.state.cov[:15, :15].copy()))
        self.stats.backend_seconds = time.perf_counter() - t0
        return records
