"""Accuracy (RMSE) and consistency (NEES/ANEES) metrics plus the Monte Carlo harness."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from . import visual
from .lie import ErrorMode, local_coords, so3_log
from .runner import FilterDiverged, OdometryRunner, RunOptions
from .sim import (DEFAULT_CAM_EXTRINSICS, DEFAULT_WHEEL_EXTRINSICS, SimConfig,
                  generate_landmarks, generate_trajectory,
                  synthesize_dynamic_scene, synthesize_measurements)
from .states import CameraClone, FilterState, ImuState, NoiseParams

DIVERGENCE_LIMIT = 100.0  # m
NEES_MAX_CONDITION = 1e12


def _nanmean_cols(a: np.ndarray) -> np.ndarray:
    """Column means ignoring NaN; all-NaN columns give NaN without warning."""
    counts = np.sum(~np.isnan(a), axis=0)
    sums = np.nansum(a, axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def pose_error(est: ImuState, gt_rot, gt_pos):
    """Rotation-vector and position error of an estimate against truth."""
    return so3_log(est.rot @ np.asarray(gt_rot).T), est.pos - np.asarray(gt_pos)


def nees(e, P_block) -> float | None:
    """Normalized estimation error squared; None when P is unusable."""
    P_block = np.asarray(P_block, dtype=float)
    if not np.all(np.isfinite(P_block)) or np.linalg.cond(P_block) > NEES_MAX_CONDITION:
        return None
    e = np.asarray(e, dtype=float)
    return float(e @ np.linalg.solve(P_block, e))


def detector_metrics(dynamic_ids, static_ids, flagged):
    """(TPR, FPR) of a flagged set against ground-truth labels.

    TPR is None when there are no dynamic features to detect.
    """
    dynamic_ids, static_ids, flagged = set(dynamic_ids), set(static_ids), set(flagged)
    if dynamic_ids & static_ids:
        raise ValueError("label sets must be disjoint")
    tpr = len(flagged & dynamic_ids) / len(dynamic_ids) if dynamic_ids else None
    fpr = len(flagged & static_ids) / len(static_ids) if static_ids else 0.0
    return tpr, fpr


@dataclass
class ModeResult:
    """Aggregated Monte Carlo outcome for one error parameterization."""

    times: np.ndarray
    rmse_pos: np.ndarray
    rmse_rot: np.ndarray
    anees_pos: np.ndarray
    anees_rot: np.ndarray
    final_rmse_pos: float
    final_rmse_rot: float
    per_run_final_pos: list
    runs_attempted: int
    runs_included: int
    ms_per_frame: float

    def mean_abs_anees_dev(self, target: float = 3.0) -> float:
        ok = np.isfinite(self.anees_pos)
        return float(np.abs(self.anees_pos[ok] - target).mean())


@dataclass
class EvalReport:
    times: np.ndarray
    modes: dict  # mode name -> ModeResult
    n_runs: int
    detector_tpr: float | None = None
    detector_fpr: float | None = None

    def long_rows(self):
        """Plot-ready long format: (time, mode, metric, value)."""
        rows = []
        for name, res in self.modes.items():
            for metric, series in (("rmse_pos", res.rmse_pos),
                                   ("rmse_rot", res.rmse_rot),
                                   ("anees_pos", res.anees_pos),
                                   ("anees_rot", res.anees_rot)):
                for t, v in zip(res.times, series):
                    rows.append((float(t), name, metric, float(v)))
        return rows

    def summary(self) -> dict:
        out = {"n_runs": self.n_runs}
        if self.n_runs < 2:
            out["low_confidence"] = True  # ANEES from a single run is a NEES
        for name, res in self.modes.items():
            out[name] = {
                "final_rmse_pos_m": res.final_rmse_pos,
                "final_rmse_rot_deg": np.degrees(res.final_rmse_rot),
                "mean_abs_position_anees_dev": res.mean_abs_anees_dev(),
                "runs_attempted": res.runs_attempted,
                "runs_included": res.runs_included,
                "ms_per_frame": res.ms_per_frame,
            }
        if self.detector_tpr is not None:
            out["detector"] = {"tpr": self.detector_tpr, "fpr": self.detector_fpr}
        return out


def _run_once(cfg: SimConfig, gt, landmarks, run_index: int, modes,
              options: RunOptions, filter_noise: NoiseParams):
    """One Monte Carlo run: fresh noise, every mode on the same stream."""
    run_cfg = replace(cfg, seed=cfg.seed + 1000 * (run_index + 1))
    stream = synthesize_measurements(run_cfg, gt, landmarks)
    out = {}
    bias = np.full(3, 0.001)
    for mode in modes:
        imu0 = ImuState(gt.rots[0], gt.vels[0], gt.poss[0], bias, bias)
        state = FilterState(imu=imu0, mode=mode)
        runner = OdometryRunner(state, filter_noise, DEFAULT_CAM_EXTRINSICS,
                                DEFAULT_WHEEL_EXTRINSICS, options)
        diverged = False
        try:
            records = runner.run(stream)
        except FilterDiverged:
            records = []
            diverged = True
        n = len(records)
        pos_sq = np.full(n, np.nan)
        rot_sq = np.full(n, np.nan)
        nees_p = np.full(n, np.nan)
        nees_r = np.full(n, np.nan)
        stamps = np.full(n, np.nan)
        for j, rec in enumerate(records):
            i = gt.index_at(rec.stamp)
            e_rot, e_pos = pose_error(rec.imu, gt.rots[i], gt.poss[i])
            if np.linalg.norm(e_pos) > DIVERGENCE_LIMIT:
                diverged = True
                break
            stamps[j] = rec.stamp
            pos_sq[j] = e_pos @ e_pos
            rot_sq[j] = e_rot @ e_rot
            gt_state = ImuState(gt.rots[i], gt.vels[i], gt.poss[i],
                                rec.imu.bg, rec.imu.ba)
            xi = local_coords(rec.imu, gt_state, mode)
            v = nees(xi[0:3], rec.cov_imu[0:3, 0:3])
            nees_r[j] = np.nan if v is None else v
            v = nees(xi[6:9], rec.cov_imu[6:9, 6:9])
            nees_p[j] = np.nan if v is None else v
        out[mode.name] = {
            "diverged": diverged,
            "stamps": stamps,
            "pos_sq": pos_sq,
            "rot_sq": rot_sq,
            "nees_pos": nees_p,
            "nees_rot": nees_r,
            "ms_per_frame": runner.stats.ms_per_frame(),
        }
    return run_index, out


def run_monte_carlo(cfg: SimConfig, n_runs: int, modes,
                    options: RunOptions | None = None,
                    filter_noise: NoiseParams | None = None,
                    n_jobs: int = 1) -> EvalReport:
    """Monte Carlo comparison of the given error modes on a shared trajectory.

    Every run draws fresh sensor noise; all modes consume the same stream.
    Runs whose position error exceeds the divergence limit are excluded and
    counted. Aggregation is ordered by run index regardless of n_jobs.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    options = options or RunOptions()
    filter_noise = filter_noise or cfg.noise
    gt = generate_trajectory(cfg)
    landmarks = generate_landmarks(cfg, gt)

    results = [None] * n_runs
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_run_once, cfg, gt, landmarks, i, modes,
                                   options, filter_noise)
                       for i in range(n_runs)]
            for fut in futures:
                idx, res = fut.result()
                results[idx] = res
    else:
        for i in range(n_runs):
            idx, res = _run_once(cfg, gt, landmarks, i, modes, options,
                                 filter_noise)
            results[idx] = res

    mode_results = {}
    times = None
    for mode in modes:
        rows = [r[mode.name] for r in results]
        included = [r for r in rows if not r["diverged"]]
        if not included:
            raise RuntimeError(f"every {mode.name} run diverged")
        stamps = included[0]["stamps"]
        times = stamps if times is None else times
        pos_sq = np.vstack([r["pos_sq"] for r in included])
        rot_sq = np.vstack([r["rot_sq"] for r in included])
        nees_p = np.vstack([r["nees_pos"] for r in included])
        nees_r = np.vstack([r["nees_rot"] for r in included])
        rmse_pos = np.sqrt(_nanmean_cols(pos_sq))
        rmse_rot = np.sqrt(_nanmean_cols(rot_sq))
        anees_pos = _nanmean_cols(nees_p)
        anees_rot = _nanmean_cols(nees_r)
        mode_results[mode.name] = ModeResult(
            times=stamps,
            rmse_pos=rmse_pos,
            rmse_rot=rmse_rot,
            anees_pos=anees_pos,
            anees_rot=anees_rot,
            final_rmse_pos=float(rmse_pos[-1]),
            final_rmse_rot=float(rmse_rot[-1]),
            per_run_final_pos=[float(np.sqrt(r["pos_sq"][-1])) for r in included],
            runs_attempted=n_runs,
            runs_included=len(included),
            ms_per_frame=float(np.mean([r["ms_per_frame"] for r in included])),
        )
    return EvalReport(times=times, modes=mode_results, n_runs=n_runs)


# ----------------------------------------------------------------------
def evaluate_outlier_detection(cfg: SimConfig, n_seeds: int = 20,
                               cam_extr=DEFAULT_CAM_EXTRINSICS) -> dict:
    """Detector TPR/FPR on the two-frame moving-feature scenario.

    Depths come from two-view triangulation with the exact camera poses.
    Features whose triangulation fails (typical for fast movers, whose rays
    no longer meet) fall back to the median triangulated depth of the
    frame, so the detector still judges their flow against a static
    prediction.
    """
    tprs, fprs, tracked = [], [], []
    for s in range(n_seeds):
        scene = synthesize_dynamic_scene(cfg, cam_extr=cam_extr,
                                         seed=cfg.seed + 7919 * s)
        clones = []
        for stamp, imu in ((0.0, scene.imu_prev), (scene.dt, scene.imu_curr)):
            clones.append(CameraClone(rot=imu.rot @ cam_extr.rot_ic,
                                      pos=imu.pos + imu.rot @ cam_extr.pos_ic,
                                      stamp=stamp))
        depths = {}
        rot_c, pos_c = clones[1].rot, clones[1].pos
        for fid, (z0, z1) in scene.pairs.items():
            track = visual.FeatureTrack(id=fid)
            track.add(0.0, z0)
            track.add(scene.dt, z1)
            feat = visual.triangulate(track, clones, strict=False)
            if feat is None:
                continue
            depth = float(rot_c.T[2] @ (feat.pos_g - pos_c))
            if depth > visual.MIN_DEPTH:
                depths[fid] = depth
        if depths:
            fallback = float(np.median(list(depths.values())))
            for fid in scene.pairs:
                depths.setdefault(fid, fallback)
        state = FilterState(imu=scene.imu_curr, mode=ErrorMode.PARTIAL_INVARIANT)
        flagged = visual.detect_outliers(scene.pairs, state, cam_extr, depths,
                                         scene.dt, scene.omega_body)
        static_ids = set(scene.pairs) - scene.dynamic_ids
        tpr, fpr = detector_metrics(scene.dynamic_ids, static_ids, flagged)
        if tpr is not None:
            tprs.append(tpr)
        fprs.append(fpr)
        tracked.append(len(scene.pairs))
    return {
        "tpr": float(np.mean(tprs)) if tprs else None,
        "fpr": float(np.mean(fprs)),
        "n_tracked": float(np.mean(tracked)),
        "n_seeds": n_seeds,
    }


# ----------------------------------------------------------------------
def linear_toy_anees(n_runs: int = 50, n_steps: int = 80, dt: float = 0.1,
                     q: float = 0.2, r: float = 0.5, seed: int = 0):
    """ANEES of a correctly specified 1D constant-velocity Kalman filter.

    Validates the metric harness itself: for a consistent filter the ANEES
    over n_runs stays inside the chi-square band. Returns
    (anees per step, lower band, upper band).
    """
    rng = np.random.default_rng(seed)
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = q**2 * np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    H = np.array([[1.0, 0.0]])
    R = np.array([[r**2]])
    P0 = np.diag([0.5, 0.2])

    vals = np.empty((n_runs, n_steps))
    L0 = np.linalg.cholesky(P0)
    Lq = np.linalg.cholesky(Q)
    for run in range(n_runs):
        x_true = L0 @ rng.standard_normal(2)
        x = np.zeros(2)
        P = P0.copy()
        for k in range(n_steps):
            x_true = F @ x_true + Lq @ rng.standard_normal(2)
            z = H @ x_true + r * rng.standard_normal(1)
            x = F @ x
            P = F @ P @ F.T + Q
            S = H @ P @ H.T + R
            K = P @ H.T @ np.linalg.inv(S)
            x = x + (K @ (z - H @ x))
            P = (np.eye(2) - K @ H) @ P
            e = x_true - x
            vals[run, k] = nees(e, P)
    anees = vals.mean(axis=0)
    lo = chi2.ppf(0.005, 2 * n_runs) / n_runs
    hi = chi2.ppf(0.995, 2 * n_runs) / n_runs
    return anees, float(lo), float(hi)
