"""End-to-end guided reverse sampling: priors, the step loop, trajectories, full circles.

The solve loop runs the reverse ODE from sigma_max down to 0. At each step the
denoiser produces per-frame means; each mean is blended with that frame's
depth-warped prior under the per-frame adaptive weight, and the blend either
replaces the mean in the Euler step (DGS) or steers the noisy latent through a
VJP update before a standard step (Posterior).

Initial noise is keyed by (seed, pose fingerprint) rather than frame index, so
permuting the trajectory permutes the output frames identically; frames that
share a pose share their initial noise.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .denoiser import CapabilityError, Denoiser, LatentVideo
from .geometry.cameras import CameraIntrinsics, Pose, look_at, pose_distance
from .geometry.grids import DepthMap, ImageGrid, WarpResult
from .geometry.imageio import save_png
from .geometry.priors import SourceView, WarpStrategy, select_source, warp_prior
from .guidance import (
    GuidanceConfig,
    GuidanceMode,
    LambdaTrace,
    ModulationMode,
    lambda_for_step,
    modulate_mean_array,
    posterior_update,
)
from .schedule import NoiseSchedule, ve_step

__all__ = [
    "SceneKind",
    "SceneInput",
    "Trajectory",
    "TrajectoryKind",
    "StageInfo",
    "SolveError",
    "SolveReport",
    "prepare_priors",
    "prior_pose_distances",
    "solve",
    "make_trajectory",
    "solve_360",
]


class SceneKind(str, Enum):
    SINGLE_VIEW = "single_view"
    MULTI_VIEW = "multi_view"
    MONOCULAR_VIDEO = "monocular_video"


class TrajectoryKind(str, Enum):
    ORBIT = "orbit"
    LINE = "line"
    EIGHT_DIRECTION = "eight_direction"


_STRATEGY_FOR_KIND = {
    SceneKind.SINGLE_VIEW: WarpStrategy.SINGLE,
    SceneKind.MULTI_VIEW: WarpStrategy.NEAREST_MULTI,
    SceneKind.MONOCULAR_VIDEO: WarpStrategy.PER_TIMESTAMP,
}


class SolveError(RuntimeError):
    """The reverse loop hit an invalid state; the message names the step."""


@dataclass(frozen=True)
class SceneInput:
    """Source views plus shared intrinsics and the sourcing policy.

    single_view requires exactly one view; monocular_video views are ordered
    by timestamp with one view per output frame.
    """

    views: tuple[SourceView, ...]
    intrinsics: CameraIntrinsics
    kind: SceneKind

    def __post_init__(self) -> None:
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "kind", SceneKind(self.kind))
        if len(self.views) < 1:
            raise ValueError("scene needs at least one view")
        if self.kind is SceneKind.SINGLE_VIEW and len(self.views) != 1:
            raise ValueError(f"single_view scene must have exactly 1 view, got {len(self.views)}")
        shape = (self.intrinsics.height, self.intrinsics.width)
        for i, (image, depth, _pose) in enumerate(self.views):
            if image.data.shape[:2] != shape or depth.values.shape != shape:
                raise ValueError(f"view {i} does not match intrinsics size {shape}")


@dataclass(frozen=True)
class Trajectory:
    """Ordered target poses, one output frame each."""

    poses: tuple[Pose, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) < 1:
            raise ValueError("trajectory needs at least one pose")

    def __len__(self) -> int:
        return len(self.poses)


@dataclass(frozen=True)
class StageInfo:
    """Provenance of one segment of a chained solve."""

    name: str
    span_deg: float
    n_frames: int
    prompt_sources: tuple[tuple[str, int], ...]
    seed: int

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "span_deg": self.span_deg,
            "n_frames": self.n_frames,
            "prompt_sources": [[stage, int(idx)] for stage, idx in self.prompt_sources],
            "seed": self.seed,
        }


@dataclass
class SolveReport:
    """Everything a solve produced: frames, weights, coverage, provenance."""

    output: LatentVideo
    lambda_trace: LambdaTrace
    coverage: np.ndarray
    step_seconds: np.ndarray
    trajectory: Trajectory
    config: GuidanceConfig
    schedule: NoiseSchedule
    seed: int
    stages: tuple[StageInfo, ...] = field(default_factory=tuple)

    def save(self, out_dir: str | Path, experiment: Optional[dict] = None) -> None:
        """Persist frames/, lambda_trace.csv, report.json, timings.json.

        report.json is byte-stable across reruns of the same inputs;
        wall-clock numbers live in timings.json only. ``experiment``, when
        given, is echoed verbatim under the "experiment" key so a report
        records every effective run parameter.
        """
        out = Path(out_dir)
        frames_dir = out / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(self.output.frames):
            save_png(frames_dir / f"frame_{i:04d}.png", frame)
        trace_csv = self.lambda_trace.to_csv()
        (out / "lambda_trace.csv").write_text(trace_csv, encoding="utf-8")
        frame_meta = []
        for i in range(self.output.n_frames):
            digest = hashlib.sha256(self.output.data[i].tobytes()).hexdigest()
            frame_meta.append(
                {
                    "index": i,
                    "coverage": float(self.coverage[i]),
                    "pose_dist": float(self.lambda_trace.pose_dists[i]),
                    "sha256": digest,
                }
            )
        poses = [
            {
                "rotation": [float(v) for v in pose.rotation.reshape(-1)],
                "translation": [float(v) for v in pose.translation],
            }
            for pose in self.trajectory.poses
        ]
        report = {
            "schema_version": 1,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "schedule": {
                "sigma_max": self.schedule.sigma_max,
                "sigma_min": self.schedule.sigma_min,
                "rho": self.schedule.rho,
                "steps": self.schedule.steps,
            },
            "frames": frame_meta,
            "poses": poses,
            "trace_sha256": hashlib.sha256(trace_csv.encode("utf-8")).hexdigest(),
            "stages": [stage.to_dict() for stage in self.stages],
        }
        if experiment is not None:
            report["experiment"] = experiment
        (out / "report.json").write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        timings = {
            "step_seconds": [float(s) for s in self.step_seconds],
            "total_seconds": float(self.step_seconds.sum()),
        }
        (out / "timings.json").write_text(
            json.dumps(timings, indent=2) + "\n", encoding="utf-8"
        )


def prepare_priors(scene: SceneInput, traj: Trajectory) -> list[WarpResult]:
    """One warped prior per target pose, sourced per the scene kind."""
    strategy = _STRATEGY_FOR_KIND[scene.kind]
    if scene.kind is SceneKind.MONOCULAR_VIDEO and len(scene.views) != len(traj):
        raise ValueError(
            f"monocular_video needs one view per frame: {len(scene.views)} views, "
            f"{len(traj)} poses"
        )
    priors = []
    for i, target in enumerate(traj.poses):
        time_index = i if scene.kind is SceneKind.MONOCULAR_VIDEO else None
        priors.append(
            warp_prior(scene.views, target, scene.intrinsics, strategy, time_index=time_index)
        )
    return priors


def prior_pose_distances(scene: SceneInput, traj: Trajectory) -> np.ndarray:
    """Pose distance from each target to the source view it is warped from."""
    strategy = _STRATEGY_FOR_KIND[scene.kind]
    dists = np.zeros(len(traj))
    for i, target in enumerate(traj.poses):
        time_index = i if scene.kind is SceneKind.MONOCULAR_VIDEO else None
        src = select_source(scene.views, target, strategy, time_index=time_index)
        dists[i] = pose_distance(scene.views[src][2], target)
    return dists


def _pose_fingerprint(pose: Pose) -> int:
    digest = hashlib.blake2b(digest_size=8)
    digest.update(pose.rotation.tobytes())
    digest.update(pose.translation.tobytes())
    return int.from_bytes(digest.digest(), "little")


def _initial_latent(
    traj: Trajectory, frame_shape: tuple[int, int, int], sigma_max: float, seed: int
) -> np.ndarray:
    frames = [
        sigma_max
        * np.random.default_rng((seed, _pose_fingerprint(pose))).standard_normal(frame_shape)
        for pose in traj.poses
    ]
    return np.stack(frames)


def _modulate_stack(
    mu: np.ndarray,
    priors: np.ndarray,
    valids: np.ndarray,
    lams: np.ndarray,
    mode: ModulationMode,
) -> np.ndarray:
    if mode is ModulationMode.WEIGHTED_AVERAGE:
        lam_col = lams[:, None, None, None]
        blend = (mu + lam_col * priors) / (1.0 + lam_col)
        return np.where(valids[..., None], blend, mu)
    out = np.empty_like(mu)
    for f in range(mu.shape[0]):
        out[f] = modulate_mean_array(mu[f], priors[f], valids[f], float(lams[f]), mode)
    return out


def solve(
    scene: SceneInput,
    traj: Trajectory,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    config: GuidanceConfig,
    seed: int,
) -> SolveReport:
    """Run the full guided reverse loop; deterministic given (inputs, seed).

    Raises:
        CapabilityError: Frame-count mismatch, or Posterior mode without VJP.
        SolveError: Non-finite intermediate state (message names the step).
    """
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    n = len(traj)
    cap = denoiser.capabilities
    if cap.frame_count not in (0, n):
        raise CapabilityError(f"denoiser serves {cap.frame_count} frames, trajectory has {n}")
    if config.mode is GuidanceMode.POSTERIOR and not cap.supports_vjp:
        raise CapabilityError("Posterior mode requires a denoiser with VJP support")

    priors = prepare_priors(scene, traj)
    pose_dists = prior_pose_distances(scene, traj)
    prior_stack = np.stack([p.image.data for p in priors])
    valid_stack = np.stack([p.validity for p in priors])
    coverage = np.array([p.coverage for p in priors])

    x = _initial_latent(traj, prior_stack.shape[1:], schedule.sigma_max, seed)
    trace = LambdaTrace(sigmas=schedule.sigmas[:-1], pose_dists=pose_dists)
    step_seconds = np.zeros(schedule.steps)

    for i in range(schedule.steps):
        started = time.perf_counter()
        sigma_from = float(schedule.sigmas[i])
        sigma_to = float(schedule.sigmas[i + 1])
        steps_remaining = schedule.steps - i

        mu = denoiser.denoise(LatentVideo(data=x), sigma_from).data
        raw, clamped = lambda_for_step(config, sigma_from, pose_dists, steps_remaining)
        trace.record(i, config.v3 * pose_dists - config.v2 * sigma_from, raw, clamped)
        mu_tilde = _modulate_stack(mu, prior_stack, valid_stack, clamped, config.modulation)

        if config.mode is GuidanceMode.DGS:
            x = ve_step(x, mu_tilde, sigma_from, sigma_to)
        else:
            updated = posterior_update(
                LatentVideo(data=x),
                denoiser,
                LatentVideo(data=mu),
                LatentVideo(data=mu_tilde),
                sigma_from,
                config.kappa_scale,
            ).data
            mu_after = denoiser.denoise(LatentVideo(data=updated), sigma_from).data
            x = ve_step(updated, mu_after, sigma_from, sigma_to)

        if not np.isfinite(x).all():
            raise SolveError(f"non-finite latent after step {i} (sigma {sigma_from})")
        step_seconds[i] = time.perf_counter() - started

    trace.validate(config.lambda_min, config.lambda_max)
    return SolveReport(
        output=LatentVideo(data=x),
        lambda_trace=trace,
        coverage=coverage,
        step_seconds=step_seconds,
        trajectory=traj,
        config=config,
        schedule=schedule,
        seed=seed,
    )


def _orbit_pose(anchor: Pose, center: np.ndarray, axis: np.ndarray, angle_deg: float) -> Pose:
    """Anchor's camera swung angle_deg about (center, axis), still looking at center."""
    if angle_deg == 0.0:
        return anchor
    spin = Rotation.from_rotvec(axis * np.deg2rad(angle_deg)).as_matrix()
    eye = center + spin @ (anchor.translation - center)
    return look_at(eye, center, down=anchor.rotation[:, 1])


_EIGHT_DIRECTIONS = tuple(
    (np.cos(k * np.pi / 4.0), np.sin(k * np.pi / 4.0), 0.0) for k in range(8)
)


def make_trajectory(
    kind: TrajectoryKind | str,
    anchor: Pose,
    n_poses: int,
    radius: Optional[float] = None,
    span_deg: Optional[float] = None,
    extent: Optional[float] = None,
    direction: Sequence[float] = (1.0, 0.0, 0.0),
    direction_index: Optional[int] = None,
) -> Trajectory:
    """Deterministic target-pose generators.

    orbit: swing the camera about the point `radius` ahead of the anchor,
    sweeping span_deg with exclusive-endpoint spacing span_deg/n_poses (so the
    first pose is the anchor itself and consecutive pose distances are equal).
    line: translate along `direction` (given in the anchor's camera frame) up
    to `extent`, inclusive endpoints.
    eight_direction: a line along one of eight unit directions in the camera
    image plane, selected by direction_index in 0..7.
    """
    kind = TrajectoryKind(kind)
    if n_poses < 1:
        raise ValueError(f"n_poses must be >= 1, got {n_poses}")
    if kind is TrajectoryKind.ORBIT:
        if radius is None or not (np.isfinite(radius) and radius > 0):
            raise ValueError(f"orbit requires a positive radius, got {radius}")
        if span_deg is None or not np.isfinite(span_deg) or span_deg == 0.0:
            raise ValueError(f"orbit requires a nonzero span_deg, got {span_deg}")
        center = anchor.translation + radius * anchor.rotation[:, 2]
        axis = anchor.rotation[:, 1]
        delta = span_deg / n_poses
        return Trajectory(
            poses=tuple(_orbit_pose(anchor, center, axis, i * delta) for i in range(n_poses))
        )
    if kind is TrajectoryKind.EIGHT_DIRECTION:
        if direction_index is None or not 0 <= direction_index < 8:
            raise ValueError(f"direction_index must be in 0..7, got {direction_index}")
        direction = _EIGHT_DIRECTIONS[direction_index]
    dir_cam = np.asarray(direction, dtype=np.float64)
    if dir_cam.shape != (3,) or not np.isfinite(dir_cam).all() or np.linalg.norm(dir_cam) == 0:
        raise ValueError(f"direction must be a finite nonzero 3-vector, got {direction}")
    if extent is None or not (np.isfinite(extent) and extent >= 0):
        raise ValueError(f"line requires extent >= 0, got {extent}")
    dir_world = anchor.rotation @ (dir_cam / np.linalg.norm(dir_cam))
    poses = []
    for i in range(n_poses):
        offset = extent * (i / (n_poses - 1)) if n_poses > 1 else 0.0
        if offset == 0.0:
            poses.append(anchor)
        else:
            poses.append(Pose(rotation=anchor.rotation, translation=anchor.translation + offset * dir_world))
    return Trajectory(poses=tuple(poses))


_CIRCLE_FRAMES = 24
_PROMPT_STRIDE = 2


def solve_360(
    scene: SceneInput,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    config: GuidanceConfig,
    seed: int,
    depth_provider: Callable[[Pose], DepthMap],
) -> SolveReport:
    """Chain orbit segments into a full circle around the scene.

    Both sides grow 30 -> 60 -> 120 degrees, each stage re-anchored on 12
    stride-2 prompt frames of the previous one; the remaining back arc is
    solved multi-view from both 120-degree end frames. The returned report
    concatenates left arc, back arc, and reversed right arc (72 frames); its
    last frame closes the loop at the anchor pose, so accumulated rotation
    over the returned trajectory is a full turn.

    Args:
        depth_provider: Callable giving a DepthMap for a prompt frame's pose
            (synthetic ground truth in tests, estimated depth otherwise).
    """
    if scene.kind is not SceneKind.SINGLE_VIEW:
        raise ValueError(f"full-circle chaining starts from a single view, got {scene.kind}")
    cap = denoiser.capabilities
    if cap.frame_count not in (0, _CIRCLE_FRAMES):
        raise CapabilityError(
            f"full circle needs a {_CIRCLE_FRAMES}-frame denoiser, got {cap.frame_count}"
        )

    image, depth, anchor = scene.views[0]
    radius = float(depth.values[depth.valid].mean())
    center = anchor.translation + radius * anchor.rotation[:, 2]
    axis = anchor.rotation[:, 1]

    def orbit_traj(start_deg: float, span_deg: float) -> Trajectory:
        delta = span_deg / _CIRCLE_FRAMES
        return Trajectory(
            poses=tuple(
                _orbit_pose(anchor, center, axis, start_deg + i * delta)
                for i in range(_CIRCLE_FRAMES)
            )
        )

    prompt_indices = tuple(range(0, _CIRCLE_FRAMES, _PROMPT_STRIDE))

    def run_stage(
        name: str, traj: Trajectory, sources: tuple[SourceView, ...], kind: SceneKind
    ) -> SolveReport:
        stage_scene = SceneInput(views=sources, intrinsics=scene.intrinsics, kind=kind)
        try:
            return solve(stage_scene, traj, denoiser, schedule, config, seed)
        except SolveError as err:
            raise SolveError(f"stage {name}: {err}") from err

    def prompts_from(
        name: str, report: SolveReport, traj: Trajectory
    ) -> tuple[tuple[SourceView, ...], tuple[tuple[str, int], ...]]:
        views = []
        for idx in prompt_indices:
            pose = traj.poses[idx]
            views.append((report.output.frames[idx], depth_provider(pose), pose))
        return tuple(views), tuple((name, idx) for idx in prompt_indices)

    stage_reports: dict[str, SolveReport] = {}
    stage_trajs: dict[str, Trajectory] = {}
    stage_infos: list[StageInfo] = []

    def chain_side(side: str, sign: float) -> None:
        sources: tuple[SourceView, ...] = scene.views
        kind = SceneKind.SINGLE_VIEW
        prompt_sources: tuple[tuple[str, int], ...] = (("input", 0),)
        for span in (30.0, 60.0, 120.0):
            name = f"{side}{int(span)}"
            traj = orbit_traj(0.0, sign * span)
            report = run_stage(name, traj, sources, kind)
            stage_reports[name] = report
            stage_trajs[name] = traj
            stage_infos.append(
                StageInfo(
                    name=name,
                    span_deg=sign * span,
                    n_frames=len(traj),
                    prompt_sources=prompt_sources,
                    seed=seed,
                )
            )
            sources, prompt_sources = prompts_from(name, report, traj)
            kind = SceneKind.MULTI_VIEW

    chain_side("L", +1.0)
    chain_side("R", -1.0)

    left_end = stage_trajs["L120"].poses[-1]
    right_end = stage_trajs["R120"].poses[-1]
    back_sources = (
        (stage_reports["L120"].output.frames[-1], depth_provider(left_end), left_end),
        (stage_reports["R120"].output.frames[-1], depth_provider(right_end), right_end),
    )
    back_traj = orbit_traj(120.0, 120.0)
    back_report = run_stage("BACK", back_traj, back_sources, SceneKind.MULTI_VIEW)
    stage_infos.append(
        StageInfo(
            name="BACK",
            span_deg=120.0,
            n_frames=len(back_traj),
            prompt_sources=(("L120", _CIRCLE_FRAMES - 1), ("R120", _CIRCLE_FRAMES - 1)),
            seed=seed,
        )
    )

    left = stage_reports["L120"]
    right = stage_reports["R120"]
    rev = slice(None, None, -1)

    full_output = np.concatenate(
        [left.output.data, back_report.output.data, right.output.data[rev]]
    )
    full_poses = (
        stage_trajs["L120"].poses + back_traj.poses + stage_trajs["R120"].poses[rev]
    )
    full_coverage = np.concatenate([left.coverage, back_report.coverage, right.coverage[rev]])

    trace = LambdaTrace(
        sigmas=schedule.sigmas[:-1],
        pose_dists=np.concatenate(
            [
                left.lambda_trace.pose_dists,
                back_report.lambda_trace.pose_dists,
                right.lambda_trace.pose_dists[rev],
            ]
        ),
    )
    trace.q = np.concatenate(
        [left.lambda_trace.q, back_report.lambda_trace.q, right.lambda_trace.q[:, rev]], axis=1
    )
    trace.raw = np.concatenate(
        [left.lambda_trace.raw, back_report.lambda_trace.raw, right.lambda_trace.raw[:, rev]],
        axis=1,
    )
    trace.clamped = np.concatenate(
        [
            left.lambda_trace.clamped,
            back_report.lambda_trace.clamped,
            right.lambda_trace.clamped[:, rev],
        ],
        axis=1,
    )

    step_seconds = sum(report.step_seconds for report in stage_reports.values())
    step_seconds = step_seconds + back_report.step_seconds

    return SolveReport(
        output=LatentVideo(data=full_output),
        lambda_trace=trace,
        coverage=full_coverage,
        step_seconds=step_seconds,
        trajectory=Trajectory(poses=full_poses),
        config=config,
        schedule=schedule,
        seed=seed,
        stages=tuple(stage_infos),
    )
