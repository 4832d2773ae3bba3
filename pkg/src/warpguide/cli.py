"""Command line front end.

Subcommands:
    synthesize        run a guided solve from a JSON experiment config
    lambda-sweep      print the guidance-weight surface as CSV on stdout
    verify            run a named test suite and write JUnit XML
    render-synthetic  export a procedural scene in the scene-directory layout

Exit codes: 0 success, 1 runtime failure, 2 invalid input or config. Every
failure prints a single machine-readable JSON object on stderr. The NVS_LOG
environment variable (error, info, debug) sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
from urllib.parse import parse_qs, urlsplit

import numpy as np

from .denoiser import CapabilityError, GmmPrior, frame_denoiser_from_gmm
from .geometry import (
    CameraModel,
    SourceView,
    canonical_camera,
    load_scene_views,
    render_synthetic,
    save_scene_views,
    scene_ids,
)
from .guidance import (
    GuidanceConfig,
    WeightFn,
    lambda_closed_form,
    lambda_formula_raw,
    lambda_numeric_oracle,
)
from .schedule import build_schedule
from .solver import (
    SceneInput,
    SceneKind,
    SolveError,
    Trajectory,
    TrajectoryKind,
    make_trajectory,
    solve,
)
from .wire.client import connect_denoiser
from .wire.protocol import ProtocolError, RemoteError

logger = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

_SWEEP_HEADER = "mode,sigma,pose_dist,Q,lambda_formula_raw,lambda_clamped,lambda_oracle,ratio"

# Suite name -> test files, resolved against the repository tests/ directory.
_SUITE_FILES: dict[str, tuple[str, ...]] = {
    "geometry": ("test_geometry.py",),
    "schedule": ("test_schedule.py",),
    "denoiser": ("test_denoiser.py",),
    "guidance": ("test_guidance.py",),
    "solver": ("test_solver.py",),
    "wire": ("test_wire.py",),
}
_ALL_SUITE_FILES = tuple(
    name for files in _SUITE_FILES.values() for name in files
) + ("test_acceptance.py",)


class ValidationError(ValueError):
    """Bad config or input data; maps to exit code 2."""


def _setup_logging() -> None:
    name = os.environ.get("NVS_LOG", "error").strip().lower()
    if name not in _LOG_LEVELS:
        raise ValidationError(
            f"NVS_LOG must be one of {', '.join(sorted(_LOG_LEVELS))}; got {name!r}"
        )
    logging.basicConfig(
        level=_LOG_LEVELS[name],
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _fail(kind: str, message: str, code: int) -> int:
    payload = {"error": {"type": kind, "message": message, "exit_code": code}}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def _check_keys(block: dict, allowed: set[str], where: str) -> None:
    unknown = set(block) - allowed
    _require(not unknown, f"unknown {where} keys: {', '.join(sorted(unknown))}")


# ---------------------------------------------------------------------------
# Experiment config


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully validated run description; every field has its effective value.

    ``trajectory["radius"]`` may still be None for orbits (resolved to the
    mean source depth once the scene is loaded); everything else is final.
    """

    scene: dict
    kind: SceneKind
    trajectory: dict
    schedule_params: dict
    guidance: GuidanceConfig
    denoiser: str
    seed: int
    out: Optional[str]

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        _require(isinstance(raw, dict), "config root must be a JSON object")
        _check_keys(
            raw,
            {"scene", "kind", "trajectory", "schedule", "guidance", "denoiser", "seed", "out"},
            "config",
        )
        _require("scene" in raw, "config needs a 'scene' block")

        kind = _parse_kind(raw.get("kind", "single_view"))
        scene = _parse_scene_block(raw["scene"])
        trajectory = _parse_trajectory_block(raw.get("trajectory", {}))
        schedule_params = _parse_schedule_block(raw.get("schedule", {}))

        guidance_block = raw.get("guidance", {})
        _require(isinstance(guidance_block, dict), "'guidance' must be an object")
        try:
            guidance = GuidanceConfig.from_dict(guidance_block)
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"guidance config: {exc}") from exc

        denoiser = raw.get("denoiser", "builtin:gmm")
        _require(isinstance(denoiser, str), "'denoiser' must be a URI string")
        _validate_denoiser_uri(denoiser)

        seed = raw.get("seed", 0)
        _require(isinstance(seed, int) and not isinstance(seed, bool), "'seed' must be an integer")
        _require(0 <= seed < 2**64, "'seed' must fit in an unsigned 64-bit integer")

        out = raw.get("out")
        _require(out is None or isinstance(out, str), "'out' must be a string path")

        if "synthetic" in scene:
            if kind is SceneKind.SINGLE_VIEW:
                _require(scene["views"] == 1, "single_view scenes take exactly one source view")
            if kind is SceneKind.MONOCULAR_VIDEO:
                _require(
                    scene["views"] == trajectory["n_poses"],
                    "monocular_video needs one source view per trajectory pose",
                )

        # Schedule parameters must construct cleanly before any compute runs.
        try:
            build_schedule(**schedule_params)
        except ValueError as exc:
            raise ValidationError(f"schedule config: {exc}") from exc

        return ExperimentConfig(
            scene=scene,
            kind=kind,
            trajectory=trajectory,
            schedule_params=schedule_params,
            guidance=guidance,
            denoiser=denoiser,
            seed=seed,
            out=out,
        )

    def effective_dict(self, trajectory: Optional[dict] = None) -> dict:
        """Echo of every parameter that shapes the result, defaults included.

        The output directory is deliberately left out: it decides where the
        report lands, not what it contains, so reports stay byte-identical
        across output locations.
        """
        return {
            "scene": dict(self.scene),
            "kind": self.kind.value,
            "trajectory": dict(trajectory if trajectory is not None else self.trajectory),
            "schedule": dict(self.schedule_params),
            "guidance": self.guidance.to_dict(),
            "denoiser": self.denoiser,
            "seed": self.seed,
        }


def _parse_kind(value) -> SceneKind:
    try:
        return SceneKind(value)
    except ValueError:
        options = ", ".join(k.value for k in SceneKind)
        raise ValidationError(f"'kind' must be one of {options}; got {value!r}") from None


def _parse_scene_block(block) -> dict:
    _require(isinstance(block, dict), "'scene' must be an object")
    if "directory" in block:
        _check_keys(block, {"directory"}, "scene")
        _require(isinstance(block["directory"], str), "scene 'directory' must be a path string")
        return {"directory": block["directory"]}
    _require("synthetic" in block, "'scene' needs either 'synthetic' or 'directory'")
    _check_keys(block, {"synthetic", "width", "height", "views", "view_span_deg"}, "scene")
    scene_id = block["synthetic"]
    _require(
        scene_id in scene_ids(),
        f"unknown synthetic scene {scene_id!r}; known: {', '.join(scene_ids())}",
    )
    width = block.get("width", 64)
    height = block.get("height", 64)
    views = block.get("views", 1)
    span = float(block.get("view_span_deg", 10.0))
    for label, value in (("width", width), ("height", height), ("views", views)):
        _require(
            isinstance(value, int) and not isinstance(value, bool) and value >= 1,
            f"scene '{label}' must be a positive integer",
        )
    _require(math.isfinite(span) and span != 0.0, "scene 'view_span_deg' must be finite, nonzero")
    return {
        "synthetic": scene_id,
        "width": width,
        "height": height,
        "views": views,
        "view_span_deg": span,
    }


def _parse_trajectory_block(block) -> dict:
    _require(isinstance(block, dict), "'trajectory' must be an object")
    _check_keys(
        block,
        {"kind", "n_poses", "radius", "span_deg", "extent", "direction", "direction_index"},
        "trajectory",
    )
    try:
        kind = TrajectoryKind(block.get("kind", "orbit"))
    except ValueError:
        options = ", ".join(k.value for k in TrajectoryKind)
        raise ValidationError(f"trajectory 'kind' must be one of {options}") from None
    n_poses = block.get("n_poses", 5)
    _require(
        isinstance(n_poses, int) and not isinstance(n_poses, bool) and n_poses >= 1,
        "trajectory 'n_poses' must be a positive integer",
    )
    resolved: dict = {"kind": kind.value, "n_poses": n_poses}
    if kind is TrajectoryKind.ORBIT:
        radius = block.get("radius")
        if radius is not None:
            radius = float(radius)
            _require(math.isfinite(radius) and radius > 0, "orbit 'radius' must be positive")
        span = float(block.get("span_deg", 10.0))
        _require(math.isfinite(span) and span != 0.0, "orbit 'span_deg' must be finite, nonzero")
        resolved.update(radius=radius, span_deg=span)
    elif kind is TrajectoryKind.LINE:
        extent = float(block.get("extent", 0.2))
        _require(math.isfinite(extent), "line 'extent' must be finite")
        direction = block.get("direction", (1.0, 0.0, 0.0))
        direction = [float(v) for v in direction]
        _require(len(direction) == 3, "line 'direction' must have three components")
        _require(any(v != 0.0 for v in direction), "line 'direction' must be nonzero")
        resolved.update(extent=extent, direction=direction)
    else:
        extent = float(block.get("extent", 0.2))
        _require(math.isfinite(extent), "'extent' must be finite")
        index = block.get("direction_index", 0)
        _require(
            isinstance(index, int) and not isinstance(index, bool) and 0 <= index <= 7,
            "'direction_index' must be an integer in [0, 7]",
        )
        resolved.update(extent=extent, direction_index=index)
    return resolved


def _parse_schedule_block(block) -> dict:
    _require(isinstance(block, dict), "'schedule' must be an object")
    _check_keys(block, {"sigma_max", "sigma_min", "rho", "steps"}, "schedule")
    steps = block.get("steps", 100)
    _require(
        isinstance(steps, int) and not isinstance(steps, bool) and steps >= 1,
        "schedule 'steps' must be a positive integer",
    )
    return {
        "sigma_max": float(block.get("sigma_max", 700.0)),
        "sigma_min": float(block.get("sigma_min", 0.002)),
        "rho": float(block.get("rho", 7.0)),
        "steps": steps,
    }


# ---------------------------------------------------------------------------
# Scene, trajectory, denoiser construction


def _load_scene(config: ExperimentConfig) -> SceneInput:
    if "directory" in config.scene:
        directory = Path(config.scene["directory"])
        try:
            intrinsics, views = load_scene_views(directory)
        except (OSError, ValueError, KeyError) as exc:
            raise ValidationError(f"scene directory {directory}: {exc}") from exc
        _require(len(views) >= 1, f"scene directory {directory} holds no views")
        try:
            return SceneInput(views=tuple(views), intrinsics=intrinsics, kind=config.kind)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc

    scene_id = config.scene["synthetic"]
    camera = canonical_camera(scene_id, config.scene["width"], config.scene["height"])
    poses = _synthetic_view_poses(scene_id, camera, config.scene)
    views = []
    for pose in poses:
        image, depth = render_synthetic(scene_id, CameraModel(camera.intrinsics, pose))
        views.append((image, depth, pose))
    try:
        return SceneInput(views=tuple(views), intrinsics=camera.intrinsics, kind=config.kind)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _synthetic_view_poses(scene_id: str, camera: CameraModel, scene: dict) -> list:
    if scene["views"] == 1:
        return [camera.pose]
    _, depth = render_synthetic(scene_id, camera)
    traj = make_trajectory(
        TrajectoryKind.ORBIT,
        anchor=camera.pose,
        n_poses=scene["views"],
        radius=_mean_valid_depth(depth),
        span_deg=scene["view_span_deg"],
    )
    return list(traj.poses)


def _mean_valid_depth(depth) -> float:
    _require(bool(depth.valid.any()), "source depth has no valid pixels")
    return float(depth.values[depth.valid].mean())


def _build_trajectory(config: ExperimentConfig, scene: SceneInput) -> tuple[Trajectory, dict]:
    """Trajectory plus its echo block with the orbit radius resolved."""
    block = dict(config.trajectory)
    anchor = scene.views[0][2]
    kind = TrajectoryKind(block["kind"])
    try:
        if kind is TrajectoryKind.ORBIT:
            if block["radius"] is None:
                block["radius"] = _mean_valid_depth(scene.views[0][1])
            traj = make_trajectory(
                kind,
                anchor=anchor,
                n_poses=block["n_poses"],
                radius=block["radius"],
                span_deg=block["span_deg"],
            )
        elif kind is TrajectoryKind.LINE:
            traj = make_trajectory(
                kind,
                anchor=anchor,
                n_poses=block["n_poses"],
                extent=block["extent"],
                direction=block["direction"],
            )
        else:
            traj = make_trajectory(
                kind,
                anchor=anchor,
                n_poses=block["n_poses"],
                extent=block["extent"],
                direction_index=block["direction_index"],
            )
    except ValueError as exc:
        raise ValidationError(f"trajectory: {exc}") from exc
    return traj, block


def _validate_denoiser_uri(uri: str) -> None:
    parts = urlsplit(uri)
    if parts.scheme == "builtin":
        _require(parts.path == "gmm", f"unknown builtin denoiser {parts.path!r}; known: gmm")
        query = parse_qs(parts.query, keep_blank_values=True)
        _check_keys(query, {"std", "center"}, "denoiser query")
        for key in query:
            _require(len(query[key]) == 1, f"denoiser query '{key}' given more than once")
            try:
                value = float(query[key][0])
            except ValueError:
                raise ValidationError(f"denoiser query '{key}' must be a number") from None
            _require(math.isfinite(value), f"denoiser query '{key}' must be finite")
            if key == "std":
                _require(value > 0, "denoiser query 'std' must be positive")
    elif parts.scheme not in ("tcp", "stdio"):
        raise ValidationError(
            f"denoiser URI must use builtin:, tcp:// or stdio://; got {uri!r}"
        )


def _build_denoiser(uri: str, n_frames: int, frame_shape: tuple[int, int, int]):
    """Returns (denoiser, close_fn); close_fn is None for in-process denoisers."""
    parts = urlsplit(uri)
    if parts.scheme == "builtin":
        query = parse_qs(parts.query, keep_blank_values=True)
        std = float(query.get("std", ["0.25"])[0])
        center = float(query.get("center", ["0.5"])[0])
        dim = int(np.prod(frame_shape))
        prior = GmmPrior(
            weights=np.array([1.0]),
            means=np.full((1, dim), center),
            variances=np.array([std * std]),
        )
        denoiser = frame_denoiser_from_gmm(prior, (n_frames, *frame_shape))
        return denoiser, None
    remote = connect_denoiser(uri)
    return remote, remote.close


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synthesize(args: argparse.Namespace) -> int:
    raw = _read_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    if args.denoiser is not None:
        raw["denoiser"] = args.denoiser
    config = ExperimentConfig.from_dict(raw)
    _require(config.out is not None, "an output directory is needed (config 'out' or --out)")

    scene = _load_scene(config)
    traj, traj_echo = _build_trajectory(config, scene)
    if config.kind is SceneKind.MONOCULAR_VIDEO and len(scene.views) != len(traj):
        raise ValidationError(
            f"monocular_video needs one view per frame: {len(scene.views)} views, "
            f"{len(traj)} poses"
        )
    schedule = build_schedule(**config.schedule_params)
    frame_shape = scene.views[0][0].data.shape
    denoiser, close_fn = _build_denoiser(config.denoiser, len(traj), frame_shape)
    try:
        report = solve(scene, traj, denoiser, schedule, config.guidance, config.seed)
    finally:
        if close_fn is not None:
            close_fn()
    report.save(config.out, experiment=config.effective_dict(trajectory=traj_echo))
    print(f"wrote {len(traj)} frames to {config.out}")
    return 0


def _read_config(path: Optional[str]) -> dict:
    _require(path is not None, "--config is required")
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    _require(isinstance(raw, dict), "config root must be a JSON object")
    return dict(raw)


def cmd_lambda_sweep(args: argparse.Namespace) -> int:
    v = (args.v1, args.v2, args.v3)
    for name, value in zip(("v1", "v2", "v3"), v):
        _require(math.isfinite(value) and value > 0, f"--{name} must be positive")
    _require(args.sigma_min >= 0, "--sigma-min must be nonnegative")
    _require(args.sigma_max >= args.sigma_min, "--sigma-max must be >= --sigma-min")
    _require(args.pose_min >= 0, "--pose-min must be nonnegative")
    _require(args.pose_max >= args.pose_min, "--pose-max must be >= --pose-min")
    _require(args.sigma_steps >= 1, "--sigma-steps must be positive")
    _require(args.pose_steps >= 1, "--pose-steps must be positive")
    _require(
        0 < args.lambda_min <= args.lambda_max,
        "--lambda-min must be positive and at most --lambda-max",
    )
    _require(args.weight_constant > 0, "--weight-constant must be positive")

    clamp = (args.lambda_min, args.lambda_max)
    sigmas = np.linspace(args.sigma_max, args.sigma_min, args.sigma_steps)
    poses = np.linspace(args.pose_min, args.pose_max, args.pose_steps)
    oracle = np.empty((args.sigma_steps, args.pose_steps))
    for i, sigma in enumerate(sigmas):
        for j, pd in enumerate(poses):
            oracle[i, j] = lambda_numeric_oracle(v, float(sigma), float(pd))

    lo, hi = clamp
    lines = [_SWEEP_HEADER]
    for mode in WeightFn:
        for i, sigma in enumerate(sigmas):
            # Treat the descending sigma axis as the reverse schedule: the
            # highest sigma plays the first step, so steps_remaining runs
            # from sigma_steps down to 1.
            steps_remaining = args.sigma_steps - i
            for j, pd in enumerate(poses):
                sigma_f = float(sigma)
                pd_f = float(pd)
                q = v[2] * pd_f - v[1] * sigma_f
                raw = lambda_formula_raw(v, sigma_f, pd_f)
                if mode is WeightFn.ADAPTIVE:
                    clamped = lambda_closed_form(v, sigma_f, pd_f, clamp=clamp)
                elif mode is WeightFn.CONSTANT:
                    clamped = float(np.clip(args.weight_constant, lo, hi))
                elif mode is WeightFn.LINEAR:
                    clamped = float(np.clip(steps_remaining, lo, hi))
                elif mode is WeightFn.EXPONENTIAL:
                    clamped = float(np.clip(math.exp(steps_remaining + 1), lo, hi))
                else:
                    clamped = float(np.clip(oracle[i, j], lo, hi))
                ratio = clamped / (1.0 + clamped)
                cells = (sigma_f, pd_f, q, raw, clamped, oracle[i, j], ratio)
                lines.append(
                    mode.value + "," + ",".join(repr(float(c)) for c in cells)
                )
    print("\n".join(lines))
    return 0


def _tests_root() -> Path:
    package_root = Path(__file__).resolve().parent.parent.parent
    return package_root / "tests"


def cmd_verify(args: argparse.Namespace) -> int:
    if args.suite == "all":
        files = _ALL_SUITE_FILES
    else:
        files = _SUITE_FILES[args.suite]
    tests = _tests_root()
    paths = [tests / name for name in files]
    missing = [str(p) for p in paths if not p.is_file()]
    _require(
        not missing,
        "test files not found (verify needs the source checkout): " + ", ".join(missing),
    )
    # Resolve against the caller's directory; the pytest subprocess runs
    # with a different cwd, which would silently relocate a relative path.
    out_dir = Path(args.out).resolve()
    out_dir.mkdir(parents=True, exist_ok=True)
    xml_path = out_dir / f"verify_{args.suite}.xml"
    command = [
        sys.executable,
        "-m",
        "pytest",
        *[str(p) for p in paths],
        "-q",
        f"--junitxml={xml_path}",
    ]
    logger.info("running: %s", " ".join(command))
    result = subprocess.run(command, cwd=tests.parent)
    status = "PASS" if result.returncode == 0 else "FAIL"
    print(f"suite {args.suite}: {status} (report: {xml_path})")
    return 0 if result.returncode == 0 else 1


def cmd_render_synthetic(args: argparse.Namespace) -> int:
    _require(args.views >= 1, "--views must be positive")
    _require(args.width >= 1 and args.height >= 1, "--width and --height must be positive")
    _require(
        math.isfinite(args.span_deg) and args.span_deg != 0.0,
        "--span-deg must be finite and nonzero",
    )
    try:
        camera = canonical_camera(args.scene, args.width, args.height)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    scene_block = {
        "synthetic": args.scene,
        "width": args.width,
        "height": args.height,
        "views": args.views,
        "view_span_deg": args.span_deg,
    }
    poses = _synthetic_view_poses(args.scene, camera, scene_block)
    views: list[SourceView] = []
    for pose in poses:
        image, depth = render_synthetic(args.scene, CameraModel(camera.intrinsics, pose))
        views.append((image, depth, pose))
    save_scene_views(args.out, camera.intrinsics, views)
    print(f"wrote {len(views)} views of {args.scene!r} to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _seed_arg(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _parse_args(argv: Optional[Sequence[str]]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="warpguide",
        description="Training-free novel view synthesis with warped-prior guidance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_syn = sub.add_parser("synthesize", help="run a guided solve from a JSON config")
    p_syn.add_argument("--config", metavar="PATH", help="experiment config JSON")
    p_syn.add_argument("--seed", type=_seed_arg, default=None, help="override config seed")
    p_syn.add_argument("--out", metavar="DIR", default=None, help="override output directory")
    p_syn.add_argument("--denoiser", metavar="URI", default=None, help="override denoiser URI")
    p_syn.set_defaults(func=cmd_synthesize)

    p_sweep = sub.add_parser("lambda-sweep", help="CSV of the guidance weight over a grid")
    p_sweep.add_argument("--v1", type=float, default=1e-6, help="log-barrier coefficient")
    p_sweep.add_argument("--v2", type=float, default=0.9, help="noise error coefficient")
    p_sweep.add_argument("--v3", type=float, default=0.05, help="pose error coefficient")
    p_sweep.add_argument("--sigma-max", type=float, default=700.0)
    p_sweep.add_argument("--sigma-min", type=float, default=0.002)
    p_sweep.add_argument("--sigma-steps", type=int, default=10)
    p_sweep.add_argument("--pose-min", type=float, default=0.0)
    p_sweep.add_argument("--pose-max", type=float, default=0.5)
    p_sweep.add_argument("--pose-steps", type=int, default=6)
    p_sweep.add_argument("--lambda-min", type=float, default=1e-4)
    p_sweep.add_argument("--lambda-max", type=float, default=1e12)
    p_sweep.add_argument("--weight-constant", type=float, default=0.5)
    p_sweep.set_defaults(func=cmd_lambda_sweep)

    p_verify = sub.add_parser("verify", help="run a test suite and write JUnit XML")
    p_verify.add_argument(
        "--suite",
        choices=sorted(_SUITE_FILES) + ["all"],
        default="all",
    )
    p_verify.add_argument("--out", metavar="DIR", default=".", help="JUnit XML directory")
    p_verify.set_defaults(func=cmd_verify)

    p_render = sub.add_parser(
        "render-synthetic", help="export a procedural scene as a scene directory"
    )
    p_render.add_argument("--scene", required=True, help="scene id, e.g. plane")
    p_render.add_argument("--out", metavar="DIR", required=True)
    p_render.add_argument("--width", type=int, default=64)
    p_render.add_argument("--height", type=int, default=64)
    p_render.add_argument("--views", type=int, default=1, help="number of source views")
    p_render.add_argument("--span-deg", type=float, default=10.0, help="orbit span for views > 1")
    p_render.set_defaults(func=cmd_render_synthetic)

    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        _setup_logging()
        args = _parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        return _fail("validation", str(exc), 2)
    except (SolveError, CapabilityError, RemoteError, ProtocolError) as exc:
        return _fail("runtime", str(exc), 1)
    except OSError as exc:
        return _fail("runtime", str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
