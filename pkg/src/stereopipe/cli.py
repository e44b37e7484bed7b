"""Batch command-line entry points for the pipeline.

Subcommands: render-target, calibrate, stereo-calibrate, rectify,
disparity, depth, tune. Exit codes: 0 ok, 1 I/O failure, 2 validation
failure. Validation messages come verbatim from the library.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import calib as _calib
from . import depth as _depth
from . import image as _image
from . import target as _target
from .calib import CameraIntrinsics, DistortionCoeffs, StereoRig, ViewPose
from .sgm import SgmParams, SgmParamError, compute_disparity
from .target import BoardSpec, CornerGrid


class ValidationFailure(ValueError):
    pass


def _parse_board(text: str, square_size: float) -> BoardSpec:
    try:
        cols, rows = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise ValidationFailure(f"bad board spec {text!r}, expected COLSxROWS like 9x6")
    return BoardSpec(cols=cols, rows=rows, square_size=square_size)


def _load_gray(path: Path) -> np.ndarray:
    img = _image.load_pnm(path.read_bytes())
    if img.ndim == 3:
        img = _image.to_grayscale(img)
    return img


def _camera_fragment(K: CameraIntrinsics, dist: DistortionCoeffs, rms: float,
                     image_size: tuple[int, int]) -> str:
    return json.dumps(
        {
            "version": "cam-v1",
            "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "skew": K.skew,
            "k1": dist.k1, "k2": dist.k2, "k3": dist.k3, "p1": dist.p1, "p2": dist.p2,
            "rms_px": rms, "width": image_size[0], "height": image_size[1],
        },
        indent=2,
    )


def _load_camera_fragment(path: Path):
    doc = json.loads(path.read_text())
    if doc.get("version") != "cam-v1":
        raise ValidationFailure(f"{path}: unsupported camera file version")
    K = CameraIntrinsics(fx=doc["fx"], fy=doc["fy"], cx=doc["cx"], cy=doc["cy"],
                         skew=doc["skew"])
    dist = DistortionCoeffs(k1=doc["k1"], k2=doc["k2"], p1=doc["p1"], p2=doc["p2"],
                            k3=doc["k3"])
    return K, dist, (int(doc["width"]), int(doc["height"]))


# ---------------------------------------------------------------------------


def cmd_render_target(args) -> int:
    if args.count <= 0:
        raise ValidationFailure("--count must be positive")
    board = _parse_board(args.board, args.square_size)
    rng = np.random.default_rng(args.seed)
    w, h = args.width, args.height
    K = CameraIntrinsics(fx=args.fx, fy=args.fx, cx=w / 2.0, cy=h / 2.0)
    dist = DistortionCoeffs(k1=args.k1, k2=args.k2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    obj = board.object_points()
    written = 0
    attempts = 0
    while written < args.count:
        attempts += 1
        if attempts > 50 * args.count:
            raise ValidationFailure("could not place the board inside the frame")
        rvec = np.concatenate([rng.uniform(-0.4, 0.4, 2), rng.uniform(-0.5, 0.5, 1)])
        tvec = np.array([0.0, 0.0, rng.uniform(1.4, 1.9) * board.cols * board.square_size])
        tvec -= (obj.mean(axis=0) @ _calib.rodrigues(rvec).T) * np.array([1.0, 1.0, 0.0])
        pose = ViewPose.from_rvec(rvec, tvec)
        try:
            img = _target.render_chessboard(board, K, dist, pose, (w, h),
                                            supersample=args.supersample)
        except ValueError:
            continue
        truth = _calib.project_points(K, dist, pose, obj)
        stem = out / f"view_{written:03d}"
        stem.with_suffix(".pgm").write_bytes(_image.save_pnm(img))
        stem.with_suffix(".corners.txt").write_text(
            CornerGrid(board=board, points=truth).to_text()
        )
        written += 1
    (out / "camera.json").write_text(_camera_fragment(K, dist, 0.0, (w, h)))
    print(f"wrote {written} views to {out}")
    return 0


def _collect_grids(args, board: BoardSpec) -> tuple[list[CornerGrid], tuple[int, int]]:
    src = Path(args.input)
    if not src.exists():
        raise FileNotFoundError(f"no such directory: {src}")
    grids = []
    image_size = None
    if args.corners:
        for path in sorted(src.glob("*.corners.txt")):
            grids.append(CornerGrid.from_text(path.read_text()))
        if image_size is None:
            image_size = (args.width, args.height)
    else:
        for path in sorted(src.glob("*.pgm")) + sorted(src.glob("*.ppm")):
            img = _load_gray(path)
            image_size = (img.shape[1], img.shape[0])
            try:
                grids.append(_target.detect_corners(img, board))
            except _target.DetectionError as exc:
                print(f"skipping {path.name}: {exc}", file=sys.stderr)
    if not grids:
        raise ValidationFailure(f"no usable views found in {src}")
    return grids, image_size


def cmd_calibrate(args) -> int:
    board = _parse_board(args.board, args.square_size)
    grids, image_size = _collect_grids(args, board)
    K, dist, _, rms = _calib.calibrate_camera(grids, image_size)
    Path(args.out).write_text(_camera_fragment(K, dist, rms, image_size))
    print(f"rms_px: {rms:.6f}")
    print(f"wrote {args.out}")
    return 0


def cmd_stereo_calibrate(args) -> int:
    KL, dL, sizeL = _load_camera_fragment(Path(args.left_cam))
    KR, dR, sizeR = _load_camera_fragment(Path(args.right_cam))
    if sizeL != sizeR:
        raise ValidationFailure("left/right image sizes differ")
    left_dir, right_dir = Path(args.left_corners), Path(args.right_corners)
    grids_l = [CornerGrid.from_text(p.read_text()) for p in sorted(left_dir.glob("*.corners.txt"))]
    grids_r = [CornerGrid.from_text(p.read_text()) for p in sorted(right_dir.glob("*.corners.txt"))]
    if len(grids_l) != len(grids_r) or not grids_l:
        raise ValidationFailure("need matching non-empty left/right corner sets")
    R, T, rms, degenerate = _calib.stereo_calibrate(grids_l, grids_r, KL, dL, KR, dR)
    if degenerate:
        print("warning: near-zero baseline (degenerate rig)", file=sys.stderr)
    rig = StereoRig.from_calibration(KL, dL, KR, dR, R, T, sizeL)
    Path(args.out).write_text(rig.to_json())
    print(f"rms_px: {rms:.6f}")
    print(f"baseline_m: {rig.baseline_m:.6f}")
    print(f"wrote {args.out}")
    return 0


def cmd_rectify(args) -> int:
    rig = StereoRig.from_json(Path(args.rig).read_text())
    left = _load_gray(Path(args.left))
    right = _load_gray(Path(args.right))
    size = (left.shape[1], left.shape[0])
    map_l = _calib.build_rectify_map(rig.left, rig.left_dist, rig.rect_left, rig.P_left, size)
    map_r = _calib.build_rectify_map(rig.right, rig.right_dist, rig.rect_right, rig.P_right, size)
    Path(args.out_left).write_bytes(_image.save_pnm(_calib.remap(left, map_l)))
    Path(args.out_right).write_bytes(_image.save_pnm(_calib.remap(right, map_r)))
    print(f"wrote {args.out_left}, {args.out_right}")
    return 0


_PARAM_FLAGS = (
    "min_disparity", "num_disparities", "block_size", "p1", "p2",
    "disp12_max_diff", "uniqueness_ratio", "speckle_window_size",
    "speckle_range", "num_paths",
)


def _params_from_args(args) -> SgmParams:
    if args.params:
        params = SgmParams.from_json(Path(args.params).read_text())
    else:
        params = SgmParams()
    updates = {}
    for name in _PARAM_FLAGS:
        value = getattr(args, name)
        if value is not None:
            updates[name] = value
    if updates:
        params = params.merged(updates)
    return params.validated()


def cmd_disparity(args) -> int:
    params = _params_from_args(args)
    left = _load_gray(Path(args.left))
    right = _load_gray(Path(args.right))
    disp = compute_disparity(left, right, params, backend=args.backend)
    Path(args.out).write_bytes(_image.save_pfm(disp))
    if args.color:
        lo = args.lo if args.lo is not None else float(params.min_disparity)
        hi = args.hi if args.hi is not None else float(params.min_disparity + params.num_disparities)
        Path(args.color).write_bytes(_image.save_pnm(_image.pseudocolor(disp, lo, hi)))
    print(f"wrote {args.out}")
    return 0


def cmd_depth(args) -> int:
    disp = _image.load_pfm(Path(args.disparity).read_bytes())
    rig = StereoRig.from_json(Path(args.rig).read_text())
    if args.cloud:
        cloud = _depth.reproject_to_cloud(disp, rig)
        Path(args.cloud).write_text(_depth.cloud_to_text(cloud))
        print(f"wrote {args.cloud} ({len(cloud)} points)")
    if args.roi:
        try:
            x, y, w, h = (int(t) for t in args.roi.split(","))
        except ValueError:
            raise ValidationFailure(f"bad --roi {args.roi!r}, expected x,y,w,h")
        roi = _depth.Roi(x=x, y=y, w=w, h=h)
        mean_d = _depth.roi_average_disparity(disp, roi)
        print(f"mean_disparity: {mean_d:.6f}")
        try:
            distance = _depth.roi_distance(disp, roi, rig)
            print(f"distance_m: {distance:.6f}")
        except _depth.NoValidPixelsError:
            print("distance_m: no valid pixels")
    return 0


def cmd_tune(args) -> int:
    import uvicorn

    from .service import create_app

    if args.samples is not None and not Path(args.samples).is_dir():
        raise FileNotFoundError(f"no such samples directory: {args.samples}")
    # Probe the port up front so a conflict surfaces as a clean I/O error
    # instead of a traceback from inside the server loop.
    import socket

    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as probe:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((args.host, args.port))
    app = create_app(samples_dir=args.samples)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------


def _add_param_flags(parser: argparse.ArgumentParser):
    for name in _PARAM_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stereopipe")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render-target", help="render synthetic chessboard views")
    p.add_argument("--board", default="9x6")
    p.add_argument("--square-size", type=float, default=0.025)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--fx", type=float, default=600.0)
    p.add_argument("--k1", type=float, default=0.0)
    p.add_argument("--k2", type=float, default=0.0)
    p.add_argument("--supersample", type=int, default=2)
    p.set_defaults(func=cmd_render_target)

    p = sub.add_parser("calibrate", help="monocular calibration from views")
    p.add_argument("input", help="directory of .pgm images or .corners.txt files")
    p.add_argument("--board", default="9x6")
    p.add_argument("--square-size", type=float, default=0.025)
    p.add_argument("--corners", action="store_true",
                   help="read .corners.txt files instead of detecting")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("stereo-calibrate", help="relative pose + rectified rig")
    p.add_argument("--left-corners", required=True)
    p.add_argument("--right-corners", required=True)
    p.add_argument("--left-cam", required=True)
    p.add_argument("--right-cam", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stereo_calibrate)

    p = sub.add_parser("rectify", help="undistort + rectify a stereo pair")
    p.add_argument("--rig", required=True)
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--out-left", required=True)
    p.add_argument("--out-right", required=True)
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("disparity", help="semi-global matching on a rectified pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--params", help="SgmParams JSON file")
    p.add_argument("--color", help="write a pseudocolored PPM here")
    p.add_argument("--lo", type=float, default=None)
    p.add_argument("--hi", type=float, default=None)
    p.add_argument("--backend", choices=("cython", "numpy"), default=None)
    _add_param_flags(p)
    p.set_defaults(func=cmd_disparity)

    p = sub.add_parser("depth", help="ROI distance / point cloud from disparity")
    p.add_argument("--disparity", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--roi", help="x,y,w,h")
    p.add_argument("--cloud", help="write an X Y Z point cloud here")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("tune", help="run the interactive tuner service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--samples", help="directory with left.pgm/right.pgm/rig.json")
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SgmParamError, ValidationFailure, ValueError,
            _target.DetectionError, _calib.CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
