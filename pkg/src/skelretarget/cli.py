"""Command-line entry point.

Exit status: 0 on success, 1 when an input fails validation, 2 when a
solver stopped on its iteration budget (outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from . import io as sio
from .estimation import EstimationConfig, EstimationError, estimate_motion
from .kinematics import default_skeleton
from .metrics import compute_metrics
from .retarget import RetargetConfig, default_weights, retarget_motion
from .smoothing import SmoothingConfig, smooth_motion
from .solver import ConvergenceWarning

log = logging.getLogger("skelretarget")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is our non-convergence code
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = _Parser(add_help=False)
    p.add_argument("--skeleton", metavar="FILE", default=default, help="skeleton JSON (default: bundled 24-joint)")
    p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS if suppress else False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0,
                   help="seed for synthetic generators")
    return p


def _alphas(text: str):
    parts = [float(v) for v in text.replace(" ", "").split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated values")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skelretarget", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = [_global_flags(True)]

    p = sub.add_parser("estimate", parents=common, help="refine per-frame estimates into one camera frame")
    p.add_argument("--obs", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--report", metavar="FILE")
    p.add_argument("--lambda1", type=float, default=1e-6)
    p.add_argument("--lambda2", type=float, default=1e-2)
    p.add_argument("--max-iters", type=int, default=100)

    p = sub.add_parser("smooth", parents=common, help="refit joint angles to filtered joint targets")
    p.add_argument("--in", dest="input", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--report", metavar="FILE")
    p.add_argument("--gamma", type=float, default=10.0)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--max-iters", type=int, default=50)

    p = sub.add_parser("retarget", parents=common, help="transfer a motion to another body shape")
    p.add_argument("--source", required=True, metavar="FILE")
    p.add_argument("--target-shape", required=True, metavar="FILE")
    p.add_argument("--source-shape", metavar="FILE", help="default: the beta stored in the source motion")
    p.add_argument("--constraints", metavar="FILE")
    p.add_argument("--alphas", type=_alphas, default=[10.0, 5.0, 1.0], metavar="A1,A2,A3")
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--window", type=float, default=2.0, metavar="SECONDS")
    p.add_argument("--overlap", type=int, metavar="FRAMES")
    p.add_argument("--fixed-root", action="store_true", help="keep the source root translation")
    p.add_argument("--parallel", action="store_true", help="independent windows without overlap")
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--report", metavar="FILE")

    p = sub.add_parser("metrics", parents=common, help="constraint errors and smoothness of a result")
    p.add_argument("--source", required=True, metavar="FILE")
    p.add_argument("--result", required=True, metavar="FILE")
    p.add_argument("--constraints", metavar="FILE")
    p.add_argument("--joint", help="restrict the frame-jump measure to one joint")
    p.add_argument("--out", metavar="FILE", help="default: print to stdout")

    p = sub.add_parser("export-csv", parents=common, help="one joint coordinate per frame")
    p.add_argument("--in", dest="input", required=True, metavar="FILE")
    p.add_argument("--joint", required=True)
    p.add_argument("--axis", choices=sorted(sio.AXES), default="y")
    p.add_argument("--out", required=True, metavar="FILE")

    p = sub.add_parser("demo", parents=common, help="synthetic pick-up-a-box scenario, end to end")
    p.add_argument("--out-dir", required=True, metavar="DIR")
    p.add_argument("--frames", type=int, default=180)
    p.add_argument("--noise", type=float, default=0.0, help="angle noise on the source, radians")
    p.add_argument("--no-solve", action="store_true", help="only write the scenario inputs")
    return parser


# --------------------------------------------------------------------------

def _status(reports) -> int:
    failed = [i for i, r in enumerate(reports) if r.status == "max_iters"]
    if failed:
        log.warning("%d solve(s) hit the iteration budget (first: #%d); outputs written anyway",
                    len(failed), failed[0])
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _report_doc(reports, **extra) -> dict:
    doc = {"solves": [r.as_dict() for r in reports], "converged": all(r.status != "max_iters" for r in reports)}
    doc.update(extra)
    return doc


def cmd_estimate(args, skeleton):
    frames, K, fps = sio.load_observations(args.obs, skeleton.joint_count)
    cfg = EstimationConfig(args.lambda1, args.lambda2, args.max_iters)
    motion, reports = estimate_motion(frames, K, cfg, skeleton, fps)
    sio.save_motion(args.out, motion, skeleton)
    if args.report:
        sio.write_json(args.report, _report_doc(reports, beta=motion.beta.tolist()))
    return _status(reports)


def cmd_smooth(args, skeleton):
    motion = sio.load_motion(args.input, skeleton)
    cfg = SmoothingConfig(args.gamma, args.radius, args.max_iters)
    out, reports = smooth_motion(motion, cfg=cfg, skeleton=skeleton)
    sio.save_motion(args.out, out, skeleton)
    if args.report:
        sio.write_json(args.report, _report_doc(reports))
    return _status(reports)


def _retarget_config(args) -> RetargetConfig:
    a1, a2, a3 = args.alphas
    return RetargetConfig(
        window_seconds=args.window,
        alpha1=a1,
        alpha2=a2,
        alpha3=a3,
        overlap_frames=args.overlap,
        max_iters=args.max_iters,
        optimize_root_translation=not args.fixed_root,
        parallel=args.parallel,
    )


def cmd_retarget(args, skeleton):
    source = sio.load_motion(args.source, skeleton)
    beta_t = sio.load_beta(args.target_shape)
    beta_s = sio.load_beta(args.source_shape) if args.source_shape else source.beta
    constraints = sio.load_constraints(args.constraints, skeleton) if args.constraints else []
    result = retarget_motion(source, beta_t, beta_s, constraints, default_weights(skeleton, args.rho),
                             _retarget_config(args), skeleton)
    sio.save_motion(args.out, result.motion, skeleton)
    if args.report:
        metrics = compute_metrics(source, result, constraints, skeleton)
        sio.write_json(args.report, _report_doc(result.reports, windows=[list(w) for w in result.windows],
                                                metrics=metrics.as_dict()))
    return _status(result.reports)


def cmd_metrics(args, skeleton):
    source = sio.load_motion(args.source, skeleton)
    result = sio.load_motion(args.result, skeleton)
    constraints = sio.load_constraints(args.constraints, skeleton) if args.constraints else []
    m = compute_metrics(source, result, constraints, skeleton, args.joint)
    if args.out:
        sio.write_json(args.out, m.as_dict())
    else:
        print(json.dumps(m.as_dict(), indent=1))
    return EXIT_OK


def cmd_export_csv(args, skeleton):
    motion = sio.load_motion(args.input, skeleton)
    sio.export_trajectory_csv(motion, skeleton, args.joint, args.axis, args.out)
    return EXIT_OK


def cmd_demo(args, skeleton):
    from .synthetic import add_angle_noise, pick_up_box

    if args.frames < 140:
        raise ValueError("the demo needs at least 140 frames (contacts at frames 47 and 138)")
    source, beta_s, beta_t, constraints = pick_up_box(skeleton, n_frames=args.frames)
    if args.noise > 0:
        source = add_angle_noise(source, args.noise, seed=args.seed)
    out = Path(args.out_dir)
    sio.save_motion(out / "source.json", source, skeleton)
    sio.save_beta(out / "beta_source.json", beta_s)
    sio.save_beta(out / "beta_target.json", beta_t)
    sio.save_constraints(out / "constraints.json", constraints, skeleton)
    hand = "left_hand"
    sio.export_trajectory_csv(source, skeleton, hand, "y", out / "source_left_hand_y.csv")
    if args.no_solve:
        return EXIT_OK

    status = EXIT_OK
    summary = {}
    for label, cons in (("unconstrained", []), ("constrained", constraints)):
        log.info("retargeting (%s)", label)
        result = retarget_motion(source, beta_t, beta_s, cons, skeleton=skeleton)
        sio.save_motion(out / f"{label}.json", result.motion, skeleton)
        sio.export_trajectory_csv(result.motion, skeleton, hand, "y", out / f"{label}_left_hand_y.csv")
        m = compute_metrics(source, result.motion, constraints, skeleton, hand)
        summary[label] = dict(m.as_dict(), converged=result.converged)
        status = max(status, _status(result.reports))
    sio.write_json(out / "report.json", summary)
    for label, m in summary.items():
        errs = ", ".join(f"{1000 * e:.2f} mm" for e in m["constraint_errors"])
        print(f"{label:>13}: hand error at contacts {errs}; max hand jump {100 * m['max_frame_jump']:.2f} cm")
    return status


COMMANDS = {
    "estimate": cmd_estimate,
    "smooth": cmd_smooth,
    "retarget": cmd_retarget,
    "metrics": cmd_metrics,
    "export-csv": cmd_export_csv,
    "demo": cmd_demo,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        skeleton = sio.load_skeleton(args.skeleton) if args.skeleton else default_skeleton()
        with warnings.catch_warnings():
            warnings.simplefilter("always", ConvergenceWarning)
            return COMMANDS[args.command](args, skeleton)
    except (ValueError, KeyError, OSError, EstimationError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
