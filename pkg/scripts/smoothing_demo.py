"""Noise removal by IK against filtered joint targets, swept over filter radius.

    python3 scripts/smoothing_demo.py [--noise RAD] [--radius R ...] [--plot FILE]

Prints second-difference energy and end-effector error against the
noise-free motion for each radius.
"""

import argparse

import numpy as np

from skelretarget import synthetic
from skelretarget.kinematics import default_skeleton, motion_positions
from skelretarget.smoothing import SmoothingConfig, second_difference_energy, smooth_motion


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--frames", type=int, default=90)
    ap.add_argument("--noise", type=float, default=0.03)
    ap.add_argument("--radius", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--gamma", type=float, default=10.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--plot", metavar="FILE", help="save left-hand height curves (needs matplotlib)")
    args = ap.parse_args()

    sk = default_skeleton()
    ee = list(sk.end_effectors)
    hand = sk.index("left_hand")
    truth = synthetic.sine_motion(sk, args.frames, seed=args.seed)
    noisy = synthetic.add_angle_noise(truth, args.noise, seed=args.seed + 10)
    P_true, P_in = motion_positions(sk, truth), motion_positions(sk, noisy)
    e_in = np.linalg.norm(P_in[:, ee] - P_true[:, ee], axis=-1)
    print(f"input: second difference {second_difference_energy(P_in):.2e}, "
          f"end-effector error mean {100 * e_in.mean():.2f} cm, max {100 * e_in.max():.2f} cm")
    curves = {"truth": P_true[:, hand, 1], "noisy": P_in[:, hand, 1]}
    for r in args.radius:
        out, _ = smooth_motion(noisy, cfg=SmoothingConfig(args.gamma, r), skeleton=sk)
        P = motion_positions(sk, out)
        e = np.linalg.norm(P[:, ee] - P_true[:, ee], axis=-1)
        curves[f"radius {r}"] = P[:, hand, 1]
        print(f"radius {r}: second difference {second_difference_energy(P):.2e}, "
              f"end-effector error mean {100 * e.mean():.2f} cm, max {100 * e.max():.2f} cm")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 3.5))
        for label, y in curves.items():
            ax.plot(y, label=label, lw=1.0)
        ax.set_xlabel("frame")
        ax.set_ylabel("left hand height (m)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)


if __name__ == "__main__":
    main()
