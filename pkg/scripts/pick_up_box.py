"""Pick-up-a-box scenario: retarget onto shorter arms with and without hand contacts.

    python3 scripts/pick_up_box.py [--out-dir DIR] [--plot]

Prints contact errors and hand jumps; ``--plot`` saves the left-hand height
curves (needs matplotlib).
"""

import argparse
import time
from pathlib import Path

import numpy as np

from skelretarget import io, synthetic
from skelretarget.kinematics import default_skeleton, fk, motion_positions
from skelretarget.retarget import RetargetConfig, retarget_motion


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out-dir", type=Path, default=Path("box_out"))
    ap.add_argument("--arm-scale", type=float, default=0.9)
    ap.add_argument("--alphas", type=float, nargs=3, default=(10.0, 5.0, 1.0))
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()

    sk = default_skeleton()
    hand = sk.index("left_hand")
    src, beta_s, beta_t, cons = synthetic.pick_up_box(sk, arm_scale=args.arm_scale)
    cfg = RetargetConfig(alpha1=args.alphas[0], alpha2=args.alphas[1], alpha3=args.alphas[2])
    args.out_dir.mkdir(parents=True, exist_ok=True)

    curves = {"source": motion_positions(sk, src)[:, hand, 1]}
    for label, cs in (("unconstrained", []), ("constrained", cons)):
        t0 = time.perf_counter()
        res = retarget_motion(src, beta_t, beta_s, cs, cfg=cfg, skeleton=sk)
        P = fk(sk, sk.offsets(beta_t), res.motion.theta, res.motion.translation).positions[:, hand]
        curves[label] = P[:, 1]
        io.save_motion(args.out_dir / f"{label}.json", res.motion, sk)
        io.export_trajectory_csv(res.motion, sk, hand, "y", args.out_dir / f"{label}_left_hand_y.csv")
        errs = [np.linalg.norm(P[c.frame] - c.target_position) for c in cons]
        jump = np.linalg.norm(np.diff(P, axis=0), axis=1).max()
        print(f"{label:>13}: contact error {', '.join(f'{100 * e:.2f} cm' for e in errs)}, "
              f"max hand jump {100 * jump:.2f} cm, {len(res.windows)} windows, {time.perf_counter() - t0:.1f}s")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 3.5))
        for label, y in curves.items():
            ax.plot(y, label=label)
        for c in cons:
            ax.plot(c.frame, c.target_position[1], "kx")
        ax.set_xlabel("frame")
        ax.set_ylabel("left hand height (m)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.out_dir / "left_hand_height.png", dpi=120)
        print(f"plot written to {args.out_dir / 'left_hand_height.png'}")


if __name__ == "__main__":
    main()
