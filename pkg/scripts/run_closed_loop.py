"""Run the closed loop and write its report as JSON."""

import argparse
import logging

from voxrank.cli import print_report
from voxrank.loop import LoopConfig, run_closed_loop
from voxrank.sim import generate_world


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--users", type=int, default=50)
    ap.add_argument("--products", type=int, default=2000)
    ap.add_argument("--rounds", type=int, default=5)
    ap.add_argument("--sessions", type=int, default=500)
    ap.add_argument("--out", default="loop_report.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    world = generate_world(args.seed, args.users, args.products)
    report = run_closed_loop(world, args.rounds, args.sessions, LoopConfig())
    report.write(args.out)
    print_report(report)
    print(f"report written to {args.out}")


if __name__ == "__main__":
    main()
