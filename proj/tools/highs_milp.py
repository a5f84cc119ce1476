#!/usr/bin/env python3
"""Solve a free-format MPS model with HiGHS and write the raw solution file.

usage: highs_milp.py MODEL.mps --abs-gap G --time-limit T --solution OUT
       highs_milp.py --check
"""
import argparse
import sys


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("model", nargs="?")
    ap.add_argument("--abs-gap", type=float, default=1e-3)
    ap.add_argument("--time-limit", type=float, default=7200.0)
    ap.add_argument("--solution")
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()

    try:
        import highspy
    except ImportError as exc:
        print(f"highspy not importable: {exc}", file=sys.stderr)
        return 3
    if args.check:
        return 0
    if not args.model or not args.solution:
        ap.error("model and --solution are required")

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("threads", 1)
    h.setOptionValue("mip_abs_gap", args.abs_gap)
    h.setOptionValue("mip_rel_gap", 0.0)
    h.setOptionValue("time_limit", args.time_limit)
    if h.readModel(args.model) == highspy.HighsStatus.kError:
        print(f"cannot read {args.model}", file=sys.stderr)
        return 2
    h.run()
    status = h.modelStatusToString(h.getModelStatus())
    info = h.getInfo()
    print(f"status={status}")
    print(f"objective={info.objective_function_value!r}")
    print(f"dual_bound={info.mip_dual_bound!r}")
    h.writeSolution(args.solution, 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
