#!/usr/bin/env python3
"""
Script to print the strong convergence ladder of the exact control.
Runs a Hermite target on nested grids sharing the same Brownian paths and
displays the RMS terminal error per step size with the fitted order.
"""

import argparse

from dotenv import load_dotenv

from mfcontrol.analysis import MeanFieldSystem
from mfcontrol.dependencies import get_config
from mfcontrol.exactctrl import ConvergenceLadder, HermiteTarget, convergence_ladder

# Load environment variables from .env file
load_dotenv()

TARGETS = {
    "linear": [[0.0, 1.0]],
    "quadratic": [[0.0, 0.0, 1.0]],
}


def print_ladder_table(name: str, ladder: ConvergenceLadder) -> None:
    """Print ladder rows in a formatted table.

    Args:
        name: Target label shown in the title
        ladder: Result of convergence_ladder
    """
    print("=" * 60)
    print(f"CONVERGENCE LADDER: {name}")
    print("=" * 60)
    print(f"{'DT':<12} | {'RMS ERROR':<14} | {'MAX ERROR':<14}")
    print("-" * 60)

    for dt, rms, largest in ladder.rows():
        print(f"{dt:<12.2e} | {rms:<14.4e} | {largest:<14.4e}")

    print("-" * 60)
    order = "n/a" if ladder.fitted_order is None else f"{ladder.fitted_order:.3f}"
    print(f"Target RMS: {ladder.target_rms:.4f}   fitted order: {order}")
    print("=" * 60)


def main() -> None:
    """Main function to run the ladder."""
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--target", choices=sorted(TARGETS), default="quadratic")
    parser.add_argument("--paths", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    settings = get_config()
    sys = MeanFieldSystem(d=1, n=1, T=1.0, B1=[[1.0]])
    target = HermiteTarget(coefficients=TARGETS[args.target], T_prime=0.5)

    try:
        print(f"Running {args.target} target on {args.paths} paths...")
        ladder = convergence_ladder(
            sys,
            [0.0],
            target,
            [4e-4, 2e-4, 1e-4, 5e-5],
            args.paths,
            seed=args.seed,
            settings=settings,
        )
        print_ladder_table(args.target, ladder)
    except Exception as e:
        print(f"Error: {e}")
        print("Lower --paths or raise MAX_PATH_FLOATS in the environment.")


if __name__ == "__main__":
    main()
