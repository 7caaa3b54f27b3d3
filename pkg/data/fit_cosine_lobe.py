"""Regenerate the clamped-cosine SG constants file.

Usage:
    python data/fit_cosine_lobe.py [--lo 1.0] [--hi 5.0] [--grid 401]
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from inverse_renderer.sg_math import CONSTANTS_FILE, fit_clamped_cosine, write_cosine_constants  # noqa: E402

logger = logging.getLogger(__name__)


def main() -> None:
    parser = argparse.ArgumentParser(description="Fit the clamped-cosine SG lobe.")
    parser.add_argument("--lo", type=float, default=1.0, help="Lower sharpness bound.")
    parser.add_argument("--hi", type=float, default=5.0, help="Upper sharpness bound.")
    parser.add_argument("--grid", type=int, default=401, help="Grid size before refinement.")
    parser.add_argument("--out", default=str(CONSTANTS_FILE), help="Output constants file.")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    fit = fit_clamped_cosine(args.lo, args.hi, args.grid)
    logger.info("sharpness=%.6f amplitude=%.6f residual=%.6f", fit.sharpness, fit.amplitude, fit.residual)
    write_cosine_constants(fit, args.out)


if __name__ == "__main__":
    main()
