#!/usr/bin/env python3
"""Inverse Renderer - recover geometry, materials and lighting from posed images.

Usage:
    python inverse_renderer.py render data/sample_scene.json --out view.pfm --ldr view.ppm
    python inverse_renderer.py synthesize data/sample_scene.json --out data/sample
    python inverse_renderer.py fit data/sample_scene.json --data data/sample --out scene.ckpt
    python inverse_renderer.py eval scene.ckpt --data data/sample --report report.txt
    python inverse_renderer.py gradcheck data/sample_scene.json --no-color

See ``python inverse_renderer.py <command> --help`` for every option.
"""

import sys

from inverse_renderer.cli import main

if __name__ == "__main__":
    sys.exit(main())
