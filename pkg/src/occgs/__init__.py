"""Occlusion-aware 3D Gaussian splatting for articulated humans, on the CPU."""

import os

# the TBB layer shipped with some numba wheels is too old and warns on every import
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
