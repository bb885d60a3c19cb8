"""`python -m arcconv` entry point.

BLAS thread counts must be pinned before numpy is first imported.
"""

import os
import sys

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, os.environ.get("ARC_BENCH_THREADS", "1"))

from arcconv.main import main  # noqa: E402

sys.exit(main())
