import os
from pathlib import Path

import numpy as np
import pytest

from ppqos.dataset import QosMatrix

# WS-DREAM matrices are not redistributable with the code; tests that
# need them look here and skip when absent (see README, "Dataset").
DATA_DIR = Path(os.environ.get("PPQOS_DATA", Path(__file__).resolve().parent.parent / "data"))
RT_PATH = DATA_DIR / "rtMatrix.txt"
TP_PATH = DATA_DIR / "tpMatrix.txt"


def require_dataset(*paths):
    for path in paths:
        if not path.exists():
            pytest.skip(
                f"WS-DREAM file {path} not available in this environment "
                "(place rtMatrix.txt/tpMatrix.txt under data/ or set PPQOS_DATA)"
            )


def random_qos_matrix(n, m, density=0.7, seed=0, low=0.5, high=9.5) -> QosMatrix:
    """Random strictly-positive matrix with roughly the given density."""
    rng = np.random.default_rng(seed)
    values = rng.uniform(low, high, (n, m))
    values[rng.random((n, m)) >= density] = np.nan
    return QosMatrix(values)
