import os

# numba caps set_num_threads at the count it saw on import; allow the 8-thread checks
os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
