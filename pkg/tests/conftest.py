import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rdlab.config import standard_config  # noqa: E402
from rdlab.solver import run  # noqa: E402

# three small runs whose slabs cover the unit De Giorgi cylinders at t0 = 2
CI_SLAB_GRIDS = [(3, 20), (2, 40), (1, 80)]


def ci_slab_config(N, n):
    bumps = {"n_bumps": 2, "amplitude": 4.0, "width": 1.0, "spread": 0.5}
    return standard_config(**{
        "grid": {"N": N, "n": n, "L": 10.0},
        "dt": 1 / 128, "t_end": 2.0, "dt_store": 0.125,
        "initial": {"kind": "gaussian_bumps", "params": bumps},
    })


@pytest.fixture(scope="session")
def ci_slabs():
    return [run(ci_slab_config(N, n), weak_norms=False).slab for N, n in CI_SLAB_GRIDS]
