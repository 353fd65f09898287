import json
import os
import subprocess
import sys

import pytest

SNIPPET = """
import json
from bbuap import BACKEND
from bbuap.attack import AttackConfig, run_attack
from bbuap.projection import project
from bbuap.tensor import xi_from_zeta
from bbuap.toy import make_preset
import numpy as np
tp = make_preset("binary", seed=0)
X = tp.images[:20]
cfg = AttackConfig(xi=xi_from_zeta(0.1, X, 2), norm=1, directions="dct", freq_fraction=0.5,
                   seed=3, max_iterations=150)
cfg.xi *= 8
rep = run_attack(tp.oracle, X, cfg)
v = np.random.default_rng(0).standard_normal(500)
print(json.dumps({"backend": BACKEND, "objective": rep.objective, "accepted": rep.accepted,
                  "delta": rep.delta.data.ravel().tolist(), "l1": project(v, 1, 3.0).tolist()}))
"""


def run(flag):
    env = dict(os.environ, BBUAP_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


@pytest.mark.slow
def test_numpy_fallback_matches_numba():
    fast, ref = run("0"), run("1")
    assert fast["backend"] == "numba" and ref["backend"] == "numpy"
    assert fast["accepted"] == ref["accepted"] > 0
    assert fast["objective"] == pytest.approx(ref["objective"], rel=0, abs=1e-9)
    assert max(abs(a - b) for a, b in zip(fast["delta"], ref["delta"])) <= 1e-9
    assert max(abs(a - b) for a, b in zip(fast["l1"], ref["l1"])) <= 1e-12
