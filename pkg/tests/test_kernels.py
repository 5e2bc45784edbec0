import json
import os
import subprocess
import sys

import numpy as np
import pytest

from blockrefine import _kernels as K


def test_topk_agree(rng):
    sims = rng.integers(0, 5, size=(20, 30)).astype(float)  # many ties
    for k in (1, 3, 30):
        np.testing.assert_array_equal(K.topk_rows_np(sims, k), K.topk_rows_nb(sims, k))


def test_assign_nearest_agree(rng):
    X, C = rng.normal(size=(200, 6)), rng.normal(size=(7, 6))
    la, da = K.assign_nearest_np(X, C)
    lb, db = K.assign_nearest_nb(X, C)
    np.testing.assert_array_equal(la, lb)
    np.testing.assert_allclose(da, db, rtol=1e-10, atol=1e-12)


def test_minibatch_update_agree(rng):
    C0, batch = rng.normal(size=(4, 3)), rng.normal(size=(50, 3))
    lab = rng.integers(0, 4, 50)
    Ca, ca = C0.copy(), np.ones(4)
    Cb, cb = C0.copy(), np.ones(4)
    K.minibatch_update_np(Ca, ca, batch, lab)
    K.minibatch_update_nb(Cb, cb, batch, lab)
    np.testing.assert_allclose(Ca, Cb, rtol=1e-12, atol=1e-14)
    np.testing.assert_array_equal(ca, cb)


def test_contingency_agree(rng):
    a, b = rng.integers(0, 5, 100), rng.integers(0, 3, 100)
    np.testing.assert_array_equal(K.contingency_np(a, b, 5, 3), K.contingency_nb(a, b, 5, 3))
    assert K.contingency_np(a, b, 5, 3).sum() == 100


def test_expected_mi_agree(rng):
    a, b = np.array([10, 20, 30]), np.array([25, 25, 5, 5])
    assert K.expected_mutual_info_np(a, b, 60) == pytest.approx(K.expected_mutual_info_nb(a, b, 60), abs=1e-12)


def test_distance_sums_agree(rng):
    X, lab = rng.normal(size=(80, 4)), rng.integers(0, 3, 80)
    np.testing.assert_allclose(K.cluster_distance_sums_np(X, lab, 3), K.cluster_distance_sums_nb(X, lab, 3),
                               rtol=1e-8, atol=1e-8)


def test_hungarian_is_a_permutation(rng):
    cost = rng.random((9, 9))
    for f in (K.hungarian_np, K.hungarian_nb):
        assert sorted(f(cost).tolist()) == list(range(9))


_PROBE = """
import json, numpy as np
from blockrefine import _kernels as K
from blockrefine.cluster import KmeansConfig, cluster_report
rng = np.random.default_rng(0)
X = rng.normal(size=(120, 5)); y = rng.integers(0, 3, 120)
rep = cluster_report(X, y, KmeansConfig(k=3, batch_size=32, iterations=5, restarts=3))
print(json.dumps({"numba": K.USE_NUMBA, "rep": rep}))
"""


def _run_probe(flag):
    env = dict(os.environ)
    env.pop("MRF_DISABLE_NUMBA", None)
    if flag is not None:
        env["MRF_DISABLE_NUMBA"] = flag
    out = subprocess.run([sys.executable, "-c", _PROBE], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_env_flag_selects_path_and_results_agree():
    fast, slow = _run_probe(None), _run_probe("1")
    assert fast["numba"] is True and slow["numba"] is False
    for key, val in fast["rep"].items():
        # numpy distance sums use the |x|^2 + |y|^2 - 2xy expansion, numba exact differences
        tol = 1e-7 if key == "SIL" else 1e-9
        assert slow["rep"][key] == pytest.approx(val, rel=tol, abs=tol), key
