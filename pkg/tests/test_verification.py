import json

import numpy as np
import pytest

from align_extract import LINEAR, LOG, ConfigurationError
from align_extract.verification import check_instance, instance_for, random_instance, verify_batch


def test_random_instances_are_feasible():
    rng = np.random.default_rng(0)
    for n in range(2, 9):
        inst = random_instance(rng, n)
        assert inst.q_row.size == n and np.all(inst.mu_row > 0)
        assert inst.q_row.min() < inst.v_target < inst.q_row.max()


def test_instance_stream_is_stable():
    a, b = instance_for(4, 7), instance_for(4, 7)
    np.testing.assert_array_equal(a.q_row, b.q_row)
    assert a.v_target == b.v_target
    assert not np.array_equal(instance_for(4, 8).mu_row, a.mu_row) or a.q_row.size != instance_for(4, 8).q_row.size


def test_single_instance_passes_tolerances():
    r = check_instance(0, 0, LOG)
    assert r.hard_l1 < 1e-4 and r.kkt_max < 1e-6
    assert set(r.soft_l1) == {"0.5", "3.0", "10.0"} and max(r.soft_l1.values()) < 1e-3


def test_small_batch_and_json():
    rep = verify_batch(6, seed=1)
    assert rep.passed
    doc = json.loads(rep.to_json())
    assert doc["summary"]["n_instances"] == 6 and len(doc["instances"]) == 6
    assert doc["summary"]["max_hard_l1"] < 1e-4


def test_linear_batch_has_no_soft_column():
    rep = verify_batch(4, seed=2, tol=1e-3, reg=LINEAR)
    assert rep.passed and all(r.soft_l1 == {} for r in rep.results)


def test_processes_give_identical_results():
    strip = lambda rep: [{k: v for k, v in r.to_dict().items() if k != "seconds"} for r in rep.results]
    assert strip(verify_batch(5, seed=3, threads=1)) == strip(verify_batch(5, seed=3, threads=2))


def test_zero_tolerance_fails():
    rep = verify_batch(2, seed=0, tol=0.0)
    assert not rep.passed and rep.summary()["n_failed"] == 2


@pytest.mark.parametrize("kwargs", [dict(n_instances=0), dict(threads=0), dict(tol=-1.0)])
def test_batch_validation(kwargs):
    with pytest.raises(ConfigurationError):
        verify_batch(**{"n_instances": 1, **kwargs})
