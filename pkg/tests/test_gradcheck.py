import numpy as np
import pytest

from cpseg import gradcheck as G
from cpseg import tensor as T
from cpseg.tensor.core import make_result


@pytest.fixture(scope="module")
def results():
    return G.run_gradcheck()


def test_every_check_passes(results):
    failed = [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert not failed


def test_each_suite_listed_once(results):
    names = [r.name for r in results]
    assert len(names) == len(set(names)) == len(G.OPS) + len(G.MODULES)
    assert set(G.MODULES) == {"residual_block", "attention_module", "supervision_head"}
    for op in ("conv3d", "batch_norm_train", "batch_norm_eval", "prelu", "trilinear_upsample", "wbce",
               "total_loss"):
        assert op in G.OPS


def test_checks_cover_coordinates(results):
    assert all(r.n_checked > 0 for r in results)


def test_rel_error_floor():
    assert G.rel_error(np.zeros(3), np.full(3, 1e-9)) < G.TOLERANCE
    assert G.rel_error(np.ones(3), np.ones(3) * 1.01) > G.TOLERANCE


def test_unknown_suite():
    with pytest.raises(KeyError):
        G.run_gradcheck(["no_such_op"])


def test_mutated_backward_is_caught(monkeypatch):
    original = T.conv3d

    def skewed(*args, **kwargs):
        y = original(*args, **kwargs)
        return make_result(y.data, "skewed", (y,), lambda g: (g * 1.01,))

    monkeypatch.setattr(T, "conv3d", skewed)
    res = G.run_gradcheck(["conv3d", "residual_block"])
    assert all(not r.passed for r in res)


def test_format_table(results):
    table = G.format_table(results)
    assert table.count("PASS") == len(results)
