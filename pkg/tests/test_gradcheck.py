import numpy as np
import pytest
import torch

from graphcc.errors import NumericError
from graphcc.gradcheck import analytic_gradients, gradient_check, relative_error, tiny_config


@pytest.fixture(scope="module")
def report():
    return gradient_check(seed=0)


def test_tiny_config_passes(report):
    assert report.passed, "\n".join(report.lines())
    assert report.max_rel_error < 1e-3


def test_report_lists_every_group(report):
    assert list(report.groups) == ["cnn", "W_g", "summarizer", "heads"]


def test_sample_size_per_group(report):
    for group in report.groups.values():
        assert group.checked == min(200, group.size - group.straddling)


def test_zero_lambdas_give_zero_gradients():
    cfg = tiny_config().replace(**{"loss.lambda_mwtc": 0.0, "loss.lambda_nc": 0.0, "loss.lambda_gc": 0.0})
    grads = analytic_gradients(cfg)
    assert grads and all(torch.count_nonzero(g) == 0 for g in grads.values())


def test_relative_error_floor():
    assert relative_error(0.0, 3e-9, 1e-5) == pytest.approx(3e-4)
    assert relative_error(2.0, 1.0, 1e-5) == pytest.approx(0.5)


def test_failure_raises_numeric_error():
    # a huge step makes central differences visibly wrong
    with pytest.raises(NumericError, match="parameter groups"):
        gradient_check(seed=0, per_group=5, step=0.5, raise_on_failure=True)


def test_tiny_config_shape():
    cfg = tiny_config()
    assert (cfg.aug.window_len, cfg.model.d, cfg.model.kbar, cfg.train.batch_size) == (8, 8, 2, 2)
    assert np.isclose(cfg.loss.tau, 0.2)
