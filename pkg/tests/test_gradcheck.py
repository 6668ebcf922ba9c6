import time

import numpy as np

from fsproto import autodiff as ad
from fsproto import gradcheck as gc


def test_all_components_pass_at_default_tolerance():
    start = time.perf_counter()
    reports = gc.run_gradcheck(eps=1e-4, tol=1e-4)
    elapsed = time.perf_counter() - start
    assert set(reports) == set(gc.COMPONENTS)
    assert len(reports) >= 6
    for name, report in reports.items():
        assert report.passed, f"{name}: {report.max_rel_err}"
    assert elapsed < 60.0


def test_report_covers_every_parameter():
    reports = gc.run_gradcheck()
    for report in reports.values():
        assert set(report.max_rel_err) == {
            "embedding", "hidden_w", "hidden_b", "out_w", "out_b", "proj_w", "proj_b"}


def test_supcon_components_touch_no_projection():
    reports = gc.run_gradcheck()
    # projection never feeds the contrastive loss: exact-zero gradients agree
    assert reports["supcon_out"].max_rel_err["proj_w"] == 0.0
    assert reports["supcon_in"].max_rel_err["proj_b"] == 0.0


def test_injected_sign_flip_is_caught():
    ad.set_backward_corruption("tanh")
    try:
        reports = gc.run_gradcheck()
    finally:
        ad.set_backward_corruption(None)
    assert not all(r.passed for r in reports.values())
    assert not reports["encoder"].passed


def test_report_lines_render():
    reports = gc.run_gradcheck()
    lines = reports["combined"].lines()
    assert len(lines) == 7
    assert all(("PASS" in line or "FAIL" in line) for line in lines)
