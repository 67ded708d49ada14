import math

import numpy as np
import pytest

from pointref.ensemble import Candidate, QueryContext

TEXT = np.eye(4)[0]


def emb_for_sim(sim, dim=4):
    """Unit vector whose clip_sim against ``TEXT`` equals ``sim`` (for 0 <= sim <= 100)."""
    c = sim / 100.0
    v = np.zeros(dim)
    v[0], v[1] = c, math.sqrt(max(0.0, 1 - c * c))
    return v


def make_cand(source, rank, conf, sim=None, box=(0.1, 0.1, 0.5, 0.5)):
    emb = None if sim is None else emb_for_sim(sim)
    return Candidate(box, conf, source, rank, emb)


@pytest.fixture
def ctx():
    return QueryContext(TEXT)


def shifted_pair(target_iou, w=0.2, h=0.2, x=0.1, y=0.1):
    """Equal-size boxes offset horizontally so that IoU = target (by (1 - s) / (1 + s) with s the shift fraction)."""
    s = (1 - target_iou) / (1 + target_iou)
    gt = (x, y, x + w, y + h)
    pred = (x + s * w, y, x + s * w + w, y + h)
    return gt, pred


def ten_record_fixture():
    """IoUs {0.9 x4, 0.6 x3, 0.3 x2, 0.1 x1} spread over all three size buckets."""
    from pointref.metrics import EvalRecord

    ious = [0.9] * 4 + [0.6] * 3 + [0.3] * 2 + [0.1]
    sides = [0.05, 0.1, 0.3, 0.05, 0.1, 0.3, 0.05, 0.1, 0.3, 0.3]  # areas 0.0025 / 0.01 / 0.09
    records = []
    for i, (v, side) in enumerate(zip(ious, sides)):
        gt, pred = shifted_pair(v, side, side)
        records.append(EvalRecord(f"img{i}", gt, pred))
    return records


_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion of the toolkit")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed
    if report.when == "call" or failed:
        prev = _ACCEPTANCE.get(number, (title, True))
        _ACCEPTANCE[number] = (title, prev[1] and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}")
