import json

import numpy as np
import pytest

import cfseg


def test_sample_attributes_is_seeded():
    a = cfseg.sample_attributes(7, 50)
    assert a == cfseg.sample_attributes(7, 50)
    assert all(r["severity"] == 0.0 for r in a if r["disease"] == 0)


def test_nonpositive_n_raises():
    with pytest.raises(ValueError):
        cfseg.sample_attributes(1, 0)


def test_render_and_silver():
    sick = {"sex": 0, "scanner": 1, "disease": 1, "severity": 0.8}
    image, gt = cfseg.render(sick, anatomy_seed=3)
    assert image.shape == (64, 64) and gt.shape == (64, 64)
    assert 0.0 <= image.min() and image.max() <= 1.0
    silver = cfseg.degrade_to_silver(gt, sick, seed=1)
    assert cfseg.volume(silver, "right") < cfseg.volume(gt, "right")
    healthy = dict(sick, disease=0, severity=0.0)
    _, gt_healthy = cfseg.render(healthy, anatomy_seed=3)
    assert np.array_equal(gt, gt_healthy)


def test_metric_examples():
    a = np.array([[1, 1, 1, 1, 0, 0]], dtype=np.uint8)
    b = np.array([[0, 0, 1, 1, 1, 1]], dtype=np.uint8)
    assert cfseg.dice(a, b, "right") == 0.5
    assert cfseg.dice(a, a) == 1.0
    assert cfseg.volume(np.full((2, 4), 2, dtype=np.uint8), "left", 0.25) == 2.0
    assert cfseg.density_overlap([0, 0, 1, 1], [0, 1, 1, 1], 2, (0.0, 1.0)) == pytest.approx(0.75)


def test_invalid_mask_rejected():
    with pytest.raises(ValueError):
        cfseg.dice(np.full((2, 2), 5, dtype=np.uint8), np.zeros((2, 2), dtype=np.uint8))


def _results(tmp_path, n):
    image, gt = cfseg.render({"sex": 0, "scanner": 0, "disease": 0, "severity": 0.0}, anatomy_seed=1, size=16)
    root = tmp_path / "data"
    count = cfseg.build_dataset({"n": n, "size": 16, "disease_prevalence": 0.5, "split_ratios": [0, 0, 1]}, root)
    assert count == n
    lines = []
    for line in (root / "manifest.jsonl").read_text().splitlines():
        rec = json.loads(line)
        for arm in ("direct", "cfseg"):
            r = dict(rec)
            for key in ("image_path", "gt_mask_path", "silver_mask_path"):
                r[key] = str(root / rec[key])
            r.update(arm=arm, pred_mask_path=str(root / rec["gt_mask_path"]), seg_checksum="x", status="ok")
            lines.append(json.dumps(r))
    out = tmp_path / "results.jsonl"
    out.write_text("\n".join(lines) + "\n")
    return out


def test_study_session_roundtrip(tmp_path):
    results = _results(tmp_path, 12)
    store = cfseg.SessionStore(tmp_path / "sessions", results)
    sid = store.create({"rater": "r", "n_healthy": -1, "n_diseased": -1, "seed": 2})
    n = store.n_trials(sid)
    assert n == 12
    assert store.summary(sid)["warning"] is not None
    for k in range(n):
        store.choose(sid, k, "left")
    with pytest.raises(RuntimeError):
        store.choose(sid, 0, "right")
    summary = store.summary(sid)
    assert summary["answered"] == n
    for group in summary["groups"].values():
        assert sum(group["percent"].values()) == pytest.approx(100.0)
    reopened = cfseg.SessionStore(tmp_path / "sessions")
    assert reopened.summary(sid) == summary
