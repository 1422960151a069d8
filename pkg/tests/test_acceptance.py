"""Acceptance gate.

Every test prints one ``PASS``/``FAIL`` line with the measured numbers and then
asserts at the stated tolerance.  Run alone with::

    pytest tests/test_acceptance.py -v -s
"""

import json
import time

import numpy as np
import pytest

from activect.agent import OracleScorer, ScorerModel, reliability_scores
from activect.cli import main
from activect.gradcheck import TOLERANCE, run_gradcheck
from activect.phantoms import feature_phantoms, make_roi_mask, render_phantom, shepp_logan_family
from activect.policies import MeasurementSource, PolicyConfig, greedy_episode, run_policy
from activect.tomo import Geometry, Sinogram, backproject, default_geometry, forward_project
from activect.training import TRAIN_POLICY, TrainConfig, train_alternating

from oracles import dense_projector

pytestmark = pytest.mark.slow

SAS = PolicyConfig(kind="SAS", k0=5, k=1, k_max=15, window=(5.0, 10.0))
US = PolicyConfig(kind="US", k_max=15)


@pytest.fixture
def gate(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return report


def _unit(img):
    return (img - img.min()) / (img.max() - img.min())


def family_suite(size=64):
    return [_unit(render_phantom(p, size)) for p in shepp_logan_family(5, seed=0)]


def feature_suite(size=64, count=5, seed=0):
    out = []
    for spec, roi in feature_phantoms(count, seed):
        img = _unit(render_phantom(spec, size))
        out.append((img, make_roi_mask(roi, img)))
    return out


def test_adjoint_identity(gate):
    g = Geometry(64, 64, 95, num_angles=90)
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        x = rng.normal(size=g.shape)
        y = Sinogram(g, np.arange(90), rng.normal(size=(90, 95)))
        lhs = float(np.sum(forward_project(x, g).data * y.data))
        rhs = float(np.sum(x * backproject(y)))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    secs = time.perf_counter() - t0
    ok = worst < 1e-10 and secs < 10
    assert gate(1, ok, f"adjoint max rel err {worst:.2e} over 100 pairs in {secs:.2f} s")


def test_projector_matches_dense_oracle(gate):
    g = default_geometry(16)
    t0 = time.perf_counter()
    A = dense_projector(g)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10):
        x = rng.random(g.shape)
        fast = forward_project(x, g).data.ravel()
        ref = A @ x.ravel()
        worst = max(worst, np.linalg.norm(fast - ref) / np.linalg.norm(ref))
    secs = time.perf_counter() - t0
    ok = worst < 1e-12 and secs < 5
    assert gate(2, ok, f"dense oracle rel err {worst:.2e} at 16x16, T=180, in {secs:.2f} s")


def test_gradient_suite(gate):
    t0 = time.perf_counter()
    results = run_gradcheck(seed=0)
    secs = time.perf_counter() - t0
    worst = max(r.rel_err for r in results)
    ok = all(r.ok for r in results) and worst < TOLERANCE and secs < 60
    bad = [r.name for r in results if not r.ok]
    assert gate(3, ok, f"{len(results)} gradient checks, worst rel err {worst:.2e}, "
                       f"{secs:.1f} s, failing {bad}")


def test_dose_quality_trend(gate):
    g = default_geometry(64)
    t0 = time.perf_counter()
    suite = family_suite()
    means = []
    for k in (15, 30, 60, 90):
        cfg = PolicyConfig(kind="US", k_max=k)
        means.append(np.mean([run_policy(MeasurementSource.from_image(im, g), cfg).final_metrics.psnr
                              for im in suite]))
    secs = time.perf_counter() - t0
    ok = all(b > a for a, b in zip(means, means[1:])) and secs < 120
    txt = ", ".join(f"{k}: {m:.2f}" for k, m in zip((15, 30, 60, 90), means))
    assert gate(4, ok, f"US mean PSNR by k_max {{{txt}}} dB in {secs:.1f} s")


@pytest.fixture(scope="module")
def feature_runs():
    """US, oracle-scorer SAS and GS episodes on the feature suite at 64x64, T=180."""
    g = default_geometry(64)
    runs = {"US": [], "SAS": [], "GS": []}
    for img, _ in feature_suite():
        src = MeasurementSource.from_image(img, g)
        orc = OracleScorer(forward_project(img, g).data)
        runs["US"].append(run_policy(src, US))
        runs["SAS"].append(run_policy(src, SAS, None, orc))
        runs["GS"].append(greedy_episode(src, 15))
    return runs


def _mean_psnr(traces):
    return float(np.mean([t.final_metrics.psnr for t in traces]))


def test_active_beats_uniform(gate, feature_runs):
    us, sas = _mean_psnr(feature_runs["US"]), _mean_psnr(feature_runs["SAS"])
    gap = sas - us
    assert gate(5, gap >= 0.0, f"oracle SAS {sas:.2f} dB vs US {us:.2f} dB, gap {gap:+.2f} dB")


def test_greedy_dominance(gate, feature_runs):
    us, gs = _mean_psnr(feature_runs["US"]), _mean_psnr(feature_runs["GS"])
    monotone = all(all(b.psnr >= a.psnr for a, b in zip(t.metrics, t.metrics[1:]))
                   for t in feature_runs["GS"])
    ok = gs >= us and monotone
    assert gate(6, ok, f"GS {gs:.2f} dB vs US {us:.2f} dB, per-step non-decreasing: {monotone}")


def test_timing_ordering(gate, feature_runs):
    ms = {k: float(np.mean([t.total_ms for t in v])) for k, v in feature_runs.items()}
    ratio = ms["GS"] / ms["SAS"]
    ok = ms["US"] < ms["SAS"] < ms["GS"] and ratio >= 10
    assert gate(7, ok, f"per-episode US {ms['US']:.0f} ms < SAS {ms['SAS']:.0f} ms "
                       f"< GS {ms['GS']:.0f} ms, GS/SAS {ratio:.1f}")


def test_training_smoke(gate):
    g = default_geometry(64)
    t0 = time.perf_counter()
    data = [(im, None) for im in family_suite()]
    pf, scorer, rec = train_alternating(data, TrainConfig(epochs=20), TRAIN_POLICY, g)
    lr_first, lr_last = rec[0].loss_r, rec[-1].loss_r
    la_first, la_last = rec[0].loss_a, rec[-1].loss_a
    # the sixth member of the same family is never seen in training
    held = _unit(render_phantom(shepp_logan_family(6, seed=0)[5], 64))
    src = MeasurementSource.from_image(held, g)
    trained = run_policy(src, SAS, pf, scorer).final_metrics.psnr
    const = run_policy(src, SAS, pf, ScorerModel.constant(g.num_detectors)).final_metrics.psnr
    secs = time.perf_counter() - t0
    ok = lr_last < lr_first and la_last < la_first and trained >= const and secs < 900
    assert gate(8, ok, f"L_R {lr_first:.5f} -> {lr_last:.5f}, L_A {la_first:.5f} -> {la_last:.5f}, "
                       f"held-out SAS trained {trained:.2f} dB vs constant {const:.2f} dB, {secs:.0f} s")


def test_roi_effect(gate):
    g = default_geometry(64)
    t0 = time.perf_counter()
    train = feature_suite(seed=0)
    held = feature_suite(count=3, seed=100)
    roi_psnr = {}
    for roi in (False, True):
        pf, scorer, _ = train_alternating(train, TrainConfig(epochs=20, roi=roi), TRAIN_POLICY, g)
        vals = []
        for img, mask in held:
            src = MeasurementSource.from_image(img, g, roi_mask=mask)
            vals.append(run_policy(src, SAS, pf, scorer).final_metrics.roi_psnr)
        roi_psnr[roi] = float(np.mean(vals))
    secs = time.perf_counter() - t0
    gap = roi_psnr[True] - roi_psnr[False]
    ok = gap >= 0.0 and secs < 1200
    assert gate(9, ok, f"held-out RoI-PSNR SAS_RoI {roi_psnr[True]:.2f} dB vs SAS "
                       f"{roi_psnr[False]:.2f} dB, gap {gap:+.2f} dB, {secs:.0f} s")


def test_compare_determinism(gate, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "geometry": {"size": 32, "num_angles": 60},
        "phantoms": [{"kind": "shepp_logan"}, {"kind": "feature", "index": 1}],
        "policies": [{"kind": "US", "k_max": 10}, {"kind": "RS", "k_max": 10},
                     {"kind": "SAS", "k0": 4, "k_max": 10, "window": [5, 20]},
                     {"kind": "GDS", "k0": 4, "k_max": 10}],
        "noise": ["none", "L2"], "rs_repeats": 3, "seed": 3,
    }))
    trees = []
    for name, threads in (("a", 1), ("b", 1), ("c", 4)):
        out = tmp_path / name
        assert main(["--config", str(cfg), "--threads", str(threads), "--out", str(out), "compare"]) == 0
        files = sorted(p for p in out.rglob("*") if p.suffix in (".csv", ".raw"))
        trees.append({str(p.relative_to(out)): p.read_bytes() for p in files})
    ok = trees[0] == trees[1] == trees[2] and len(trees[0]) > 0
    assert gate(10, ok, f"{len(trees[0])} CSV and raw files identical across runs at 1, 1 and 4 threads")


def test_reliability_contract(gate):
    rng = np.random.default_rng(11)
    n, D, chunk = 1_000_000, 95, 100_000
    lo, hi, ident_ok, distinct_ok = np.inf, -np.inf, True, True
    for start in range(0, n, chunk):
        a = rng.normal(0.0, 10.0 ** rng.uniform(-8, 3, size=(chunk, 1)), size=(chunk, D))
        b = a.copy()
        same = rng.random(chunk) < 0.5
        # distinct rows differ by anything from one ulp to a large offset
        diff = ~same
        cols = rng.integers(0, D, size=diff.sum())
        rows = np.flatnonzero(diff)
        kind = rng.random(rows.size)
        tiny = np.nextafter(b[rows, cols], np.inf)
        big = b[rows, cols] + rng.normal(0.0, 10.0 ** rng.uniform(-6, 4, size=rows.size))
        b[rows, cols] = np.where(kind < 0.5, tiny, big)
        diff = np.any(a != b, axis=1)
        r = reliability_scores(a, b)
        lo, hi = min(lo, r.min()), max(hi, r.max())
        ident_ok &= bool(np.all((r == 1.0) == ~diff))
        distinct_ok &= bool(np.all(r[diff] < 1.0))
    ok = lo > 0.0 and hi <= 1.0 and ident_ok and distinct_ok
    assert gate(11, ok, f"1e6 pairs, scores in [{lo:.3g}, {hi:.3g}], "
                        f"equal-to-one iff identical: {ident_ok and distinct_ok}")
