import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from activect.agent import (OracleScorer, ScorerModel, SelectionState, reliability_score,
                            reliability_scores, score_all_candidates, scorer_backward,
                            scorer_forward, select_topk_in_range)
from activect.errors import ConfigurationError, ExhaustionError
from activect.phantoms import Ellipse, EllipsePhantom, render_phantom, shepp_logan
from activect.policies import uniform_angles
from activect.recon import SartConfig, sart
from activect.tomo import AngleSet, Geometry, default_geometry, forward_project


def reliability_oracle(a, b):
    mpmath.mp.dps = 50
    s = mpmath.fsum((mpmath.mpf(float(x)) - mpmath.mpf(float(y))) ** 2 for x, y in zip(a, b))
    return float(mpmath.exp(-s / len(a)))


class TestReliability:
    def test_identical(self):
        r = np.random.default_rng(0).normal(size=31)
        assert reliability_score(r, r) == 1.0

    def test_half(self):
        D = 16
        a = np.zeros(D)
        b = np.full(D, math.sqrt(math.log(2.0)))
        assert reliability_score(a, b) == pytest.approx(0.5, abs=1e-15)

    def test_extended_precision_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            D = int(rng.integers(1, 200))
            a, b = rng.normal(size=D), rng.normal(0.0, 0.3, size=D) + rng.normal(size=D) * 0.1
            want = reliability_oracle(a, b)
            assert abs(reliability_score(a, b) - want) < 1e-12

    def test_tiny_difference_stays_below_one(self):
        a = np.ones(64)
        b = a.copy()
        b[3] = np.nextafter(1.0, 2.0)
        assert reliability_score(a, b) < 1.0

    def test_huge_difference_stays_positive(self):
        assert reliability_score(np.zeros(4), np.full(4, 1e200)) > 0.0

    def test_length_mismatch(self):
        with pytest.raises(ConfigurationError):
            reliability_score(np.zeros(3), np.zeros(4))

    @settings(max_examples=200)
    @given(arrays(np.float64, 12, elements=st.floats(-1e6, 1e6)),
           arrays(np.float64, 12, elements=st.floats(-1e6, 1e6)))
    def test_range_and_identity(self, a, b):
        r = reliability_score(a, b)
        assert 0.0 < r <= 1.0
        assert (r == 1.0) == bool(np.array_equal(a, b))

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(7, 9)), rng.normal(size=(7, 9))
        np.testing.assert_array_equal(reliability_scores(a, b),
                                      [reliability_score(x, y) for x, y in zip(a, b)])


class TestScorer:
    def test_constant(self):
        m = ScorerModel.constant(23)
        rows = np.random.default_rng(0).normal(size=(5, 23)) * 100
        np.testing.assert_array_equal(scorer_forward(m, rows), 0.5)

    def test_output_in_open_interval(self):
        m = ScorerModel.create(10, seed=0)
        rows = np.random.default_rng(1).normal(size=(50, 10)) * 1e6
        s = scorer_forward(m, rows)
        assert np.all((s > 0.0) & (s < 1.0))

    def test_single_row_returns_float(self):
        m = ScorerModel.create(10, seed=0)
        assert isinstance(scorer_forward(m, np.ones(10)), float)

    def test_wrong_length(self):
        with pytest.raises(ConfigurationError):
            scorer_forward(ScorerModel.create(10), np.ones((2, 11)))

    def test_every_weight_matters(self):
        m = ScorerModel.create(12, seed=3)
        rows = np.random.default_rng(4).normal(size=(20, 12))
        base = scorer_forward(m, rows)
        for name, p in m.params().items():
            p.flat[0] += 0.5
            assert not np.allclose(scorer_forward(m, rows), base), name
            p.flat[0] -= 0.5

    def test_finite_differences(self):
        m = ScorerModel.create(17, seed=5, input_scale=2.0)
        rng = np.random.default_rng(6)
        rows = rng.normal(size=(4, 17))
        r = rng.normal(size=4)
        grads = scorer_backward(m, rows, r)
        h = 1e-5
        for name, p in m.params().items():
            num = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                fp = np.dot(r, scorer_forward(m, rows))
                p[idx] = old - h
                fm = np.dot(r, scorer_forward(m, rows))
                p[idx] = old
                num[idx] = (fp - fm) / (2 * h)
            err = np.linalg.norm(grads[name] - num) / (np.linalg.norm(grads[name]) + np.linalg.norm(num))
            assert err < 1e-4, name

    def test_arrays_round_trip(self):
        m = ScorerModel.create(9, seed=1, input_scale=4.5)
        back = ScorerModel.from_arrays(m.to_arrays())
        rows = np.random.default_rng(0).normal(size=(3, 9))
        np.testing.assert_array_equal(scorer_forward(back, rows), scorer_forward(m, rows))
        assert back.input_scale == 4.5


class TestCandidateScores:
    def test_constant_model(self):
        g = default_geometry(16, num_angles=30)
        s = score_all_candidates(shepp_logan(16), ScorerModel.constant(g.num_detectors), g)
        np.testing.assert_array_equal(s, np.full(30, 0.5))

    def test_oracle_scores_sampled_views_near_one(self):
        g = default_geometry(64)
        img = shepp_logan(64)
        S = uniform_angles(15, 180)
        # run SART close to convergence so the sampled rows are reproduced
        rec = sart(forward_project(img, g, S), cfg=SartConfig(num_iterations=1000, relaxation=1.0))
        scores = score_all_candidates(rec, OracleScorer(forward_project(img, g).data), g)
        assert scores[S.indices].min() > 0.99
        assert scores[S.indices].mean() > np.delete(scores, S.indices).mean()

    def test_rotation_equivariance(self):
        # a quarter turn maps view i to view i + 90, flipping rows that wrap past
        # 180 degrees; point symmetry makes every row its own mirror image
        g = default_geometry(32, num_angles=180)
        img = render_phantom(EllipsePhantom((Ellipse(0, 0, 0.7, 0.4, 20, 1.0),
                                             Ellipse(0.1, 0.2, 0.2, 0.1, 0, 0.5))), 32)
        img = img + np.rot90(img, 2)
        m = ScorerModel.create(g.num_detectors, seed=0, input_scale=30.0)
        a = score_all_candidates(img, m, g)
        b = score_all_candidates(np.rot90(img), m, g)
        np.testing.assert_allclose(b, np.roll(a, 90), atol=1e-12)

    def test_disk_scores_constant(self):
        g = default_geometry(33, num_angles=36)
        disk = render_phantom(EllipsePhantom((Ellipse(0, 0, 0.8, 0.8, 0, 1.0),)), 33)
        s = score_all_candidates(disk, ScorerModel.create(g.num_detectors, seed=2, input_scale=30.0), g)
        assert np.ptp(s) < 0.02


def brute_select(scores, sampled, last, window, k, geom):
    """Reference selector: explicit loops, explicit window widening, exhaustive subset search."""
    T = geom.num_angles
    step = geom.alpha_max / T

    def dist(i, j):
        d = abs(i - j) * step
        return min(d, geom.alpha_max - d)

    def feasible(ap, aq):
        out = []
        for c in range(T):
            if c in sampled:
                continue
            if last is None or ap <= dist(c, last) <= aq:
                out.append(c)
        return out

    ap, aq = window
    cand = feasible(ap, aq)
    fallback = False
    while len(cand) < k:
        fallback = True
        if aq >= geom.alpha_max / 2:
            ap = 0.0
            cand = feasible(ap, aq)
            break
        aq = min(2 * aq, geom.alpha_max / 2)
        cand = feasible(ap, aq)
    best = None
    for combo in itertools.combinations(cand, k):
        key = (-sum(scores[c] for c in combo), combo)
        if best is None or key < best:
            best = key
    return set(best[1]), fallback


class TestSelection:
    def test_example(self):
        g = Geometry(8, 8, 13, num_angles=3, alpha_max=180.0)
        state = SelectionState(AngleSet([1]), last_selected=1, window=(0.0, 60.0))
        sel = select_topk_in_range([0.1, 0.9, 0.5], state, 1, g)
        assert sel.ranked == (2,) and not sel.fallback

    def test_tie_goes_to_lowest_feasible(self):
        g = Geometry(8, 8, 13, num_angles=180)
        state = SelectionState(AngleSet([0, 50]), last_selected=50, window=(5.0, 10.0))
        sel = select_topk_in_range(np.full(180, 0.5), state, 1, g)
        assert sel.ranked == (40,)

    def test_no_last_pick_means_no_window(self):
        g = Geometry(8, 8, 13, num_angles=20)
        scores = np.zeros(20)
        scores[13] = 1.0
        sel = select_topk_in_range(scores, SelectionState(AngleSet([0, 5])), 1, g)
        assert sel.ranked == (13,)

    def test_fallback_widens(self):
        g = Geometry(8, 8, 13, num_angles=36)
        sampled = AngleSet(range(0, 36, 2))
        # window [4, 6] around view 10 only reaches even views; widening reaches odd ones
        state = SelectionState(sampled.union([11]), last_selected=11, window=(4.0, 6.0))
        sel = select_topk_in_range(np.arange(36.0), state, 1, g)
        assert sel.fallback
        assert sel.window[1] > 6.0

    def test_exhaustion(self):
        g = Geometry(8, 8, 13, num_angles=4)
        with pytest.raises(ExhaustionError):
            select_topk_in_range(np.zeros(4), SelectionState(AngleSet(range(4))), 1, g)
        with pytest.raises(ExhaustionError):
            select_topk_in_range(np.zeros(4), SelectionState(AngleSet([0, 1, 2])), 2, g)

    def test_bad_state(self):
        with pytest.raises(ConfigurationError):
            SelectionState(AngleSet([1]), last_selected=2)
        with pytest.raises(ConfigurationError):
            SelectionState(AngleSet([1]), window=(10.0, 5.0))

    def test_matches_brute_force(self):
        g = Geometry(8, 8, 13, num_angles=24, alpha_max=180.0)
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n_sampled = int(rng.integers(1, 20))
            sampled = AngleSet(rng.choice(24, n_sampled, replace=False))
            last = int(rng.choice(sampled.indices)) if rng.random() < 0.85 else None
            ap = float(rng.choice([0.0, 7.5, 15.0]))
            aq = ap + float(rng.choice([7.5, 15.0, 30.0]))
            k = int(rng.integers(1, min(3, 24 - n_sampled) + 1))
            scores = rng.random(24)
            sel = select_topk_in_range(scores, SelectionState(sampled, last, (ap, aq)), k, g)
            want, fb = brute_select(scores, set(sampled), last, (ap, aq), k, g)
            assert set(sel.ranked) == want
            assert sel.fallback == fb
            assert list(sel.ranked) == sorted(want, key=lambda c: (-scores[c], c))

    @settings(max_examples=100)
    @given(st.integers(0, 2**31), st.floats(0.01, 100.0), st.floats(-5, 5))
    def test_invariant_to_increasing_transform(self, seed, scale, shift):
        g = Geometry(8, 8, 13, num_angles=30)
        rng = np.random.default_rng(seed)
        scores = rng.random(30)
        state = SelectionState(AngleSet([0, 7, 8]), last_selected=7, window=(6.0, 30.0))
        a = select_topk_in_range(scores, state, 2, g)
        b = select_topk_in_range(scores * scale + shift, state, 2, g)
        assert a.ranked == b.ranked
