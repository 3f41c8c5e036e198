"""Kinematics: differentiation, censoring, sign partitions, CVs, full pipeline."""

import statistics

import numpy as np
import pytest
from numpy.testing import assert_allclose

import volatix as vx
from volatix.errors import DegenerateSeries, InsufficientData, MissingComponent


def make_trace(kind="baseline", n=240, reaction=None, impact=None, seed=0, dt=0.1):
    rng = np.random.default_rng(seed)
    return vx.EventTrace(
        event_id=f"{kind}-{seed}", event_type=kind,
        speed=np.abs(rng.normal(50, 5, n)),
        accel_longitudinal=rng.normal(0, 1, n),
        accel_lateral=rng.normal(0, 0.5, n),
        sample_period=dt, reaction_index=reaction, impact_index=impact)


class TestDeriveSeries:
    def test_hand_finite_difference(self):
        assert_allclose(vx.derive_series([0.0, 1.0, 2.0], 0.1), [10.0, 10.0])

    def test_constant_series_has_zero_derivative(self):
        assert_allclose(vx.derive_series([3.0, 3.0, 3.0], 0.1), [0.0, 0.0])

    def test_single_sample_rejected(self):
        with pytest.raises(DegenerateSeries):
            vx.derive_series([5.0], 0.1)

    def test_length_shrinks_by_one(self):
        rng = np.random.default_rng(1)
        speed = rng.normal(50, 5, 37)
        accel = vx.derive_series(speed / 3.6, 0.1)
        jerk = vx.derive_series(accel, 0.1)
        assert len(accel) == 36 and len(jerk) == 35


class TestCensor:
    def test_reaction_before_impact(self):
        tr = make_trace("crash", n=300, reaction=235, impact=290)
        assert vx.censor(tr).retained_count == 235

    def test_baseline_keeps_everything(self):
        tr = make_trace("baseline", n=200)
        assert vx.censor(tr).retained_count == 200

    def test_no_reaction_truncates_at_impact(self):
        tr = make_trace("crash", n=300, impact=250)
        assert vx.censor(tr).retained_count == 250

    def test_reaction_at_impact_counts_as_no_reaction(self):
        tr = make_trace("near_crash", n=300, reaction=250, impact=250)
        assert vx.censor(tr).retained_count == 250

    def test_reaction_after_impact_counts_as_no_reaction(self):
        tr = make_trace("near_crash", n=300, reaction=260, impact=250)
        assert vx.censor(tr).retained_count == 250

    def test_too_short_prefix_raises(self):
        tr = make_trace("crash", n=300, reaction=1, impact=250)
        with pytest.raises(InsufficientData):
            vx.censor(tr)

    def test_retained_never_exceeds_length(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(5, 50))
            impact = int(rng.integers(2, n))
            reaction = int(rng.integers(2, n)) if rng.random() < 0.5 else None
            tr = make_trace("crash", n=n, reaction=reaction, impact=impact, seed=int(rng.integers(1e6)))
            try:
                kept = vx.censor(tr)
            except InsufficientData:
                continue
            assert 2 <= kept.retained_count <= n


class TestTraceValidation:
    def test_crash_requires_impact(self):
        with pytest.raises(ValueError):
            make_trace("crash", n=100)

    def test_baseline_rejects_markers(self):
        with pytest.raises(ValueError):
            make_trace("baseline", n=100, impact=50)

    def test_marker_out_of_bounds(self):
        with pytest.raises(ValueError):
            make_trace("crash", n=100, impact=100)

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            vx.EventTrace("x", "baseline", speed=[1.0, 2.0], accel_longitudinal=[0.0],
                          accel_lateral=[0.0, 0.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            vx.EventTrace("x", "baseline", speed=[1.0, np.nan], accel_longitudinal=[0.0, 0.0],
                          accel_lateral=[0.0, 0.0])


class TestSignPartition:
    def test_split_with_magnitudes(self):
        pos, neg = vx.sign_partition([-1.0, 2.0, 0.0, -3.0])
        assert_allclose(pos, [2.0])
        assert_allclose(neg, [1.0, 3.0])

    def test_one_sided(self):
        pos, neg = vx.sign_partition([4.0, 4.0])
        assert_allclose(pos, [4.0, 4.0])
        assert neg.size == 0

    def test_empty(self):
        pos, neg = vx.sign_partition([])
        assert pos.size == 0 and neg.size == 0

    def test_negation_swaps_partitions(self):
        rng = np.random.default_rng(3)
        series = rng.normal(0, 1, 50)
        pos, neg = vx.sign_partition(series)
        pos2, neg2 = vx.sign_partition(-series)
        assert_allclose(pos, neg2)
        assert_allclose(neg, pos2)


class TestCoefficientOfVariation:
    def test_hand_value(self):
        assert vx.coefficient_of_variation([1.0, 2.0, 3.0]) == pytest.approx(0.5, abs=1e-15)

    def test_constant_series_is_zero(self):
        assert vx.coefficient_of_variation([4.2, 4.2, 4.2]) == 0.0

    def test_single_sample_missing(self):
        with pytest.raises(MissingComponent):
            vx.coefficient_of_variation([5.0])

    def test_zero_mean_missing(self):
        with pytest.raises(MissingComponent):
            vx.coefficient_of_variation([1.0, -1.0])

    def test_scale_invariance(self):
        rng = np.random.default_rng(11)
        x = np.abs(rng.normal(2, 0.5, 30)) + 0.1
        base = vx.coefficient_of_variation(x)
        assert vx.coefficient_of_variation(3.7 * x) == pytest.approx(base, rel=1e-12)

    def test_shift_changes_cv(self):
        x = np.array([1.0, 2.0, 3.0])
        assert vx.coefficient_of_variation(x + 5.0) != pytest.approx(vx.coefficient_of_variation(x))


def brute_force_indices(trace):
    """Independent recomputation with plain Python lists and statistics."""
    if trace.event_type is vx.EventType.BASELINE:
        kept = len(trace)
    elif trace.reaction_index is not None and trace.reaction_index < trace.impact_index:
        kept = trace.reaction_index
    else:
        kept = trace.impact_index
    if kept < 2:
        raise InsufficientData(trace.event_id)
    speed = [float(v) for v in trace.speed[:kept]]
    along = [float(v) for v in trace.accel_longitudinal[:kept]]
    alat = [float(v) for v in trace.accel_lateral[:kept]]
    dt = trace.sample_period
    jlong = [(along[i + 1] - along[i]) / dt for i in range(len(along) - 1)]
    jlat = [(alat[i + 1] - alat[i]) / dt for i in range(len(alat) - 1)]

    def cv(vals):
        if len(vals) < 2:
            return None
        mean = sum(vals) / len(vals)
        if mean == 0:
            return None
        return statistics.stdev(vals) / mean

    def split(vals):
        return [v for v in vals if v > 0], [-v for v in vals if v < 0]

    out = {}
    for name_pos, name_neg, series in (("cv_accel_long", "cv_decel_long", along),
                                       ("cv_accel_lat", "cv_decel_lat", alat),
                                       ("cv_jerk_pos_long", "cv_jerk_neg_long", jlong),
                                       ("cv_jerk_pos_lat", "cv_jerk_neg_lat", jlat)):
        pos, neg = split(series)
        out[name_pos] = cv(pos)
        out[name_neg] = cv(neg)
    out["mean_speed"] = sum(speed) / len(speed)
    out["cv_speed"] = cv(speed)
    return out


class TestVolatilityIndices:
    def test_constant_motion(self):
        tr = vx.EventTrace("c", "baseline", speed=np.full(100, 50.0),
                           accel_longitudinal=np.zeros(100), accel_lateral=np.zeros(100))
        vec = vx.volatility_indices(tr)
        assert vec.mean_speed == pytest.approx(50.0)
        assert vec.cv_speed == pytest.approx(0.0)
        assert vec.cv_accel_long is None and vec.cv_jerk_pos_long is None

    def test_three_sample_hand_walk(self):
        # speed 36, 37, 38 kph; accel_long -1, 2, -3; accel_lat 1, 1, 2
        tr = vx.EventTrace("h", "baseline", speed=[36.0, 37.0, 38.0],
                           accel_longitudinal=[-1.0, 2.0, -3.0], accel_lateral=[1.0, 1.0, 2.0])
        vec = vx.volatility_indices(tr)
        # jerk_long = (30, -50); jerk_lat = (0, 10); partitions of accel_long: (2), (1, 3)
        assert vec.cv_accel_long is None  # single positive sample
        assert vec.cv_decel_long == pytest.approx(statistics.stdev([1.0, 3.0]) / 2.0)
        assert vec.cv_jerk_pos_long is None and vec.cv_jerk_neg_long is None
        assert vec.cv_jerk_pos_lat is None  # single value 10
        assert vec.cv_accel_lat == pytest.approx(statistics.stdev([1.0, 1.0, 2.0]) / np.mean([1, 1, 2]))
        assert vec.mean_speed == pytest.approx(37.0)
        assert vec.cv_speed == pytest.approx(1.0 / 37.0)

    def test_matches_brute_force_on_random_small_traces(self):
        rng = np.random.default_rng(2024)
        checked = 0
        for _ in range(50):
            n = int(rng.integers(4, 11))
            kind = ["baseline", "near_crash", "crash"][int(rng.integers(3))]
            reaction = impact = None
            if kind != "baseline":
                impact = int(rng.integers(2, n))
                if rng.random() < 0.6:
                    reaction = int(rng.integers(2, n))
            tr = vx.EventTrace(
                event_id=f"r{checked}", event_type=kind,
                speed=np.abs(rng.normal(40, 10, n)),
                accel_longitudinal=rng.normal(0, 1.5, n),
                accel_lateral=rng.normal(0, 0.8, n),
                reaction_index=reaction, impact_index=impact)
            try:
                vec = vx.volatility_indices(tr)
            except InsufficientData:
                with pytest.raises(InsufficientData):
                    brute_force_indices(tr)
                continue
            expected = brute_force_indices(tr)
            for name, want in expected.items():
                got = getattr(vec, name)
                if want is None:
                    assert got is None, name
                else:
                    assert got == pytest.approx(want, abs=1e-12), name
            checked += 1
        assert checked >= 30

    def test_scale_covariance_of_pipeline(self):
        tr = make_trace("baseline", n=60, seed=5)
        scaled = vx.EventTrace("s", "baseline", speed=tr.speed,
                               accel_longitudinal=2.5 * tr.accel_longitudinal,
                               accel_lateral=2.5 * tr.accel_lateral)
        v1, v2 = vx.volatility_indices(tr), vx.volatility_indices(scaled)
        for name in ("cv_accel_long", "cv_decel_long", "cv_jerk_pos_long", "cv_jerk_neg_long"):
            assert getattr(v1, name) == pytest.approx(getattr(v2, name), rel=1e-12)

    def test_sign_symmetry_of_pipeline(self):
        tr = make_trace("baseline", n=60, seed=8)
        flipped = vx.EventTrace("f", "baseline", speed=tr.speed,
                                accel_longitudinal=-tr.accel_longitudinal,
                                accel_lateral=-tr.accel_lateral)
        v1, v2 = vx.volatility_indices(tr), vx.volatility_indices(flipped)
        assert v1.cv_accel_long == pytest.approx(v2.cv_decel_long, rel=1e-12)
        assert v1.cv_decel_long == pytest.approx(v2.cv_accel_long, rel=1e-12)
        assert v1.cv_jerk_pos_lat == pytest.approx(v2.cv_jerk_neg_lat, rel=1e-12)

    def test_jerk_lengths(self):
        tr = make_trace("baseline", n=50, seed=2)
        kept = vx.censor(tr)
        jerk = vx.derive_series(kept.accel_longitudinal, kept.sample_period)
        accel_from_speed = vx.derive_series(kept.speed / 3.6, kept.sample_period)
        assert len(jerk) == len(kept.accel_longitudinal) - 1
        assert len(accel_from_speed) == len(kept.speed) - 1
