import random
from fractions import Fraction

import pytest

from src.errors import MalformedWindow, NegativeMagnitude, WindowOrderError
from src.naming import parse_timeframe
from src.temporal import (
    ALWAYS, HISTORY, NOW, SENTINEL, TimeWindow, anchored_window, endpoint_dict, exclusion_time_match,
    inclusion_time_match, normalize_endpoint, timeframe_to_window, window_from_endpoints,
)


def _member(w: TimeWindow, x: Fraction) -> bool:
    lo_ok = w.lower < x or (w.lower == x and w.lower_inclusive)
    hi_ok = x < w.upper or (x == w.upper and w.upper_inclusive)
    return lo_ok and hi_ok


def _candidates(*windows):
    ends = sorted({e for w in windows for e in (w.lower, w.upper)})
    return ends + [(a + b) / 2 for a in ends for b in ends if a < b]


def _random_window(rng: random.Random) -> TimeWindow:
    a, b = sorted(Fraction(rng.randint(-20, 20), rng.choice([1, 2, 3])) for _ in range(2))
    if a == b:
        return TimeWindow(a, b)
    return TimeWindow(a, b, rng.random() < 0.5, rng.random() < 0.5)


class TestNormalizeEndpoint:
    def test_units(self):
        assert normalize_endpoint("past", 2, "days") == -48
        assert normalize_endpoint("future", 1, "week") == 168
        assert normalize_endpoint("past", 1, "year") == -8760
        assert normalize_endpoint("now", 99, "years") == 0

    def test_infinite_is_clamped(self):
        assert normalize_endpoint("past", "Inf", "days") == -SENTINEL
        assert normalize_endpoint("future", float("inf"), "hours") == SENTINEL

    def test_errors(self):
        with pytest.raises(NegativeMagnitude):
            normalize_endpoint("past", -1, "days")
        with pytest.raises(MalformedWindow):
            normalize_endpoint("sideways", 1, "days")
        with pytest.raises(MalformedWindow):
            normalize_endpoint("past", 1, "fortnights")

    def test_float_magnitude_is_exact(self):
        assert normalize_endpoint("past", 0.1, "hours") == Fraction(-1, 10)


class TestWindows:
    def test_inverted_window_rejected(self):
        with pytest.raises(WindowOrderError):
            TimeWindow(5, 1)

    def test_open_point_rejected(self):
        with pytest.raises(WindowOrderError):
            TimeWindow(0, 0, False, True)

    def test_from_endpoints_inverted(self):
        with pytest.raises(WindowOrderError):
            window_from_endpoints(endpoint_dict(Fraction(10)), endpoint_dict(Fraction(-10)))

    def test_from_endpoints_missing_field(self):
        with pytest.raises(MalformedWindow):
            window_from_endpoints({"temporal_direction": "now"}, endpoint_dict(Fraction(0)))

    @pytest.mark.parametrize("lo_incl, hi_incl", [(False, True), (True, False), (False, False)])
    def test_from_endpoints_open_point_rejected(self, lo_incl, hi_incl):
        with pytest.raises(MalformedWindow):
            window_from_endpoints(endpoint_dict(Fraction(-24), lo_incl), endpoint_dict(Fraction(-24), hi_incl))

    def test_from_endpoints_closed_point(self):
        w = window_from_endpoints(endpoint_dict(Fraction(-24)), endpoint_dict(Fraction(-24)))
        assert w == TimeWindow(-24, -24)

    def test_endpoint_dict_inverts_normalize(self):
        for hours in (Fraction(0), Fraction(-36), Fraction(5, 2), SENTINEL, -SENTINEL):
            d = endpoint_dict(hours)
            assert normalize_endpoint(d["temporal_direction"], d["temporal_magnitude"], d["units"]) == hours


class TestTimeframes:
    @pytest.mark.parametrize("text,expected", [
        ("now", NOW),
        ("inthehistory", HISTORY),
        ("inthepast7days", TimeWindow(-168, 0)),
        ("inthefuture2weeks", TimeWindow(0, 336)),
        ("foradurationof3months", TimeWindow(0, 2190)),
    ])
    def test_timeframe_window(self, text, expected):
        assert timeframe_to_window(parse_timeframe(text)) == expected

    def test_absent_timeframe_is_unbounded(self):
        assert timeframe_to_window(None) == ALWAYS

    def test_anchored_single(self):
        assert anchored_window("temporalcontext_within7days_before_challenge") == TimeWindow(-168, 0)

    def test_anchored_range(self):
        w = anchored_window("temporalcontext_within_14_to_28_days_before_admission_or_enrollment")
        assert w == TimeWindow(-28 * 24, -14 * 24)

    def test_anchored_unrecognized(self):
        assert anchored_window("self_reported") is None


class TestMatching:
    def test_inclusion_overlap(self):
        criterion = timeframe_to_window(parse_timeframe("inthepast7days"))
        assert inclusion_time_match(criterion, TimeWindow(-200, -100))
        assert not inclusion_time_match(criterion, TimeWindow(-400, -200))

    def test_exclusion_containment(self):
        criterion = timeframe_to_window(parse_timeframe("inthepast7days"))
        assert exclusion_time_match(criterion, TimeWindow(-100, -50))
        assert not exclusion_time_match(criterion, TimeWindow(-200, -50))

    def test_boundary_equal_containment(self):
        criterion = TimeWindow(-168, 0)
        assert exclusion_time_match(criterion, TimeWindow(-168, 0))
        assert not exclusion_time_match(criterion, TimeWindow(-168, 0), strict=True)

    def test_touching_open_endpoints_do_not_overlap(self):
        assert not TimeWindow(0, 1, True, False).overlaps(TimeWindow(1, 2))
        assert TimeWindow(0, 1).overlaps(TimeWindow(1, 2))

    @pytest.mark.parametrize("n", [2000, pytest.param(100_000, marks=pytest.mark.slow)])
    def test_against_point_oracle(self, n):
        rng = random.Random(11)
        for _ in range(n):
            a, b = _random_window(rng), _random_window(rng)
            points = _candidates(a, b)
            overlap = any(_member(a, x) and _member(b, x) for x in points)
            contains = all(_member(a, x) for x in points if _member(b, x))
            assert inclusion_time_match(a, b) == overlap
            assert exclusion_time_match(a, b) == contains
            inter = a.intersect(b)
            assert (inter is not None) == overlap
            if inter is not None:
                assert all(_member(inter, x) == (_member(a, x) and _member(b, x)) for x in points)
