import math

import pytest
from hypothesis import given, strategies as st

from bearnav.core import (
    NavigatorConfig,
    PathProfile,
    Pose,
    Velocity,
    profile_from_csv,
    profile_to_csv,
    profile_velocity_at,
    wrap_angle,
)


def two_entry_profile() -> PathProfile:
    return PathProfile(
        entries=((0.0, Velocity(1.0, 0.0)), (5.0, Velocity(1.0, 0.5))),
        total_length=8.0,
    )


class TestWrapAngle:
    def test_identity(self):
        assert wrap_angle(0.0) == 0.0

    def test_modular(self):
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)

    def test_half_open_interval(self):
        # -pi maps to +pi: the interval is (-pi, pi].
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            wrap_angle(math.inf)
        with pytest.raises(ValueError):
            wrap_angle(math.nan)

    @given(st.floats(min_value=-1e6, max_value=1e6))
    def test_idempotent(self, theta):
        once = wrap_angle(theta)
        assert wrap_angle(once) == once
        assert -math.pi < once <= math.pi

    @given(st.floats(min_value=-100.0, max_value=100.0))
    def test_congruent_mod_2pi(self, theta):
        diff = (theta - wrap_angle(theta)) / (2 * math.pi)
        assert diff == pytest.approx(round(diff), abs=1e-9)


class TestProfileVelocityAt:
    def test_holds_first_entry(self):
        assert profile_velocity_at(two_entry_profile(), 2.0) == Velocity(1.0, 0.0)

    def test_boundary_takes_new_entry(self):
        assert profile_velocity_at(two_entry_profile(), 5.0) == Velocity(1.0, 0.5)

    def test_holds_last_entry(self):
        assert profile_velocity_at(two_entry_profile(), 7.0) == Velocity(1.0, 0.5)

    def test_range_error_names_interval(self):
        with pytest.raises(ValueError, match=r"\[0, 8\.0\]"):
            profile_velocity_at(two_entry_profile(), 9.0)
        with pytest.raises(ValueError, match=r"\[0, 8\.0\]"):
            profile_velocity_at(two_entry_profile(), -0.1)

    @given(st.data())
    def test_matches_linear_scan_oracle(self, data):
        dists = sorted(data.draw(st.sets(
            st.floats(min_value=0.01, max_value=99.0), min_size=0, max_size=8)))
        entries = [(0.0, Velocity(1.0, 0.0))]
        for i, d in enumerate(dists):
            entries.append((d, Velocity(1.0 + i, 0.1 * i)))
        profile = PathProfile(tuple(entries), total_length=100.0)
        d_query = data.draw(st.floats(min_value=0.0, max_value=100.0))

        held = entries[0][1]
        for d, vel in entries:
            if d <= d_query:
                held = vel
        assert profile_velocity_at(profile, d_query) == held


class TestProfileValidation:
    def test_requires_first_entry_at_zero(self):
        with pytest.raises(ValueError):
            PathProfile(((1.0, Velocity(1.0, 0.0)),), total_length=2.0)

    def test_requires_strictly_increasing(self):
        with pytest.raises(ValueError):
            PathProfile(
                ((0.0, Velocity(1.0, 0.0)), (0.0, Velocity(2.0, 0.0))),
                total_length=2.0,
            )

    def test_total_length_covers_entries(self):
        with pytest.raises(ValueError):
            PathProfile(((0.0, Velocity(1.0, 0.0)),), total_length=-1.0)

    def test_negative_speed_rejected(self):
        with pytest.raises(ValueError):
            Velocity(-0.5, 0.0)


class TestProfileCsv:
    def test_header_and_rows(self):
        text = profile_to_csv(two_entry_profile())
        lines = text.strip().split("\n")
        assert lines[0] == "d,v,omega"
        assert lines[1].startswith("0.0,1.0,0.0")
        # Terminal row encodes total_length past the final change.
        assert lines[-1].startswith("8.0,")

    def test_round_trip_preserves_velocity_function(self):
        profile = two_entry_profile()
        loaded = profile_from_csv(profile_to_csv(profile))
        assert loaded.total_length == profile.total_length
        for d in (0.0, 2.5, 5.0, 6.9, 8.0):
            assert profile_velocity_at(loaded, d) == profile_velocity_at(profile, d)

    def test_round_trip_exact_when_profile_ends_at_total(self):
        profile = PathProfile(
            ((0.0, Velocity(1.0, 0.0)), (5.0, Velocity(2.0, 0.1))), total_length=5.0)
        assert profile_from_csv(profile_to_csv(profile)) == profile

    def test_bad_header_rejected(self):
        with pytest.raises(ValueError, match="header"):
            profile_from_csv("a,b,c\n0,1,0\n")


class TestPose:
    def test_theta_wrapped_on_construction(self):
        assert Pose(0.0, 0.0, 3 * math.pi).theta == pytest.approx(math.pi)

    def test_position_distance(self):
        assert Pose(0.0, 0.0, 0.0).position_distance(Pose(3.0, 4.0, 1.0)) == 5.0


class TestNavigatorConfig:
    def test_defaults_valid(self):
        cfg = NavigatorConfig()
        assert cfg.map_spacing == 0.2

    @pytest.mark.parametrize("kwargs", [
        {"alpha": -0.1},
        {"map_spacing": 0.0},
        {"histogram_bin_width": 0},
        {"min_matches": 0},
        {"max_angular_rate": 0.0},
        {"mode": "teleport"},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            NavigatorConfig(**kwargs)
