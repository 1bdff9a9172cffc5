import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2xdetect.core import ContractError
from v2xdetect.trajectory import (CELL_RADIUS_M, MANEUVERS, DataError, SchemaError, Trajectory,
                                  apply_spoofing, load_trajectories, synthesize_maneuver,
                                  write_trajectories)


def _csv(tmp_path, text):
    path = tmp_path / "traj.csv"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoad:
    def test_two_rows(self, tmp_path):
        (tr,) = load_trajectories(_csv(tmp_path, "vehicle_id,frame,x_m,y_m\n7,0,0,0\n7,1,1,0\n"))
        assert tr.vehicle_id == 7
        assert np.array_equal(tr.velocities[1], [1.0, 0.0])

    def test_out_of_order_frames(self, tmp_path):
        with pytest.raises(DataError, match="vehicle 3"):
            load_trajectories(_csv(tmp_path, "vehicle_id,frame,x_m,y_m\n3,1,0,0\n3,0,1,0\n"))

    def test_missing_column_named(self, tmp_path):
        with pytest.raises(SchemaError, match="y_m"):
            load_trajectories(_csv(tmp_path, "vehicle_id,frame,x_m\n1,0,0\n"))

    def test_custom_schema(self, tmp_path):
        path = _csv(tmp_path, "id,f,X,Y\n1,0,0,0\n1,1,2,0\n")
        (tr,) = load_trajectories(path, {"vehicle_id": "id", "frame": "f", "x": "X", "y": "Y"})
        assert tr.positions[-1] == pytest.approx([2.0, 0.0])

    def test_gap_interpolated_keeps_endpoints(self, tmp_path):
        (tr,) = load_trajectories(_csv(tmp_path, "vehicle_id,frame,x_m,y_m\n1,10,0,0\n1,14,4,8\n"))
        assert len(tr) == 5
        assert list(tr.times) == [10, 11, 12, 13, 14]
        assert tr.positions[0] == pytest.approx([0, 0])
        assert tr.positions[-1] == pytest.approx([4, 8])
        assert tr.positions[2] == pytest.approx([2, 4])

    def test_nineteen_maneuver_subset(self, tmp_path):
        trajectories = []
        for k in range(19):
            kind = MANEUVERS[k % 3]
            tr = synthesize_maneuver(kind, 80, 1.0, 0.0, k, vehicle_id=k,
                                     start=(-40.0 + 2 * k, -30.0), approach_steps=30)
            trajectories.append(tr)
        path = tmp_path / "subset.csv"
        write_trajectories(path, trajectories)
        loaded = load_trajectories(path)
        assert len(loaded) == 19
        assert [t.label for t in loaded] == [MANEUVERS[k % 3] for k in range(19)]
        for a, b in zip(trajectories, loaded):
            assert np.allclose(a.positions, b.positions, atol=1e-12)


class TestSynthesize:
    def test_noiseless_straight_line(self):
        tr = synthesize_maneuver("straight", 100, 1.0, 0.0, 0)
        steps = np.diff(tr.positions, axis=0)
        assert np.allclose(np.linalg.norm(steps, axis=1), 1.0, atol=1e-12)
        assert np.allclose(tr.positions[:, 1], tr.positions[0, 1], atol=1e-12)

    def test_deterministic(self):
        a = synthesize_maneuver("left_turn", 100, 1.0, 0.3, 42)
        b = synthesize_maneuver("left_turn", 100, 1.0, 0.3, 42)
        assert np.array_equal(a.positions, b.positions)

    @pytest.mark.parametrize("kind, sign", [("left_turn", 1), ("right_turn", -1)])
    def test_turn_rotates_heading(self, kind, sign):
        tr = synthesize_maneuver(kind, 120, 1.0, 0.0, 0, turn_radius=10.0, approach_steps=20)
        end = tr.positions[-1] - tr.positions[-2]
        heading = math.atan2(end[1], end[0])
        assert heading == pytest.approx(sign * math.pi / 2, abs=1e-6)

    @pytest.mark.parametrize("kind", MANEUVERS)
    def test_velocity_is_first_difference(self, kind):
        tr = synthesize_maneuver(kind, 150, 1.2, 0.0, 3)
        assert np.allclose(tr.velocities[1:], np.diff(tr.positions, axis=0), atol=1e-9)

    def test_stays_inside_cell(self):
        tr = synthesize_maneuver("straight", 200, 1.0, 0.0, 0)
        assert np.all(np.abs(tr.positions) <= CELL_RADIUS_M)

    def test_leaving_cell_rejected(self):
        with pytest.raises(ContractError):
            synthesize_maneuver("straight", 100, 1.0, 0.0, 0, start=(490.0, 0.0))

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            synthesize_maneuver("u_turn", 10, 1.0, 0.0, 0)


class TestSpoofing:
    base = synthesize_maneuver("left_turn", 60, 1.0, 0.1, 1)

    def test_zero_offset_identity(self):
        out = apply_spoofing(self.base, (0.0, 0.0), 10, 5)
        assert np.array_equal(out.positions, self.base.positions)
        assert np.array_equal(out.velocities, self.base.velocities)

    def test_constant_shift(self):
        out = apply_spoofing(self.base, (10.0, 0.0), 0, 0)
        assert np.allclose(out.positions - self.base.positions, [10.0, 0.0])

    def test_ramp_midpoint(self):
        out = apply_spoofing(self.base, (10.0, 0.0), 20, 10)
        shift = out.positions - self.base.positions
        assert shift[25] == pytest.approx([5.0, 0.0])
        assert np.allclose(shift[:20], 0.0)
        assert np.allclose(shift[30:], [10.0, 0.0])

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50), st.integers(0, 59))
    def test_step_round_trip(self, dx, dy, start):
        there = apply_spoofing(self.base, (dx, dy), start, 0)
        back = apply_spoofing(there, (-dx, -dy), start, 0)
        assert np.allclose(back.positions, self.base.positions, atol=1e-12, rtol=0)
        assert np.allclose(back.velocities, self.base.velocities, atol=1e-12, rtol=0)

    def test_velocities_follow_spoofed_positions(self):
        clean = synthesize_maneuver("straight", 60, 1.0, 0.0, 0)
        out = apply_spoofing(clean, (10.0, 0.0), 10, 20)
        assert np.allclose(out.velocities[1:], np.diff(out.positions, axis=0), atol=1e-9)


def test_trajectory_points():
    tr = Trajectory(0, np.zeros((3, 2)), np.ones((3, 2)), t0=5)
    pts = tr.points
    assert [p.t for p in pts] == [5, 6, 7]
