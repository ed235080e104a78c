import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recoat import datagen
from recoat.scene import (AgentState, AgentTrack, AgentType, MalformedSceneError, MapContext, RejectedInputError,
                          RoadLine, SchemaVersionError, TrafficLight, build_neighbor_tensor, from_target_frame,
                          normalize_angle, read_scene, scene_from_dict, scene_to_dict, scene_to_target_frame,
                          target_speed, target_state_tensor, to_target_frame, write_scene)

from conftest import const_velocity_track, make_scene

finite = st.floats(-1e3, 1e3, allow_nan=False)
angle = st.floats(-10.0, 10.0, allow_nan=False)


def test_agent_state_invalid_is_zeroed():
    s = AgentState(3.0, 4.0, 1.0, 2.0, 0.5, valid=False)
    assert s.as_row().tolist() == [0, 0, 0, 0, 0, 0]


@given(angle)
def test_normalize_angle_range_and_idempotent(a):
    n = normalize_angle(a)
    assert -math.pi < n <= math.pi
    assert normalize_angle(n) == n
    assert math.isclose(math.cos(n), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(n), math.sin(a), abs_tol=1e-9)


def test_normalize_angle_boundary():
    assert normalize_angle(-math.pi) == pytest.approx(math.pi)
    assert normalize_angle(math.pi) == math.pi


def test_identity_pose_leaves_track_unchanged():
    tr = const_velocity_track(3.0, -2.0, 1.5, 0.5)
    out = to_target_frame(tr, (0.0, 0.0, 0.0))
    np.testing.assert_array_equal(out.states, tr.states)


def test_rotation_example():
    tr = AgentTrack.from_states(AgentType.VEHICLE, [AgentState(1.0, 0.0)] * 10)
    out = to_target_frame(tr, (0.0, 0.0, math.pi / 2))
    np.testing.assert_allclose(out.states[-1, :2], [0.0, -1.0], atol=1e-12)


def test_translation_example():
    tr = AgentTrack.from_states(AgentType.VEHICLE, [AgentState(5.0, 3.0)] * 10)
    out = to_target_frame(tr, (5.0, 3.0, 0.0))
    np.testing.assert_array_equal(out.states[-1, :2], [0.0, 0.0])


def test_velocity_and_heading_rotate():
    tr = const_velocity_track(0.0, 0.0, 0.0, 2.0)  # heading +y
    out = to_target_frame(tr, (0.0, 0.0, math.pi / 2))
    np.testing.assert_allclose(out.states[-1, 2:4], [2.0, 0.0], atol=1e-12)
    assert out.states[-1, 4] == pytest.approx(0.0, abs=1e-12)


def test_invalid_rows_stay_zero_and_flagged():
    st_ = const_velocity_track(1.0, 1.0, 1.0, 0.0).states.copy()
    st_[:3, 5] = 0
    out = to_target_frame(AgentTrack(AgentType.VEHICLE, st_), (4.0, -1.0, 1.0))
    assert (out.states[:3] == 0).all()
    assert out.valid.tolist() == [False] * 3 + [True] * 7


def test_non_finite_rejected():
    tr = const_velocity_track()
    with pytest.raises(RejectedInputError):
        to_target_frame(tr, (0.0, math.nan, 0.0))
    bad = tr.states.copy()
    bad[2, 0] = math.inf
    with pytest.raises(RejectedInputError):
        to_target_frame(AgentTrack(AgentType.VEHICLE, bad), (0.0, 0.0, 0.0))


@settings(max_examples=50)
@given(finite, finite, angle, finite, finite, finite, finite)
def test_frame_roundtrip_and_rigidity(x0, y0, h0, ax, ay, bx, by):
    pose = (x0, y0, h0)
    a = const_velocity_track(ax, ay, 1.0, -2.0)
    b = const_velocity_track(bx, by, 0.0, 3.0)
    back = from_target_frame(to_target_frame(a, pose), pose)
    np.testing.assert_allclose(back.states[:, :4], a.states[:, :4], atol=1e-9)
    la, lb = to_target_frame(a, pose), to_target_frame(b, pose)
    d0 = np.hypot(*(a.states[:, :2] - b.states[:, :2]).T)
    d1 = np.hypot(*(la.states[:, :2] - lb.states[:, :2]).T)
    np.testing.assert_allclose(d1, d0, atol=1e-9)


def test_no_neighbors():
    nt = build_neighbor_tensor(make_scene())
    assert nt.count == 0 and not nt.data.any() and nt.data.shape == (10, 10, 5)


def test_twelve_neighbors_keep_ten_closest(rng):
    dists = rng.uniform(1.0, 29.0, 12)
    angles = rng.uniform(-math.pi, math.pi, 12)
    nbs = [const_velocity_track(d * math.cos(a), d * math.sin(a)) for d, a in zip(dists, angles)]
    nt = build_neighbor_tensor(make_scene(nbs))
    order = sorted(range(12), key=lambda i: dists[i])[:10]
    assert nt.count == 10
    assert list(nt.indices) == order
    for row, i in enumerate(order):
        np.testing.assert_array_equal(nt.data[row], nbs[i].states[:, :5])


def test_neighbor_outside_radius_excluded():
    assert build_neighbor_tensor(make_scene([const_velocity_track(31.0, 0.0)])).count == 0
    assert build_neighbor_tensor(make_scene([const_velocity_track(30.0, 0.0)])).count == 1


def test_neighbor_ties_keep_input_order():
    nbs = [const_velocity_track(0.0, 5.0), const_velocity_track(5.0, 0.0), const_velocity_track(-5.0, 0.0)]
    assert build_neighbor_tensor(make_scene(nbs)).indices == (0, 1, 2)


def test_neighbor_without_valid_state_dropped():
    st_ = const_velocity_track(2.0, 0.0).states.copy()
    st_[:, 5] = 0
    assert build_neighbor_tensor(make_scene([AgentTrack(AgentType.CYCLIST, st_)])).count == 0


@settings(max_examples=30)
@given(st.lists(st.tuples(st.floats(-40, 40), st.floats(-40, 40)), max_size=15))
def test_neighbor_tensor_properties(points):
    nbs = [const_velocity_track(x, y) for x, y in points]
    nt = build_neighbor_tensor(make_scene(nbs))
    d = np.hypot(*nt.positions[:nt.count].T)
    assert (np.diff(d) >= 0).all() and (d <= 30).all()
    assert not nt.data[nt.count:].any()
    nt2 = build_neighbor_tensor(make_scene(nbs))
    np.testing.assert_array_equal(nt.data, nt2.data)


def test_target_state_tensor_stationary():
    assert not target_state_tensor(make_scene()).any()


def test_target_state_tensor_constant_velocity():
    sc = make_scene(target=const_velocity_track(0.0, 0.0, 1.0, 0.0))
    x = target_state_tensor(sc)[:, 0]
    np.testing.assert_allclose(x, np.round(np.arange(-0.9, 0.01, 0.1), 10), atol=1e-12)
    assert target_speed(sc) == pytest.approx(1.0)


def test_target_state_tensor_wrong_length():
    tr = AgentTrack(AgentType.VEHICLE, np.zeros((9, 6)))
    with pytest.raises(MalformedSceneError):
        target_state_tensor(make_scene(target=tr))


def test_scene_to_target_frame_puts_target_at_origin(rng):
    sc = datagen.generate(datagen.sample_spec(3))
    local = scene_to_target_frame(sc)
    last = local.target.last_valid()
    np.testing.assert_allclose(last[[0, 1, 4]], 0.0, atol=1e-9)


def test_map_polygons_closed():
    m = MapContext(lanes=[[(0, 0), (1, 0), (1, 1)]])
    np.testing.assert_array_equal(m.lanes[0][0], m.lanes[0][-1])


def test_scene_file_roundtrip(tmp_path):
    sc = make_scene([const_velocity_track(3.0, 1.0, agent_type=AgentType.PEDESTRIAN)],
                    map=MapContext(lanes=[[(0, 0), (4, 0), (4, 4)]],
                                   road_lines=[RoadLine("yellow", [(0, 1), (5, 1)])],
                                   stop_signs=[(2.0, 2.0)], traffic_lights=[TrafficLight((1.0, 1.0), "red")]),
                    centerlines=[np.array([(0.0, 0.0), (10.0, 0.0)])])
    path = tmp_path / "s.json"
    write_scene(sc, path)
    back = read_scene(path)
    assert scene_to_dict(back) == scene_to_dict(sc)


def test_schema_version_checked():
    d = scene_to_dict(make_scene())
    d["version"] = "recoat-scene/0"
    with pytest.raises(SchemaVersionError):
        scene_from_dict(d)


def test_malformed_scene_rejected():
    d = scene_to_dict(make_scene())
    d["target_future"] = d["target_future"][:5]
    with pytest.raises(MalformedSceneError):
        scene_from_dict(d)
    del d["map"]
    with pytest.raises(MalformedSceneError):
        scene_from_dict(d)
