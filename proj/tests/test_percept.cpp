#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "lanesim/percept.hpp"

using namespace lanesim;

namespace {

Vehicle make_vehicle(int id, VehicleKind kind, double p_lon, int lane, double v,
                     GoalKind goal = GoalKind::straight, int n_lanes = 4) {
  Vehicle veh;
  veh.id = id;
  veh.kind = kind;
  veh.tau = kind == VehicleKind::cav ? 2 : 1;
  veh.p_lon = p_lon;
  veh.lane = lane;
  veh.v = v;
  veh.goal = make_goal(goal, lane, n_lanes);
  return veh;
}

}  // namespace

TEST_CASE("lone CAV observes d_max everywhere and zero-padded neighbors") {
  RoadConfig cfg;
  WorldState st = make_world(cfg, 1);
  st.vehicles.push_back(make_vehicle(1, VehicleKind::cav, 100.0, 2, 20.0));

  const Observation obs = encode_observation(st, 1, cfg);
  CHECK(obs.self.d_left == cfg.d_max);
  CHECK(obs.self.d_front == cfg.d_max);
  CHECK(obs.self.d_right == cfg.d_max);
  CHECK(obs.n_real == 0);
  REQUIRE(obs.neighbors.size() == static_cast<size_t>(cfg.max_neighbors));
  for (const auto& row : obs.neighbors) {
    CHECK(row.d_p_lon == 0.0);
    CHECK(row.d_p_lat == 0.0);
    CHECK(row.d_v == 0.0);
    CHECK(row.d_tau == 0.0);
    CHECK(row.d_g == 0.0);
  }
}

TEST_CASE("goal distance is 0 for same goal, sqrt(2) for different") {
  RoadConfig cfg;
  WorldState st = make_world(cfg, 1);
  st.vehicles.push_back(make_vehicle(1, VehicleKind::cav, 100.0, 2, 20.0, GoalKind::straight));
  st.vehicles.push_back(make_vehicle(2, VehicleKind::hdv, 110.0, 2, 20.0, GoalKind::straight));
  st.vehicles.push_back(make_vehicle(3, VehicleKind::hdv, 90.0, 2, 20.0, GoalKind::turn_left));

  const Observation obs = encode_observation(st, 1, cfg);
  REQUIRE(obs.n_real == 2);
  // Both neighbors are 10 m away; ties break by id, so id 2 comes first.
  CHECK(obs.neighbors[0].d_g == doctest::Approx(0.0));
  CHECK(obs.neighbors[1].d_g == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("neighbors are distance-sorted, radius-limited, truncated") {
  RoadConfig cfg;
  cfg.cav_shared_perception = false;
  WorldState st = make_world(cfg, 1);
  st.vehicles.push_back(make_vehicle(1, VehicleKind::cav, 100.0, 2, 20.0));
  st.vehicles.push_back(make_vehicle(2, VehicleKind::hdv, 130.0, 2, 18.0));  // 30 m
  st.vehicles.push_back(make_vehicle(3, VehicleKind::hdv, 110.0, 2, 18.0));  // 10 m
  st.vehicles.push_back(make_vehicle(4, VehicleKind::hdv, 170.0, 2, 18.0));  // 70 m: out of radius

  const Observation obs = encode_observation(st, 1, cfg);
  REQUIRE(obs.n_real == 2);
  CHECK(obs.neighbors[0].d_p_lon == doctest::Approx(10.0));
  CHECK(obs.neighbors[1].d_p_lon == doctest::Approx(30.0));
  CHECK(obs.self.d_front == doctest::Approx(10.0));
}

TEST_CASE("shared perception adds remote CAVs for CAV agents only") {
  RoadConfig cfg;
  cfg.cav_shared_perception = true;
  WorldState st = make_world(cfg, 1);
  st.vehicles.push_back(make_vehicle(1, VehicleKind::cav, 10.0, 2, 20.0));
  st.vehicles.push_back(make_vehicle(2, VehicleKind::cav, 200.0, 3, 18.0));  // far CAV
  st.vehicles.push_back(make_vehicle(3, VehicleKind::hdv, 150.0, 1, 18.0));  // far HDV

  const Observation obs = encode_observation(st, 1, cfg);
  CHECK(obs.n_real == 1);  // only the remote CAV is shared
  CHECK(obs.neighbors[0].d_p_lon == doctest::Approx(190.0));
}

TEST_CASE("observation width is constant regardless of density") {
  RoadConfig cfg;
  WorldState st = make_world(cfg, 1);
  st.vehicles.push_back(make_vehicle(1, VehicleKind::cav, 100.0, 2, 20.0));
  const size_t lone_width = flatten(encode_observation(st, 1, cfg)).size();
  for (int k = 0; k < 12; ++k)
    st.vehicles.push_back(
        make_vehicle(10 + k, VehicleKind::hdv, 90.0 + 2.0 * k, 1 + k % 4, 15.0));
  const size_t dense_width = flatten(encode_observation(st, 1, cfg)).size();
  CHECK(lone_width == dense_width);
  CHECK(lone_width == static_cast<size_t>(10 + 5 * cfg.max_neighbors));
}

TEST_CASE("encoding a dead or unknown agent is an error") {
  RoadConfig cfg;
  WorldState st = make_world(cfg, 1);
  st.vehicles.push_back(make_vehicle(1, VehicleKind::cav, 100.0, 2, 20.0));
  st.vehicles[0].alive = false;
  CHECK_THROWS_AS(encode_observation(st, 1, cfg), std::invalid_argument);
  CHECK_THROWS_AS(encode_observation(st, 99, cfg), std::invalid_argument);
}

TEST_CASE("speed update clips into [0, v_max]") {
  RoadConfig cfg;  // v_max 25, a_acc 2, a_dec 3, dt 0.1
  CHECK(apply_kinematics(24.9, LonAction::acc, cfg) == doctest::Approx(25.0));
  CHECK(apply_kinematics(0.1, LonAction::dec, cfg) == doctest::Approx(0.0));
  CHECK(apply_kinematics(10.0, LonAction::keep, cfg) == doctest::Approx(10.0));
  CHECK(apply_kinematics(10.0, LonAction::acc, cfg) == doctest::Approx(10.2));
  CHECK(apply_kinematics(10.0, LonAction::dec, cfg) == doctest::Approx(9.7));
}

TEST_CASE("speed update is bounded and monotone in input speed") {
  RoadConfig cfg;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, cfg.v_max);
  for (int k = 0; k < 300; ++k) {
    const double v1 = u(rng), v2 = u(rng);
    for (const LonAction a : {LonAction::acc, LonAction::keep, LonAction::dec}) {
      const double o1 = apply_kinematics(v1, a, cfg);
      const double o2 = apply_kinematics(v2, a, cfg);
      CHECK(o1 >= 0.0);
      CHECK(o1 <= cfg.v_max);
      if (v1 <= v2)
        CHECK(o1 <= o2);
      else
        CHECK(o1 >= o2);
    }
  }
}

TEST_CASE("lane transition clamps at the road boundaries") {
  CHECK(lane_transition(1, LatAction::left, 4) == 1);
  CHECK(lane_transition(4, LatAction::right, 4) == 4);
  CHECK(lane_transition(2, LatAction::hold, 4) == 2);
  CHECK(lane_transition(2, LatAction::left, 4) == 1);
  CHECK(lane_transition(2, LatAction::right, 4) == 3);
}

TEST_CASE("left then right from an interior lane returns home") {
  for (int lane = 2; lane <= 3; ++lane) {
    const int there = lane_transition(lane, LatAction::left, 4);
    CHECK(lane_transition(there, LatAction::right, 4) == lane);
  }
}

TEST_CASE("straight goals accept either middle lane") {
  const Goal straight = make_goal(GoalKind::straight, 1, 4);
  CHECK(lane_satisfies_goal(straight, 2, 4));
  CHECK(lane_satisfies_goal(straight, 3, 4));
  CHECK_FALSE(lane_satisfies_goal(straight, 1, 4));
  CHECK_FALSE(lane_satisfies_goal(straight, 4, 4));
  CHECK(make_goal(GoalKind::straight, 1, 4).target_lane == 2);
  CHECK(make_goal(GoalKind::straight, 4, 4).target_lane == 3);
  CHECK(make_goal(GoalKind::turn_left, 3, 4).target_lane == 1);
  CHECK(make_goal(GoalKind::turn_right, 2, 4).target_lane == 4);
  // Odd lane count: a single middle lane.
  const Goal s3 = make_goal(GoalKind::straight, 1, 3);
  CHECK(s3.target_lane == 2);
  CHECK(lane_satisfies_goal(s3, 2, 3));
  CHECK_FALSE(lane_satisfies_goal(s3, 3, 3));
}
