#pragma once

#include <algorithm>
#include <cassert>
#include <optional>
#include <span>
#include <vector>

#include "caccsim/core.hpp"
#include "caccsim/lateral.hpp"
#include "caccsim/longitudinal.hpp"

namespace caccsim {

/// Read-only, per-lane ordered view of the vehicles at one instant.
///
/// Indices refer to positions in the spans passed at construction, which
/// must outlive the snapshot. `params[i]` is the parameter set vehicle `i`
/// is currently controlled with (its effective time gap included).
class TrafficSnapshot {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  TrafficSnapshot(std::span<const VehicleState> vehicles, std::span<const DriverParams> params,
                  int lane_count)
      : vehicles_(vehicles), params_(params), lanes_(static_cast<std::size_t>(lane_count)),
        positions_(static_cast<std::size_t>(lane_count)), rank_(vehicles.size(), npos) {
    assert(params.size() == vehicles.size());
    sorted_by_id_ = std::is_sorted(vehicles.begin(), vehicles.end(),
                                   [](const auto& a, const auto& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < vehicles.size(); ++i) {
      const int lane = vehicles[i].lane;
      if (lane < 0 || lane >= lane_count)
        throw InvariantFault("vehicle " + std::to_string(vehicles[i].id.value) + " in lane " +
                             std::to_string(lane) + " outside the road");
      lanes_[static_cast<std::size_t>(lane)].push_back(i);
    }
    for (std::size_t l = 0; l < lanes_.size(); ++l) {
      auto& idx = lanes_[l];
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto& va = vehicles_[a];
        const auto& vb = vehicles_[b];
        if (va.position != vb.position) return va.position > vb.position;
        return va.id < vb.id;
      });
      auto& pos = positions_[l];
      pos.reserve(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        rank_[idx[r]] = r;
        pos.push_back(vehicles_[idx[r]].position);
      }
    }
  }

  int lane_count() const noexcept { return static_cast<int>(lanes_.size()); }
  std::size_t size() const noexcept { return vehicles_.size(); }
  const VehicleState& vehicle(std::size_t i) const { return vehicles_[i]; }
  const DriverParams& params(std::size_t i) const { return params_[i]; }

  /// Vehicle indices in `lane`, front to back.
  std::span<const std::size_t> lane(int lane) const {
    return lanes_[static_cast<std::size_t>(lane)];
  }

  std::size_t leader_of(std::size_t i) const {
    const auto& idx = lanes_[static_cast<std::size_t>(vehicles_[i].lane)];
    const std::size_t r = rank_[i];
    return r == 0 ? npos : idx[r - 1];
  }

  std::size_t follower_of(std::size_t i) const {
    const auto& idx = lanes_[static_cast<std::size_t>(vehicles_[i].lane)];
    const std::size_t r = rank_[i];
    return r + 1 >= idx.size() ? npos : idx[r + 1];
  }

  /// Nearest vehicle in `lane` strictly ahead of `position`.
  std::size_t leader_at(int lane, double position) const {
    const std::size_t r = first_at_or_behind(lane, position);
    return r == 0 ? npos : lanes_[static_cast<std::size_t>(lane)][r - 1];
  }

  /// Nearest vehicle in `lane` at or behind `position`.
  std::size_t follower_at(int lane, double position) const {
    const auto& idx = lanes_[static_cast<std::size_t>(lane)];
    const std::size_t r = first_at_or_behind(lane, position);
    return r >= idx.size() ? npos : idx[r];
  }

  LeaderView leader_view(std::size_t subject, std::size_t leader) const {
    if (leader == npos) return LeaderView::none();
    const auto& l = vehicles_[leader];
    return LeaderView::of(bumper_gap(vehicles_[subject], l), l.speed, l.accel);
  }

  FollowerView follower_view(std::size_t subject, std::size_t follower) const {
    if (follower == npos) return FollowerView::none();
    const auto& f = vehicles_[follower];
    return FollowerView::of(bumper_gap(f, vehicles_[subject]), f.speed, params_[follower], f.accel);
  }

  /// Neighbors of `i` in `lane`, as if `i` were there at its current position.
  LaneNeighbors lane_neighbors(std::size_t i, int lane) const {
    LaneNeighbors n;
    if (lane < 0 || lane >= lane_count()) return n;
    n.available = true;
    if (lane == vehicles_[i].lane) {
      n.leader = leader_view(i, leader_of(i));
      n.follower = follower_view(i, follower_of(i));
    } else {
      const double x = vehicles_[i].position;
      n.leader = leader_view(i, leader_at(lane, x));
      n.follower = follower_view(i, follower_at(lane, x));
    }
    return n;
  }

  NeighborSet neighbors(std::size_t i) const {
    const int lane = vehicles_[i].lane;
    return NeighborSet{lane_neighbors(i, lane), lane_neighbors(i, lane - 1),
                       lane_neighbors(i, lane + 1)};
  }

  /// Index of the vehicle with the given id, if present.
  std::size_t find(VehicleId id) const {
    if (sorted_by_id_) {
      auto it = std::lower_bound(vehicles_.begin(), vehicles_.end(), id,
                                 [](const VehicleState& v, VehicleId key) { return v.id < key; });
      return it != vehicles_.end() && it->id == id ? static_cast<std::size_t>(it - vehicles_.begin())
                                                   : npos;
    }
    for (std::size_t i = 0; i < vehicles_.size(); ++i)
      if (vehicles_[i].id == id) return i;
    return npos;
  }

  /// Re-files vehicle `i` after its lane changed from `from_lane` in the
  /// underlying storage. Positions must be unchanged.
  void relocate(std::size_t i, int from_lane) {
    auto& old_idx = lanes_[static_cast<std::size_t>(from_lane)];
    auto& old_pos = positions_[static_cast<std::size_t>(from_lane)];
    const std::size_t r = rank_[i];
    old_idx.erase(old_idx.begin() + static_cast<std::ptrdiff_t>(r));
    old_pos.erase(old_pos.begin() + static_cast<std::ptrdiff_t>(r));
    for (std::size_t k = r; k < old_idx.size(); ++k) rank_[old_idx[k]] = k;

    const auto& v = vehicles_[i];
    auto& idx = lanes_[static_cast<std::size_t>(v.lane)];
    auto& pos = positions_[static_cast<std::size_t>(v.lane)];
    auto it = std::partition_point(idx.begin(), idx.end(), [&](std::size_t j) {
      const auto& u = vehicles_[j];
      return u.position > v.position || (u.position == v.position && u.id < v.id);
    });
    const auto at = static_cast<std::size_t>(it - idx.begin());
    idx.insert(it, i);
    pos.insert(pos.begin() + static_cast<std::ptrdiff_t>(at), v.position);
    for (std::size_t k = at; k < idx.size(); ++k) rank_[idx[k]] = k;
  }

 private:
  std::size_t first_at_or_behind(int lane, double position) const {
    const auto& pos = positions_[static_cast<std::size_t>(lane)];
    auto it = std::partition_point(pos.begin(), pos.end(), [&](double p) { return p > position; });
    return static_cast<std::size_t>(it - pos.begin());
  }

  std::span<const VehicleState> vehicles_;
  std::span<const DriverParams> params_;
  std::vector<std::vector<std::size_t>> lanes_;
  std::vector<std::vector<double>> positions_;
  std::vector<std::size_t> rank_;
  bool sorted_by_id_{false};
};

}  // namespace caccsim
