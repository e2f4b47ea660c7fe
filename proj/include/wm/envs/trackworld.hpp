#pragma once

#include <vector>

#include "wm/envs/env.hpp"

namespace wm::envs {

/// Top-down racing on a procedurally generated closed loop. Distances are in
/// world units; the camera follows the car with its heading pointing up.
struct TrackWorldConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t max_steps = 1000;
  std::size_t n_tiles = 50;  // each newly visited tile pays 100 / n_tiles
  std::size_t n_checkpoints = 12;
  double track_radius = 40.0;
  double radius_jitter = 0.45;  // checkpoint radius drawn from R * [1 - jitter, 1]
  double track_width = 9.0;
  double view_span = 40.0;  // world units across the frame width
  double accel = 0.08;
  double brake = 0.08;
  double road_drag = 0.02;
  double grass_drag = 0.12;
  double steer_rate = 0.15;    // max yaw per step (rad) at moderate speed
  double lateral_grip = 0.35;  // cap on speed * yaw rate
  double step_penalty = 0.1;
};

class TrackWorld final : public Environment {
 public:
  explicit TrackWorld(TrackWorldConfig config);

  std::string id() const override { return "trackworld"; }
  const ActionSpec& action_spec() const override { return spec_; }
  std::size_t height() const override { return config_.height; }
  std::size_t width() const override { return config_.width; }
  std::size_t max_steps() const override { return config_.max_steps; }
  double min_return() const override { return -config_.step_penalty * static_cast<double>(config_.max_steps); }

  const TrackWorldConfig& config() const noexcept { return config_; }
  double tile_reward() const { return 100.0 / static_cast<double>(config_.n_tiles); }
  std::size_t tiles_visited() const noexcept { return visited_count_; }
  double speed() const noexcept { return speed_; }
  double x() const noexcept { return x_; }
  double y() const noexcept { return y_; }
  double heading() const noexcept { return heading_; }
  bool on_road(double x, double y) const;
  /// Centerline samples (closed loop), n_tiles * samples_per_tile points.
  const std::vector<double>& centerline_x() const noexcept { return cx_; }
  const std::vector<double>& centerline_y() const noexcept { return cy_; }
  std::size_t samples_per_tile() const noexcept { return samples_per_tile_; }

 protected:
  Observation do_reset(std::uint64_t seed) override;
  StepResult do_step(std::span<const double> action) override;

 private:
  void build_track(std::uint64_t seed);
  void rasterize_road();
  void visit_current_tile(double& reward);
  Observation render() const;

  TrackWorldConfig config_;
  ActionSpec spec_;
  std::size_t samples_per_tile_ = 10;
  std::vector<double> cx_, cy_;
  // Road occupancy raster over the track's bounding box.
  double grid_x0_ = 0, grid_y0_ = 0, grid_cell_ = 1;
  std::size_t grid_w_ = 0, grid_h_ = 0;
  std::vector<std::uint8_t> road_;
  std::vector<std::uint8_t> visited_;
  std::size_t visited_count_ = 0;
  double x_ = 0, y_ = 0, heading_ = 0, speed_ = 0;
};

}  // namespace wm::envs
