#include "wm/envs/trackworld.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "wm/core/rng.hpp"

namespace wm::envs {

namespace {
constexpr std::uint8_t kGrass[3] = {102, 204, 102};
constexpr std::uint8_t kRoad[3] = {102, 102, 102};
constexpr std::uint8_t kCar[3] = {204, 0, 0};
constexpr double kCarLength = 4.0;
constexpr double kCarWidth = 2.0;
constexpr std::size_t kSplineSamples = 64;
}  // namespace

TrackWorld::TrackWorld(TrackWorldConfig config)
    : config_(config), spec_({-1.0, 0.0, 0.0}, {1.0, 1.0, 1.0}) {
  if (config_.height < 16 || config_.width < 16) throw std::invalid_argument("TrackWorld: frames must be at least 16x16");
  if (config_.n_tiles < 3 || config_.n_checkpoints < 4) throw std::invalid_argument("TrackWorld: track too small");
  if (config_.max_steps == 0) throw std::invalid_argument("TrackWorld: max_steps must be positive");
}

void TrackWorld::build_track(std::uint64_t seed) {
  core::RngStream rng(seed, "trackworld.track");
  const std::size_t n = config_.n_checkpoints;
  std::vector<double> px(n), py(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ang = 2.0 * std::numbers::pi * (static_cast<double>(k) + rng.uniform(-0.35, 0.35)) / static_cast<double>(n);
    const double r = config_.track_radius * (1.0 - config_.radius_jitter * rng.uniform());
    px[k] = r * std::cos(ang);
    py[k] = r * std::sin(ang);
  }
  // Closed uniform Catmull-Rom spline through the checkpoints.
  std::vector<double> dx, dy;
  dx.reserve(n * kSplineSamples + 1);
  dy.reserve(n * kSplineSamples + 1);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i0 = (k + n - 1) % n, i1 = k, i2 = (k + 1) % n, i3 = (k + 2) % n;
    for (std::size_t s = 0; s < kSplineSamples; ++s) {
      const double t = static_cast<double>(s) / kSplineSamples, t2 = t * t, t3 = t2 * t;
      auto cr = [&](const std::vector<double>& p) {
        return 0.5 * (2 * p[i1] + (-p[i0] + p[i2]) * t + (2 * p[i0] - 5 * p[i1] + 4 * p[i2] - p[i3]) * t2 +
                      (-p[i0] + 3 * p[i1] - 3 * p[i2] + p[i3]) * t3);
      };
      dx.push_back(cr(px));
      dy.push_back(cr(py));
    }
  }
  dx.push_back(dx.front());
  dy.push_back(dy.front());
  std::vector<double> arc(dx.size(), 0.0);
  for (std::size_t i = 1; i < dx.size(); ++i) arc[i] = arc[i - 1] + std::hypot(dx[i] - dx[i - 1], dy[i] - dy[i - 1]);
  // Resample evenly by arc length.
  const std::size_t m = config_.n_tiles * samples_per_tile_;
  cx_.assign(m, 0.0);
  cy_.assign(m, 0.0);
  std::size_t j = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double target = arc.back() * static_cast<double>(i) / static_cast<double>(m);
    while (j + 1 < arc.size() - 1 && arc[j + 1] < target) ++j;
    const double seg = arc[j + 1] - arc[j];
    const double f = seg > 0 ? (target - arc[j]) / seg : 0.0;
    cx_[i] = dx[j] + f * (dx[j + 1] - dx[j]);
    cy_[i] = dy[j] + f * (dy[j + 1] - dy[j]);
  }
}

void TrackWorld::rasterize_road() {
  const double half = 0.5 * config_.track_width;
  grid_cell_ = config_.view_span / static_cast<double>(config_.width) / 2.0;
  const auto [xmin, xmax] = std::minmax_element(cx_.begin(), cx_.end());
  const auto [ymin, ymax] = std::minmax_element(cy_.begin(), cy_.end());
  grid_x0_ = *xmin - half - grid_cell_;
  grid_y0_ = *ymin - half - grid_cell_;
  grid_w_ = static_cast<std::size_t>(std::ceil((*xmax - *xmin + 2 * half) / grid_cell_)) + 3;
  grid_h_ = static_cast<std::size_t>(std::ceil((*ymax - *ymin + 2 * half) / grid_cell_)) + 3;
  road_.assign(grid_w_ * grid_h_, 0);
  const double r2 = half * half;
  const auto reach = static_cast<long>(std::ceil(half / grid_cell_));
  for (std::size_t s = 0; s < cx_.size(); ++s) {
    const long ci = static_cast<long>((cx_[s] - grid_x0_) / grid_cell_);
    const long cj = static_cast<long>((cy_[s] - grid_y0_) / grid_cell_);
    for (long j = std::max(0L, cj - reach); j <= std::min<long>(static_cast<long>(grid_h_) - 1, cj + reach); ++j)
      for (long i = std::max(0L, ci - reach); i <= std::min<long>(static_cast<long>(grid_w_) - 1, ci + reach); ++i) {
        const double wx = grid_x0_ + (static_cast<double>(i) + 0.5) * grid_cell_ - cx_[s];
        const double wy = grid_y0_ + (static_cast<double>(j) + 0.5) * grid_cell_ - cy_[s];
        if (wx * wx + wy * wy <= r2) road_[static_cast<std::size_t>(j) * grid_w_ + static_cast<std::size_t>(i)] = 1;
      }
  }
}

bool TrackWorld::on_road(double x, double y) const {
  const double fi = (x - grid_x0_) / grid_cell_;
  const double fj = (y - grid_y0_) / grid_cell_;
  if (fi < 0 || fj < 0) return false;
  const auto i = static_cast<std::size_t>(fi), j = static_cast<std::size_t>(fj);
  if (i >= grid_w_ || j >= grid_h_) return false;
  return road_[j * grid_w_ + i] != 0;
}

void TrackWorld::visit_current_tile(double& reward) {
  // Pays the tile owning the nearest centerline sample, if the car is on the
  // road there; so at most one new tile per call.
  const double half = 0.5 * config_.track_width;
  double best = 1e300;
  std::size_t best_sample = 0;
  for (std::size_t s = 0; s < cx_.size(); ++s) {
    const double ex = cx_[s] - x_, ey = cy_[s] - y_;
    const double d2 = ex * ex + ey * ey;
    if (d2 < best) {
      best = d2;
      best_sample = s;
    }
  }
  const std::size_t tile = best_sample / samples_per_tile_;
  if (best > half * half || visited_[tile]) return;
  visited_[tile] = 1;
  ++visited_count_;
  reward += tile_reward();
}

Observation TrackWorld::do_reset(std::uint64_t seed) {
  build_track(seed);
  rasterize_road();
  visited_.assign(config_.n_tiles, 0);
  visited_[0] = 1;
  visited_count_ = 1;
  x_ = cx_[0];
  y_ = cy_[0];
  heading_ = std::atan2(cy_[1] - cy_[0], cx_[1] - cx_[0]);
  speed_ = 0.0;
  return render();
}

StepResult TrackWorld::do_step(std::span<const double> action) {
  const double steer = action[0], gas = action[1], brake = action[2];
  const bool road = on_road(x_, y_);
  speed_ = std::max(0.0, speed_ + config_.accel * gas - config_.brake * brake);
  speed_ *= 1.0 - (road ? config_.road_drag : config_.grass_drag);
  double turn = steer * config_.steer_rate * std::min(1.0, speed_ / 0.5);
  if (speed_ > 0) {
    const double cap = config_.lateral_grip / speed_;
    turn = std::clamp(turn, -cap, cap);
  }
  heading_ += turn;
  StepResult r;
  r.reward = -config_.step_penalty;
  const double ux = std::cos(heading_), uy = std::sin(heading_);
  const auto substeps = static_cast<std::size_t>(std::ceil(speed_));
  bool rewarded = false;
  for (std::size_t k = 0; k < std::max<std::size_t>(substeps, 1); ++k) {
    const double d = substeps ? speed_ / static_cast<double>(substeps) : 0.0;
    x_ += d * ux;
    y_ += d * uy;
    if (!rewarded) {
      const double before = r.reward;
      visit_current_tile(r.reward);
      rewarded = r.reward != before;
    }
  }
  r.done = visited_count_ == config_.n_tiles;
  r.observation = render();
  return r;
}

Observation TrackWorld::render() const {
  const std::size_t h = config_.height, w = config_.width;
  Observation obs(h, w);
  const double scale = config_.view_span / static_cast<double>(w);
  const double fx = std::cos(heading_), fy = std::sin(heading_);
  const double rx = fy, ry = -fx;
  const double car_row = 0.75 * static_cast<double>(h);
  const double car_col = 0.5 * static_cast<double>(w);
  for (std::size_t row = 0; row < h; ++row) {
    const double fwd = (car_row - (static_cast<double>(row) + 0.5)) * scale;
    for (std::size_t col = 0; col < w; ++col) {
      const double side = (static_cast<double>(col) + 0.5 - car_col) * scale;
      const double wx = x_ + fwd * fx + side * rx;
      const double wy = y_ + fwd * fy + side * ry;
      if (std::abs(side) <= 0.5 * kCarWidth && std::abs(fwd) <= 0.5 * kCarLength)
        obs.set(row, col, kCar);
      else
        obs.set(row, col, on_road(wx, wy) ? kRoad : kGrass);
    }
  }
  return obs;
}

}  // namespace wm::envs
