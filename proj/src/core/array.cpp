#include "wm/core/array.hpp"

#include <cmath>
#include <sstream>

namespace wm::core {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void throw_shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                   shape_string(b));
}

namespace {
void check_dims(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("array dimensions must be positive, got " + shape_string(shape));
}
}  // namespace

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_size(shape_), fill);
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (shape_size(shape_) != data_.size())
    throw ShapeError("array data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
}

Array Array::scalar(double value) { return Array(Shape{}, std::vector<double>{value}); }

Array Array::from(std::span<const double> values) {
  return Array(Shape{values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Array::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

double Array::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar shape " + shape_string(shape_));
  return data_[0];
}

Array Array::reshaped(Shape shape) const& {
  Array copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Array Array::reshaped(Shape shape) && {
  if (shape_size(shape) != data_.size()) throw_shape_mismatch("reshape", shape_, shape);
  check_dims(shape);
  shape_ = std::move(shape);
  return std::move(*this);
}

void Array::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Array::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace wm::core
