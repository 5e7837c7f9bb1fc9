#include "drgcn/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace drgcn {

namespace {
std::atomic<std::int64_t> g_live{0};
std::atomic<std::int64_t> g_peak{0};
}  // namespace

namespace detail {
void track_alloc(std::size_t bytes) {
  const auto now = g_live.fetch_add(static_cast<std::int64_t>(bytes)) + static_cast<std::int64_t>(bytes);
  auto peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}
void track_free(std::size_t bytes) { g_live.fetch_sub(static_cast<std::int64_t>(bytes)); }
}  // namespace detail

MemoryStats memory_stats() { return {g_live.load(), g_peak.load()}; }

void reset_peak_memory() { g_peak.store(g_live.load()); }

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::span<const double> values)
    : rows_(rows), cols_(cols), data_(values.begin(), values.end()) {
  if (values.size() != rows * cols) {
    throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Tensor t(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Tensor::from_rows: ragged rows");
    for (double v : row) t.data_[i++] = v;
  }
  return t;
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) throw ShapeError("Tensor::item on shape " + shape_string(*this));
  return data_[0];
}

bool Tensor::all_finite() const {
  // v - v is 0 for finite v and NaN for NaN/Inf; the branch-free sum vectorizes.
  double acc = 0.0;
  for (double v : data_) acc += v - v;
  return acc == 0.0;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

}  // namespace drgcn
