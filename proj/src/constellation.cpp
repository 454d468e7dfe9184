#include "mres/constellation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mres {

namespace {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

int log2_exact(int n) {
  int b = 0;
  while ((1 << b) < n) ++b;
  return b;
}

}  // namespace

Constellation Constellation::make(ModulationKind kind, int order, bool normalized) {
  if (!is_power_of_two(order) || order < 2) {
    throw std::invalid_argument("constellation order must be a power of two >= 2, got " +
                                std::to_string(order));
  }
  Constellation c;
  c.kind_ = kind;
  c.normalized_ = normalized;
  c.bits_ = log2_exact(order);

  if (kind == ModulationKind::Pam) {
    c.levels_ = order;
    c.points_.resize(order);
    c.labels_.resize(order);
    for (int k = 0; k < order; ++k) {
      c.points_[k] = {static_cast<double>(2 * k - (order - 1)), 0.0};
      c.labels_[k] = gray_code(static_cast<std::uint32_t>(k));
    }
  } else {
    if (c.bits_ % 2 != 0) {
      throw std::invalid_argument("QAM order must be a perfect square, got " +
                                  std::to_string(order));
    }
    const int levels = 1 << (c.bits_ / 2);
    const int axis_bits = c.bits_ / 2;
    c.levels_ = levels;
    c.points_.resize(order);
    c.labels_.resize(order);
    for (int i = 0; i < levels; ++i) {
      for (int q = 0; q < levels; ++q) {
        const int idx = i * levels + q;
        c.points_[idx] = {static_cast<double>(2 * i - (levels - 1)),
                          static_cast<double>(2 * q - (levels - 1))};
        c.labels_[idx] = (gray_code(static_cast<std::uint32_t>(i)) << axis_bits) |
                         gray_code(static_cast<std::uint32_t>(q));
      }
    }
  }

  double energy = 0.0;
  for (const auto& p : c.points_) energy += std::norm(p);
  energy /= order;
  if (normalized) {
    c.scale_ = 1.0 / std::sqrt(energy);
    for (auto& p : c.points_) p *= c.scale_;
    energy = 0.0;
    for (const auto& p : c.points_) energy += std::norm(p);
    energy /= order;
  }
  c.avg_energy_ = energy;
  return c;
}

double Constellation::min_distance() const { return 2.0 * scale_; }

int Constellation::nearest(std::complex<double> value) const {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < order(); ++k) {
    const double d = std::norm(value - points_[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

int Constellation::find(std::complex<double> value, double tol) const {
  const double scaled_tol = tol * scale_;
  for (int k = 0; k < order(); ++k) {
    if (std::abs(value - points_[k]) <= scaled_tol) return k;
  }
  return -1;
}

Constellation Constellation::axis_alphabet() const {
  if (kind_ == ModulationKind::Pam) return *this;
  Constellation axis = make(ModulationKind::Pam, levels_, false);
  axis.normalized_ = normalized_;
  axis.scale_ = scale_;
  for (auto& p : axis.points_) p *= scale_;
  double energy = 0.0;
  for (const auto& p : axis.points_) energy += std::norm(p);
  axis.avg_energy_ = energy / axis.order();
  return axis;
}

std::pair<int, int> Constellation::axis_indices(int index) const {
  if (kind_ == ModulationKind::Pam) return {index, -1};
  return {index / levels_, index % levels_};
}

std::string Constellation::name() const {
  return std::to_string(order()) + (kind_ == ModulationKind::Pam ? "PAM" : "QAM");
}

ModulationKind parse_modulation(const std::string& name) {
  if (name == "pam" || name == "PAM") return ModulationKind::Pam;
  if (name == "qam" || name == "QAM") return ModulationKind::Qam;
  throw std::invalid_argument("unknown modulation '" + name + "' (expected pam or qam)");
}

}  // namespace mres
