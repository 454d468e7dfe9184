#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace mres {

enum class ModulationKind { Pam, Qam };

/// Finite symbol alphabet with Gray bit labels.
///
/// PAM levels are the odd integers {-(L-1), ..., -1, +1, ..., L-1} and point
/// index k holds level 2k-(L-1), so indices are in amplitude order. QAM with
/// L levels per axis stores point (i, q) at index i*L + q; its label is the
/// I-axis Gray code followed by the Q-axis Gray code.
class Constellation {
 public:
  static Constellation make(ModulationKind kind, int order, bool normalized = false);

  ModulationKind kind() const { return kind_; }
  int order() const { return static_cast<int>(points_.size()); }
  int bits_per_symbol() const { return bits_; }
  bool normalized() const { return normalized_; }
  /// Amplitude scale applied to the integer lattice (1 when raw).
  double scale() const { return scale_; }
  double avg_energy() const { return avg_energy_; }

  const std::vector<std::complex<double>>& points() const { return points_; }
  const std::complex<double>& point(int index) const { return points_[index]; }
  const std::vector<std::uint32_t>& labels() const { return labels_; }
  std::uint32_t label(int index) const { return labels_[index]; }
  /// Bit k of a label, counted from the most significant label bit.
  int bit(int index, int k) const {
    return static_cast<int>((labels_[index] >> (bits_ - 1 - k)) & 1U);
  }

  /// Smallest distance between two distinct points.
  double min_distance() const;

  int nearest(std::complex<double> value) const;
  /// Index of the point equal to `value` within `tol`, or -1.
  int find(std::complex<double> value, double tol = 1e-9) const;

  /// Per-axis PAM alphabet used by the real-valued embedding. For PAM this is
  /// the constellation itself.
  Constellation axis_alphabet() const;
  /// Split a QAM index into its (I, Q) axis indices.
  std::pair<int, int> axis_indices(int index) const;
  int levels_per_axis() const { return levels_; }

  std::string name() const;

 private:
  Constellation() = default;

  ModulationKind kind_ = ModulationKind::Pam;
  bool normalized_ = false;
  int bits_ = 0;
  int levels_ = 0;
  double scale_ = 1.0;
  double avg_energy_ = 0.0;
  std::vector<std::complex<double>> points_;
  std::vector<std::uint32_t> labels_;
};

inline std::uint32_t gray_code(std::uint32_t k) { return k ^ (k >> 1); }

ModulationKind parse_modulation(const std::string& name);

}  // namespace mres
