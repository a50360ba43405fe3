#pragma once

#include <Eigen/Core>

#include <compare>
#include <limits>

namespace tdmapos {

using Vec3 = Eigen::Vector3d;

/// Speed of light in vacuum, m/s (exact by definition of the metre).
inline constexpr double kSpeedOfLight = 299'792'458.0;

/// An absolute instant on some clock's axis, in seconds.
///
/// Stored as IEEE binary128. A double near t = 60 s resolves only about
/// 7e-15 s (2e-6 m once multiplied by c) and even x87 extended precision
/// leaves 7e-18 s, which the short velocity baseline of one solve window
/// amplifies past the micrometre level. Intervals come back as doubles.
class Timestamp {
 public:
  using Scalar = __float128;

  constexpr Timestamp() = default;
  constexpr explicit Timestamp(long double seconds) : s_(static_cast<Scalar>(seconds)) {}
  constexpr explicit Timestamp(double seconds) : s_(static_cast<Scalar>(seconds)) {}

  /// Rounded to long double; for logging and display only.
  constexpr long double seconds() const { return static_cast<long double>(s_); }
  constexpr double to_double() const { return static_cast<double>(s_); }

  constexpr Timestamp& operator+=(double dt) {
    s_ += static_cast<Scalar>(dt);
    return *this;
  }
  constexpr Timestamp& operator-=(double dt) {
    s_ -= static_cast<Scalar>(dt);
    return *this;
  }
  friend constexpr Timestamp operator+(Timestamp t, double dt) { return t += dt; }
  friend constexpr Timestamp operator-(Timestamp t, double dt) { return t -= dt; }
  /// Interval between two instants. Narrowed to double: intervals are short.
  friend constexpr double operator-(Timestamp a, Timestamp b) { return static_cast<double>(a.s_ - b.s_); }

  friend constexpr bool operator==(Timestamp a, Timestamp b) { return a.s_ == b.s_; }
  friend constexpr std::partial_ordering operator<=>(Timestamp a, Timestamp b) {
    if (a.s_ < b.s_) return std::partial_ordering::less;
    if (a.s_ > b.s_) return std::partial_ordering::greater;
    if (a.s_ == b.s_) return std::partial_ordering::equivalent;
    return std::partial_ordering::unordered;
  }

 private:
  Scalar s_ = 0;
};

}  // namespace tdmapos
