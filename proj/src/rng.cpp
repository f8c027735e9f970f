#include "confroute/rng.hpp"

#include <cmath>
#include <numbers>

namespace confroute {

double Rng::next_normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = next_unit();
  while (u1 <= 0.0) {
    u1 = next_unit();
  }
  const double u2 = next_unit();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  have_spare_ = true;
  return radius * std::cos(angle);
}

}  // namespace confroute
