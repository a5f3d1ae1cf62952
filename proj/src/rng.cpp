#include "sr3/rng.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace sr3 {

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform_open_closed() {
  return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(engine_());
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return lo + static_cast<std::int64_t>(draw % span);
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform_open_closed();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Rng Rng::fork() { return Rng(next_u64()); }

std::string Rng::serialize() const {
  std::ostringstream out;
  std::uint64_t spare_bits = 0;
  std::memcpy(&spare_bits, &spare_, sizeof spare_bits);
  out << seed_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << spare_bits << ' '
      << engine_;
  return out.str();
}

Rng Rng::restore(const std::string& text) {
  std::istringstream in(text);
  std::uint64_t seed = 0;
  int has_spare = 0;
  std::uint64_t spare_bits = 0;
  in >> seed >> has_spare >> spare_bits;
  Rng rng(seed);
  in >> rng.engine_;
  if (!in) throw std::runtime_error("Rng::restore: malformed generator state");
  rng.has_spare_ = has_spare != 0;
  std::memcpy(&rng.spare_, &spare_bits, sizeof spare_bits);
  return rng;
}

bool Rng::operator==(const Rng& other) const {
  return seed_ == other.seed_ && engine_ == other.engine_ &&
         has_spare_ == other.has_spare_ &&
         (!has_spare_ || spare_ == other.spare_);
}

}  // namespace sr3
