#include "dfkd/rng.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <locale>
#include <numbers>
#include <ostream>
#include <sstream>

#include "dfkd/errors.hpp"

namespace dfkd {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : engine_(mix64(seed ^ mix64(stream + 1))) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw argument_error("uniform_int: n must be positive");
  const std::uint64_t bound = n * ((~std::uint64_t{0}) / n);
  std::uint64_t u;
  do {
    u = next_u64();
  } while (u >= bound);
  return u % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - uniform() lies in (0, 1], keeping the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Mat Rng::normal_mat(int rows, int cols) {
  Mat m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = normal();
  return m;
}

void Rng::shuffle(std::vector<int>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = uniform_int(i);
    std::swap(v[i - 1], v[j]);
  }
}

void Rng::save(std::ostream& os) const {
  std::ostringstream ss;
  ss.imbue(std::locale::classic());
  ss << engine_;
  const std::string state = ss.str();
  std::uint64_t len = state.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(state.data(), static_cast<std::streamsize>(len));
  std::uint8_t has = has_spare_ ? 1 : 0;
  os.write(reinterpret_cast<const char*>(&has), sizeof(has));
  std::uint64_t bits;
  std::memcpy(&bits, &spare_, sizeof(bits));
  os.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
}

void Rng::load(std::istream& is) {
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string state(len, '\0');
  is.read(state.data(), static_cast<std::streamsize>(len));
  std::istringstream ss(state);
  ss.imbue(std::locale::classic());
  ss >> engine_;
  std::uint8_t has = 0;
  is.read(reinterpret_cast<char*>(&has), sizeof(has));
  has_spare_ = has != 0;
  std::uint64_t bits = 0;
  is.read(reinterpret_cast<char*>(&bits), sizeof(bits));
  std::memcpy(&spare_, &bits, sizeof(bits));
  if (!is) throw data_error("Rng::load: truncated stream");
}

bool Rng::operator==(const Rng& other) const {
  return engine_ == other.engine_ && has_spare_ == other.has_spare_ &&
         (has_spare_ ? spare_ == other.spare_ : true);
}

}  // namespace dfkd
