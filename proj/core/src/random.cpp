#include "symdiff/random.hpp"

#include <sstream>

#include "symdiff/error.hpp"

namespace symdiff {

std::string rng_state(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void restore_rng_state(Rng& rng, const std::string& state) {
  std::istringstream in(state);
  in >> rng;
  if (!in) throw Error(ErrorKind::kParse, "corrupt random generator state");
}

}  // namespace symdiff
