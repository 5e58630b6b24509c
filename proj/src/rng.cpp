#include "d3desk/rng.hpp"

#include <sstream>

namespace d3desk {

std::string Rng::state() const {
  std::ostringstream os;
  os << eng_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> eng_;
}

}  // namespace d3desk
