#include "pdp/core/rng.hpp"

#include <cmath>
#include <sstream>

namespace pdp {

real Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    real u1 = uniform();
    real u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    real r = std::sqrt(-2.0 * std::log(u1));
    real a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::string Rng::save_state() const {
    std::ostringstream os;
    os << gen_ << " " << (has_spare_ ? 1 : 0) << " ";
    os.precision(17);
    os << spare_;
    return os.str();
}

void Rng::load_state(const std::string& s) {
    std::istringstream is(s);
    int spare_flag = 0;
    is >> gen_ >> spare_flag >> spare_;
    if (!is) throw IoError("bad rng state string");
    has_spare_ = spare_flag != 0;
}

}  // namespace pdp
