#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace midout {

// Thrown on any violated precondition or shape contract.
class contract_error : public std::invalid_argument {
 public:
  explicit contract_error(const std::string& what) : std::invalid_argument(what) {}
};

namespace detail {
inline void check_fail(const char* expr, const std::string& msg) {
  std::ostringstream os;
  os << "contract violation: " << msg << " [" << expr << "]";
  throw contract_error(os.str());
}
}  // namespace detail

}  // namespace midout

#define MIDOUT_CHECK(cond, msg)                                   \
  do {                                                            \
    if (!(cond)) {                                                \
      std::ostringstream os_;                                     \
      os_ << msg;                                                 \
      ::midout::detail::check_fail(#cond, os_.str());             \
    }                                                             \
  } while (0)
