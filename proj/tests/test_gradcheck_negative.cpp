#include <doctest.h>

#include <sstream>

#include "segadv/cli.hpp"

// Linked against the build with a deliberately wrong backward rule; the
// gradient check must notice.
TEST_CASE("gradcheck fails on the faulty build") {
  std::ostringstream out, err;
  CHECK(segadv::cli::run({"gradcheck", "--seed", "3"}, out, err) == segadv::cli::kExitCheckFailed);
  CHECK(out.str().find("gradcheck FAIL") != std::string::npos);
}
