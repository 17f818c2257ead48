#pragma once

#include <cstdio>
#include <string>

namespace vie::csv {

/// Round-trip decimal form of a double (%.17g).
inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace vie::csv
