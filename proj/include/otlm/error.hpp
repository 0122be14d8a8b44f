#pragma once

#include <stdexcept>
#include <string>

namespace otlm {

// All library failures surface as otlm::Error with a message naming the
// offending operation and values. Callers that need exit-code policy
// (the CLI) decide user-vs-internal by the phase they caught it in.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

} // namespace otlm
