#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace anchorloss {

/// Malformed input file (bad magic, bad length, bad field value).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Filesystem failure: unwritable path, unreadable file.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Experiment spec failed schema validation.
struct SpecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
    std::size_t epoch;
    explicit DivergenceError(std::size_t at_epoch)
        : std::runtime_error("training diverged (non-finite loss) at epoch " +
                             std::to_string(at_epoch)),
          epoch(at_epoch) {}
};

}  // namespace anchorloss
