#pragma once

#include <stdexcept>
#include <string>

namespace vizrisk {

/// Malformed or inconsistent user input (files, schemas, configs, data
/// that violates an operation's preconditions). The CLI maps it to exit 2.
class input_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Information matrix could not be inverted.
class singular_matrix_error : public input_error {
public:
    singular_matrix_error(const std::string& what, double rcond)
        : input_error(what), rcond_(rcond) {}

    double rcond() const noexcept { return rcond_; }

private:
    double rcond_;
};

}  // namespace vizrisk
