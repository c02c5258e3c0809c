#pragma once

#include <stdexcept>
#include <string>

namespace sceneminer {

// Malformed or inconsistent input (files, schemas, argument ranges).
// The CLI maps this to exit code 2.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Failed factorization, divergent optimization, non-finite intermediate.
// The CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sceneminer
