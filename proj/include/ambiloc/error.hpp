#pragma once

#include <stdexcept>
#include <string>

namespace ambiloc {

/// Malformed or inconsistent input (files, configuration, argument shapes).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical routine could not produce a finite or well-defined result.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ambiloc
