#pragma once

#include <stdexcept>
#include <string>

namespace popcorn {

// Base for everything this library throws. Maps to CLI exit code 3 unless a
// more specific subclass applies.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad usage or bad configuration (unknown keys, invalid field values). Exit 1.
struct ConfigError : Error {
  using Error::Error;
};

// Problems with input data: missing files, malformed headers, shape or id
// mismatches in datasets and run directories. Exit 2.
struct DataError : Error {
  using Error::Error;
};

}  // namespace popcorn
