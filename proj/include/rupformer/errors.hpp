#pragma once

#include <stdexcept>
#include <string>

namespace rupf {

// Every library failure derives from Error so callers (the CLI in particular)
// can map the category onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Values outside their documented domain (ratios, quantiles, indices, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// CSV ingestion and data-layout failures.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration documents or flag values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf during training or inference.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// File system and checkpoint format failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rupf
