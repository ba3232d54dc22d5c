#pragma once

#include <stdexcept>
#include <string>

namespace sonetlab {

// An operation was called outside its contract (shape mismatch, bad argument).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A data file could not be ingested (bad magic, truncation, size mismatch).
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An internal invariant failed; indicates a bug, not a caller error.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace sonetlab
