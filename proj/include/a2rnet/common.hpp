#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace a2r {

using Scalar = double;

// Extents in storage order; images follow batch x channels x height x width.
using Shape = std::vector<int>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent violation (mismatched operands, indivisible extents, ...).
struct DimensionError : Error {
  using Error::Error;
};

// Value outside the operation's domain (empty reduction set, constant input
// where variation is required, ...).
struct DomainError : Error {
  using Error::Error;
};

// Caller broke an API contract (non-scalar loss, missing gradient, ...).
struct ContractError : Error {
  using Error::Error;
};

// Malformed file content.
struct FormatError : Error {
  using Error::Error;
};

// Invalid configuration or input data.
struct ValidationError : Error {
  using Error::Error;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<std::size_t> row_major_strides(const Shape& shape);

// Multiply-accumulate counter for cost measurements. Thread-local; heavy
// kernels add their MAC count on the forward path only.
namespace macs {
void reset();
std::uint64_t count();
void add(std::uint64_t n);
}  // namespace macs

}  // namespace a2r
