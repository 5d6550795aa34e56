#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bvo {

// Error taxonomy. Every failure surfaced by the core carries one of these
// kinds plus a human-readable message with the offending values baked in.
enum class Err {
  InvalidArgument,  // bad call-level input (null, empty, contract breach)
  Dimension,        // shape mismatch; message names both shapes
  Domain,           // value outside mathematical domain (log of negative, ...)
  Format,           // malformed file or config payload
  Length,           // truncated / over-long payload
  Integrity,        // digest mismatch; message carries expected and actual
  Fetch,            // transport-level failure retrieving a resource
  Numeric,          // non-finite value produced where finiteness is required
  Divergence,       // sampler left the stable region
  Config,           // unknown key, missing field, out-of-range setting
  Io,               // filesystem failure
  Internal,         // invariant the library itself broke
};

class Error : public std::runtime_error {
 public:
  Error(Err kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Err kind() const noexcept { return kind_; }

 private:
  Err kind_;
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::InvalidArgument: return "invalid_argument";
    case Err::Dimension: return "dimension";
    case Err::Domain: return "domain";
    case Err::Format: return "format";
    case Err::Length: return "length";
    case Err::Integrity: return "integrity";
    case Err::Fetch: return "fetch";
    case Err::Numeric: return "numeric";
    case Err::Divergence: return "divergence";
    case Err::Config: return "config";
    case Err::Io: return "io";
    case Err::Internal: return "internal";
  }
  return "unknown";
}

[[noreturn]] inline void fail(Err kind, const std::string& msg) { throw Error(kind, msg); }

}  // namespace bvo
