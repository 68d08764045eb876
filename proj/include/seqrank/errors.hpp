#pragma once

#include <stdexcept>
#include <string>

namespace seqrank {

// Each error family maps onto one CLI exit code (see tools/seqrank_main.cpp).
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class shape_error : public error {
 public:
  using error::error;
};

class batch_too_small_error : public error {
 public:
  using error::error;
};

class composition_error : public error {
 public:
  using error::error;
};

class dimension_error : public error {
 public:
  using error::error;
};

class lookup_error : public error {
 public:
  using error::error;
};

class no_candidates_error : public lookup_error {
 public:
  using lookup_error::lookup_error;
};

class parse_error : public error {
 public:
  parse_error(const std::string& what, std::size_t line)
      : error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class schema_error : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

class degenerate_probe_error : public error {
 public:
  using error::error;
};

}  // namespace seqrank
