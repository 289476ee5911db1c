#pragma once

#include <stdexcept>
#include <string>

namespace lmmom {

/// Base class for every failure this library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A CSV cell failed to parse, had the wrong field count, or held a
/// non-finite value. Carries the 1-based physical line number.
class ParseError : public Error {
 public:
  ParseError(long line, const std::string& detail)
      : Error("line " + std::to_string(line) + ": " + detail), line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

/// No usable rows or groups remain (empty input, or a size filter removed
/// every group).
class EmptyData : public Error {
 public:
  explicit EmptyData(const std::string& context) : Error(context) {}
};

/// A group has fewer rows than the requested moment order needs.
class GroupTooSmall : public Error {
 public:
  GroupTooSmall(const std::string& group, long size, int required)
      : Error("group \"" + group + "\" has " + std::to_string(size) +
              " rows but " + std::to_string(required) + " are required"),
        group_(group),
        size_(size),
        required_(required) {}
  const std::string& group() const noexcept { return group_; }
  long size() const noexcept { return size_; }
  int required() const noexcept { return required_; }

 private:
  std::string group_;
  long size_;
  int required_;
};

/// The pooled within-group design scatter is numerically singular, so the
/// slope coefficients cannot be identified.
class SingularDesign : public Error {
 public:
  explicit SingularDesign(double rcond)
      : Error("within-group design scatter is numerically singular "
              "(reciprocal condition number " +
              std::to_string(rcond) + ")"),
        rcond_(rcond) {}
  double rcond() const noexcept { return rcond_; }

 private:
  double rcond_;
};

/// Caller broke an interface contract (bad flag value, mismatched configs,
/// out-of-range order, ...).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what) {}
};

/// A moment specification lacks an entry that a variance formula needs.
class MissingMoment : public Error {
 public:
  MissingMoment(const std::string& side, int order)
      : Error("moment spec has no entry " + side + std::to_string(order)),
        side_(side),
        order_(order) {}
  const std::string& side() const noexcept { return side_; }
  int order() const noexcept { return order_; }

 private:
  std::string side_;
  int order_;
};

/// The requested population moment diverges for the chosen law.
class MomentUndefined : public Error {
 public:
  explicit MomentUndefined(int order)
      : Error("central moment of order " + std::to_string(order) +
              " does not exist for this law"),
        order_(order) {}
  int order() const noexcept { return order_; }

 private:
  int order_;
};

}  // namespace lmmom
