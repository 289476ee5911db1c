#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "lmmom/errors.hpp"

namespace lmmom {

/// One group (cluster) of a one-level mixed model: l rows sharing a random
/// intercept. `x` is l-by-p; `y` is length l.
struct Group {
  std::string id;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;

  Eigen::Index rows() const noexcept { return y.size(); }
};

/// Grouped regression data for the model
///   y_ij = alpha + x_ij' beta + b_i + eps_ij,  j = 1..l_i, i = 1..n.
/// Groups keep their first-appearance order; p = 0 (intercept-only) is a
/// valid design.
struct GroupedDataset {
  std::vector<Group> groups;
  Eigen::Index p = 0;

  Eigen::Index group_count() const noexcept {
    return static_cast<Eigen::Index>(groups.size());
  }

  Eigen::Index total_rows() const noexcept {
    Eigen::Index total = 0;
    for (const auto& g : groups) total += g.rows();
    return total;
  }

  /// Check structural invariants: at least one nonempty group, consistent
  /// column counts, finite values. Throws EmptyData or UsageError.
  void validate() const {
    if (groups.empty()) throw EmptyData("dataset has no groups");
    for (const auto& g : groups) {
      if (g.rows() == 0) throw EmptyData("group \"" + g.id + "\" has no rows");
      if (g.x.rows() != g.y.size() || g.x.cols() != p) {
        throw UsageError("group \"" + g.id + "\" has inconsistent shapes");
      }
      if (!g.y.allFinite() || !g.x.allFinite()) {
        throw UsageError("group \"" + g.id + "\" holds non-finite values");
      }
    }
  }
};

/// Policy for groups too small for a requested moment order.
enum class SizePolicy { strict, drop };

/// What a size filter removed.
struct SizeFilterReport {
  int order = 0;
  std::vector<std::pair<std::string, long>> dropped;  // (group id, size)
};

namespace detail {

inline void split_fields(const std::string& line, std::vector<std::string>& out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline double parse_double(const std::string& field, long line_no,
                           const char* what) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ParseError(line_no, std::string("cannot parse ") + what + " value \"" +
                                  field + "\"");
  }
  if (!std::isfinite(value)) {
    throw ParseError(line_no, std::string(what) + " value is not finite");
  }
  return value;
}

/// Shortest decimal form that round-trips an IEEE double exactly, so a
/// written file reloads to bit-identical values and repeated writes are
/// byte-identical.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer fewer digits when they already round-trip; keeps files readable.
  for (int prec = 1; prec < 17; ++prec) {
    char probe[40];
    std::snprintf(probe, sizeof probe, "%.*g", prec, v);
    double back = 0.0;
    std::from_chars(probe, probe + std::strlen(probe), back);
    if (back == v) return probe;
  }
  return buf;
}

}  // namespace detail

/// Read the `group,y,x1,...,xp` CSV format. The header fixes p; each data
/// row needs exactly p+2 fields. Rows of one group may be scattered through
/// the file; groups keep first-appearance order, rows keep file order.
inline GroupedDataset read_csv(std::istream& in) {
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw EmptyData("input has no header line");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> fields;
  detail::split_fields(line, fields);
  if (fields.size() < 2 || fields[0] != "group" || fields[1] != "y") {
    throw ParseError(line_no, "header must start with group,y");
  }
  const Eigen::Index p = static_cast<Eigen::Index>(fields.size()) - 2;
  for (Eigen::Index j = 0; j < p; ++j) {
    const std::string want = "x" + std::to_string(j + 1);
    if (fields[static_cast<std::size_t>(j) + 2] != want) {
      throw ParseError(line_no, "covariate columns must be named x1..xp");
    }
  }

  struct Raw {
    std::string id;
    std::vector<double> y;
    std::vector<double> x;  // row-major, p per row
  };
  std::vector<Raw> raws;
  std::map<std::string, std::size_t> index;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    detail::split_fields(line, fields);
    if (static_cast<Eigen::Index>(fields.size()) != p + 2) {
      throw ParseError(line_no, "expected " + std::to_string(p + 2) +
                                    " fields, got " +
                                    std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw ParseError(line_no, "empty group label");
    auto [it, inserted] = index.try_emplace(fields[0], raws.size());
    if (inserted) raws.push_back(Raw{fields[0], {}, {}});
    Raw& raw = raws[it->second];
    raw.y.push_back(detail::parse_double(fields[1], line_no, "y"));
    for (Eigen::Index j = 0; j < p; ++j) {
      raw.x.push_back(detail::parse_double(fields[static_cast<std::size_t>(j) + 2],
                                           line_no, "x"));
    }
  }
  if (raws.empty()) throw EmptyData("file holds a header but no data rows");

  GroupedDataset ds;
  ds.p = p;
  ds.groups.reserve(raws.size());
  for (auto& raw : raws) {
    Group g;
    g.id = std::move(raw.id);
    const Eigen::Index l = static_cast<Eigen::Index>(raw.y.size());
    g.y = Eigen::Map<const Eigen::VectorXd>(raw.y.data(), l);
    g.x.resize(l, p);
    for (Eigen::Index r = 0; r < l; ++r) {
      for (Eigen::Index j = 0; j < p; ++j) {
        g.x(r, j) = raw.x[static_cast<std::size_t>(r * p + j)];
      }
    }
    ds.groups.push_back(std::move(g));
  }
  ds.validate();
  return ds;
}

inline GroupedDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open \"" + path + "\" for reading");
  return read_csv(in);
}

/// Write the CSV format read by read_csv. Values round-trip bit-exactly.
inline void write_csv(const GroupedDataset& ds, std::ostream& out) {
  out << "group,y";
  for (Eigen::Index j = 0; j < ds.p; ++j) out << ",x" << (j + 1);
  out << "\n";
  for (const auto& g : ds.groups) {
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      out << g.id << ',' << detail::format_double(g.y(r));
      for (Eigen::Index j = 0; j < ds.p; ++j) {
        out << ',' << detail::format_double(g.x(r, j));
      }
      out << "\n";
    }
  }
}

inline void save_csv(const GroupedDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open \"" + path + "\" for writing");
  write_csv(ds, out);
}

/// Enforce the minimum group size a moment order needs (order k requires
/// l_i >= k). strict: throw GroupTooSmall at the first offender. drop:
/// return a filtered copy plus a report of what was removed; dropping every
/// group raises EmptyData. Filtering is idempotent.
inline std::pair<GroupedDataset, SizeFilterReport> validate_for_order(
    const GroupedDataset& ds, int order, SizePolicy policy) {
  if (order < 2 || order > 4) {
    throw UsageError("moment order must be 2, 3, or 4");
  }
  GroupedDataset kept;
  kept.p = ds.p;
  SizeFilterReport report;
  report.order = order;
  for (const auto& g : ds.groups) {
    if (g.rows() >= order) {
      kept.groups.push_back(g);
    } else if (policy == SizePolicy::strict) {
      throw GroupTooSmall(g.id, g.rows(), order);
    } else {
      report.dropped.emplace_back(g.id, g.rows());
    }
  }
  if (kept.groups.empty()) {
    throw EmptyData("no group has the " + std::to_string(order) +
                    " rows required for order " + std::to_string(order));
  }
  return {std::move(kept), std::move(report)};
}

}  // namespace lmmom
