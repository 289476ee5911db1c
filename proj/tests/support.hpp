#pragma once

// Shared helpers for the test suites: small dataset builders, temp files,
// and a subprocess runner for the CLI tests.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmmom/dataset.hpp"

namespace testsupport {

/// Build a grouped dataset from per-group y vectors with an optional design.
/// xs empty means p = 0; otherwise xs[i] is an l_i-by-p matrix.
inline lmmom::GroupedDataset make_dataset(
    const std::vector<std::vector<double>>& ys,
    const std::vector<Eigen::MatrixXd>& xs = {}) {
  lmmom::GroupedDataset ds;
  ds.p = xs.empty() ? 0 : xs.front().cols();
  for (std::size_t i = 0; i < ys.size(); ++i) {
    lmmom::Group g;
    g.id = "g" + std::to_string(i + 1);
    g.y = Eigen::Map<const Eigen::VectorXd>(ys[i].data(),
                                            static_cast<Eigen::Index>(ys[i].size()));
    if (xs.empty()) {
      g.x.resize(g.y.size(), 0);
    } else {
      g.x = xs[i];
    }
    ds.groups.push_back(std::move(g));
  }
  return ds;
}

/// Residual groups straight from raw values, for the moment estimators.
inline std::vector<Eigen::VectorXd> residual_groups(
    const std::vector<std::vector<double>>& values) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(values.size());
  for (const auto& v : values) {
    out.push_back(Eigen::Map<const Eigen::VectorXd>(
        v.data(), static_cast<Eigen::Index>(v.size())));
  }
  return out;
}

/// A file that deletes itself when the test is done with it.
class TempFile {
 public:
  explicit TempFile(const std::string& tag) {
    static int counter = 0;
    path_ = (std::filesystem::temp_directory_path() /
             ("lmmom_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++)))
                .string();
  }

  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

  TempFile(const TempFile&) = delete;
  TempFile& operator=(const TempFile&) = delete;

  const std::string& path() const { return path_; }

  void write(const std::string& content) const {
    std::ofstream out(path_);
    out << content;
  }

  std::string read() const {
    std::ifstream in(path_);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

 private:
  std::string path_;
};

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

/// Run a shell command, capturing combined output and the exit status.
inline CommandResult run_command(const std::string& cmd) {
  CommandResult result;
  FILE* pipe = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return result;
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe)) {
    result.output.append(buf, got);
  }
  const int status = ::pclose(pipe);
  if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
  return result;
}

}  // namespace testsupport
