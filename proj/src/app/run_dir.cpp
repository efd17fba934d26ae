#include "mate/app/run_dir.hpp"

#include "mate/errors.hpp"

#include <chrono>
#include <cstdlib>
#include <random>
#include <system_error>

namespace mate::app {

namespace fs = std::filesystem;

fs::path run_root() {
  const char* env = std::getenv("MATE_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

RunDirectory::RunDirectory(const fs::path& root, std::string label) : root_(root), label_(std::move(label)) {
  if (label_.empty()) throw ConfigError("run label must not be empty");
  std::error_code ec;
  fs::create_directories(root_ / ".staging", ec);
  if (ec) throw ConfigError(root_.string() + ": cannot create run root (" + ec.message() + ")");
  std::random_device rd;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto tag = std::to_string(std::chrono::steady_clock::now().time_since_epoch().count() ^ rd());
    path_ = root_ / ".staging" / (label_ + "." + tag);
    if (fs::create_directory(path_, ec)) return;
  }
  throw ConfigError(root_.string() + ": cannot create a staging directory");
}

RunDirectory::RunDirectory(RunDirectory&& other) noexcept
    : root_(std::move(other.root_)),
      label_(std::move(other.label_)),
      path_(std::move(other.path_)),
      committed_(other.committed_) {
  other.committed_ = true;  // nothing left to clean up
}

RunDirectory::~RunDirectory() {
  if (committed_) return;
  std::error_code ec;
  fs::remove_all(path_, ec);
}

fs::path RunDirectory::commit() {
  if (committed_) return path_;
  for (int n = 1; n < 10000; ++n) {
    const fs::path target = root_ / (n == 1 ? label_ : label_ + "-" + std::to_string(n));
    if (fs::exists(target)) continue;
    std::error_code ec;
    fs::rename(path_, target, ec);
    if (ec) continue;  // lost a race for this name
    path_ = target;
    committed_ = true;
    fs::remove(root_ / ".staging", ec);  // only succeeds once empty
    return path_;
  }
  throw ConfigError(root_.string() + ": no free run directory name for label '" + label_ + "'");
}

}  // namespace mate::app
