#pragma once

#include <filesystem>
#include <string>

namespace mate::app {

// MATE_RUN_ROOT, or ./runs when unset.
std::filesystem::path run_root();

// A run directory built under <root>/.staging and moved into place by commit().
// Existing labels are never reused: a taken label gets a -2, -3, ... suffix.
// An uncommitted directory is removed on destruction.
class RunDirectory {
 public:
  RunDirectory(const std::filesystem::path& root, std::string label);
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;
  RunDirectory(RunDirectory&& other) noexcept;
  RunDirectory& operator=(RunDirectory&&) = delete;
  ~RunDirectory();

  // Staging path before commit(), final path after.
  const std::filesystem::path& path() const { return path_; }
  bool committed() const { return committed_; }

  std::filesystem::path commit();

 private:
  std::filesystem::path root_;
  std::string label_;
  std::filesystem::path path_;
  bool committed_ = false;
};

}  // namespace mate::app
