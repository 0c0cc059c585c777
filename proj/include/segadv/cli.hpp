#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace segadv::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitRuntime = 2,
  kExitCheckFailed = 3,
};

/// Flat key=value record of one command invocation. Every input that
/// influences an output is stored, together with the SHA-256 of every file
/// the command read or wrote (keys `sha256.input.<slot>` and
/// `sha256.output.<slot>`), so a replay can re-run the command and compare.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const;
  /// Throws kInvalidArgument naming the key when it is absent.
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string encode() const;
  static Manifest decode(const std::string& text);

 private:
  std::map<std::string, std::string> entries_;
};

/// Sidecar path for an output file.
std::string manifest_path(const std::string& output_path);

/// Entry point behind the `segadv` binary. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace segadv::cli
