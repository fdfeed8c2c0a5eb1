#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

namespace stylemark {

struct ProcessResult {
  int exit_code = -1;  // -1 when killed or terminated by a signal
  bool timed_out = false;
  std::string diagnostics;  // tail of standard error
  std::chrono::duration<double> wall_time{0};
};

// Runs `command` followed by the shell-quoted `args` through /bin/sh in
// `working_dir`. Standard error goes to `stderr_path`, standard output to
// `stdout_path`. A zero timeout waits forever. On timeout the whole process
// group is killed.
ProcessResult run_process(const std::string& command, const std::vector<std::string>& args,
                          const std::filesystem::path& working_dir,
                          const std::filesystem::path& stdout_path,
                          const std::filesystem::path& stderr_path,
                          std::chrono::milliseconds timeout = std::chrono::milliseconds{0});

std::string shell_quote(const std::string& text);

}  // namespace stylemark
