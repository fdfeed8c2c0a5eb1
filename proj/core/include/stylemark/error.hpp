#pragma once

#include <stdexcept>
#include <string>

namespace stylemark {

// Base for every error raised by the library. The CLI maps these to exit
// code 2; anything else escaping is a bug.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string record_id, std::string detail)
      : Error("record '" + record_id + "': " + detail),
        record_id_(std::move(record_id)) {}

  const std::string& record_id() const noexcept { return record_id_; }

 private:
  std::string record_id_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

// Style or detector backend exited nonzero or timed out.
class BackendError : public Error {
 public:
  BackendError(std::string job_id, const std::string& what, std::string diagnostics = {})
      : Error("job '" + job_id + "': " + what), job_id_(std::move(job_id)),
        diagnostics_(std::move(diagnostics)) {}

  const std::string& job_id() const noexcept { return job_id_; }
  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string job_id_;
  std::string diagnostics_;
};

// Backend exited cleanly but did not honour the file protocol.
class ProtocolError : public Error {
 public:
  ProtocolError(std::string job_id, const std::string& what)
      : Error("protocol violation in '" + job_id + "': " + what), job_id_(std::move(job_id)) {}

  const std::string& job_id() const noexcept { return job_id_; }

 private:
  std::string job_id_;
};

class SelectionError : public Error {
 public:
  using Error::Error;
};

// Wraps an error raised inside an experiment stage so the stage is visible
// in diagnostics, e.g. "[style:TrainST] job 'x': ...".
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace stylemark
