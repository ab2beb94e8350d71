// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sentbs {

enum class ErrorCode {
  UnknownLabel,
  EmptyControl,
  InvalidSpec,
  EmptyCorpus,
  EmptySequence,
  VocabMismatch,
  BackendFailure,
  InvalidK,
  InvalidArgument,
  EmptySentence,
  EmptySentenceList,
  NoValidOptions,
  ConfigError,
  BothEmpty,
  EmptyList,
  EmptySummary,
  IdMismatch,
  CorpusMismatch,
  IoError,
  Timeout,
  RemoteError,
  NormalizationViolation,
  ProtocolVersionMismatch,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::EmptyControl: return "EmptyControl";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::VocabMismatch: return "VocabMismatch";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptySentence: return "EmptySentence";
    case ErrorCode::EmptySentenceList: return "EmptySentenceList";
    case ErrorCode::NoValidOptions: return "NoValidOptions";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::BothEmpty: return "BothEmpty";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::EmptySummary: return "EmptySummary";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::CorpusMismatch: return "CorpusMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::RemoteError: return "RemoteError";
    case ErrorCode::NormalizationViolation: return "NormalizationViolation";
    case ErrorCode::ProtocolVersionMismatch: return "ProtocolVersionMismatch";
  }
  return "Unknown";
}

/// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Process exit status for the command-line tool: 2 config, 3 backend, 4 data.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidK:
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownLabel:
    case ErrorCode::EmptyControl:
      return 2;
    case ErrorCode::BackendFailure:
    case ErrorCode::Timeout:
    case ErrorCode::RemoteError:
    case ErrorCode::NormalizationViolation:
    case ErrorCode::ProtocolVersionMismatch:
    case ErrorCode::NoValidOptions:
      return 3;
    default:
      return 4;
  }
}

}  // namespace sentbs
