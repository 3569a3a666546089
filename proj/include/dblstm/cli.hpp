#pragma once

// The `dblstm` command-line tool. Exit codes:
//   0 success, 1 usage, 2 config, 3 data (datasets, checkpoints, mapping
//   and transcription files), 4 numeric failure, 5 anything unexpected.

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "dblstm/decoding.hpp"

namespace dblstm::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitInternal = 5,
};

/// args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// One transcription line: `id<TAB>labels<TAB>log_prob`, labels
/// space-separated (possibly empty), log_prob in shortest round-trip form.
std::string format_transcription(const std::string& id, const Hypothesis& hyp);

struct TranscriptionBlock {
  std::string id;
  NBestList hypotheses;  // file order
};

/// Parses a transcription file. Consecutive lines with the same id form one
/// n-best block; blank lines are ignored. Throws DataError with file:line.
std::vector<TranscriptionBlock> read_transcriptions(const std::string& path);

}  // namespace dblstm::cli
