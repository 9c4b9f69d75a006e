#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace adverseg {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitUsage = 2,
  kExitRuntime = 3,
};

/// Runs one command line (args[0] is the program name). Tables and summaries
/// go to `out`, diagnostics to `err`.
///
///   gen-data  --out DIR --count N --size H [--width W] --classes C [--seed S] ...
///   train     --data MANIFEST [--config FILE] --out DIR [--no-adversarial] [--lambda F] [--steps N] [--seed S]
///   eval      --data MANIFEST --checkpoint FILE --out FILE [--name NAME]
///   report    --in FILE... [--columns pa,recall,iou,dice]
///   gradcheck [--layer NAME] [--seed S]
///
/// Without --seed, a seed is taken from ADVERSEG_SEED when that is set.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace adverseg
