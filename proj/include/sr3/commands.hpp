#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "sr3/config.hpp"
#include "sr3/dataset.hpp"
#include "sr3/metrics.hpp"

namespace sr3 {

/// Synthetic train/held-out splits for --toy runs, both a pure function of cfg.seed.
struct ToyData {
  DatasetHandle train;
  DatasetHandle val;
};
ToyData make_toy_data(const RunConfig& cfg);

/// Every command prints the resolved configuration before doing work and
/// persists it as config.txt next to its outputs.
std::vector<PreprocessRow> cmd_preprocess(const std::filesystem::path& raw_dir,
                                          const std::filesystem::path& out_dir, const RunConfig& cfg,
                                          std::ostream& log);

struct TrainSummary {
  long steps = 0;
  int checkpoints = 0;
  double final_loss = 0.0;
  std::filesystem::path out_dir;
};

/// Trains on cfg.data_root (or toy data) and writes config.txt, metrics.tsv
/// and checkpoints to cfg.out. `resume` continues from a checkpoint.
TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log,
                       const std::filesystem::path& resume = {});

struct SampleOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path input;  // one LR image or a directory of them
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  int steps = 0;  // 0 = the checkpoint's full schedule
};

/// Upsamples each LR input to the checkpoint's hr_size, runs the reverse
/// process with the EMA weights and writes <out_dir>/<id>.png. Returns the
/// written paths in input order.
std::vector<std::filesystem::path> cmd_sample(const SampleOptions& options, std::ostream& log);

/// Pairs <sr_dir>/<id>.* with <hr_dir>/<id>.*; unmatched ids are listed and
/// skipped. Writes report.tsv and summary.tsv to out_dir.
MetricReport cmd_evaluate(const std::filesystem::path& sr_dir, const std::filesystem::path& hr_dir,
                          const std::filesystem::path& out_dir, std::ostream& log);

/// Reads <triplet_dir>/{lr,sr,hr}/<id>.* and writes the EDA report to out_dir.
MetricReport cmd_eda(const std::filesystem::path& triplet_dir, const std::filesystem::path& out_dir,
                     std::ostream& log);

/// Process exit code for an exception escaping a command: 2 configuration
/// or argument errors, 3 I/O and format errors, 4 numerical aborts, 1 other.
int exit_code_for(const std::exception& error);

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumerical = 4;

}  // namespace sr3
