#ifndef ANSEL_TOOLS_CLI_H_
#define ANSEL_TOOLS_CLI_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

#include "ansel/finetune.h"
#include "ansel/text.h"

namespace ansel::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Every setting a command can read. Keys in config files and echoes are the
// field names; flags are the same names with dashes.
struct RunConfig {
  std::string command;
  std::uint64_t seed = 7;

  std::filesystem::path data_dir;
  std::filesystem::path vocab;
  std::filesystem::path ckpt_in;
  std::filesystem::path ckpt_out;
  std::filesystem::path run_out;
  std::filesystem::path run;
  std::filesystem::path qrels;
  std::filesystem::path run_a;
  std::filesystem::path run_b;
  std::string split = "test";
  std::string stat = "ap";
  CasingMode casing = CasingMode::kUncased;

  std::size_t layers = 2;
  std::size_t hidden = 16;
  std::size_t heads = 2;
  std::size_t ffn = 32;
  std::size_t vocab_size = 200;
  std::size_t max_positions = 128;
  double dropout = 0.1;

  std::size_t batch_size = 16;
  std::size_t epochs = 2;
  double lr = 2e-5;
  std::size_t max_len = kDefaultMaxLength;
  FinetuneMode mode = FinetuneMode::kFinetuneAll;

  std::size_t steps = 300;
  std::size_t pretrain_batch_size = 128;
  double pretrain_lr = 1e-2;
  std::size_t pretrain_max_len = 32;

  std::size_t questions = 200;
  std::size_t candidates = 5;
  std::size_t documents = 200;
  std::size_t sentences = 4;

  bool operator==(const RunConfig&) const = default;
};

// Applies key=value lines (# starts a comment) on top of base.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);
// One key=value line per field, in a fixed order; parse_config reads it back.
std::string format_config(const RunConfig& config);

// argv-style entry point; args[0] is the program name. Results go to out,
// diagnostics to the log (stderr, level from ANSEL_LOG).
int run(std::span<const std::string> args, std::ostream& out);
int run(int argc, char** argv);

}  // namespace ansel::cli

#endif  // ANSEL_TOOLS_CLI_H_
