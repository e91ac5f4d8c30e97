#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pqda/diagnostics.hpp"
#include "pqda/dgfm.hpp"
#include "pqda/enkf.hpp"
#include "pqda/lorenz96.hpp"
#include "pqda/matrix.hpp"
#include "pqda/smc.hpp"
#include "pqda/timeseries.hpp"

namespace pqda::cli {

namespace fs = std::filesystem;

inline constexpr std::uint32_t format_version = 1;

// Process exit codes.
enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_numerical = 2, exit_io = 3 };

// Raised for malformed or inconsistent configuration.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

enum class TestRange { next_episode, holdout };

std::string to_string(TestRange r);
TestRange parse_test_range(const std::string& text);

struct DiagnosticsConfig {
  std::size_t m_pred = 100;
  TestRange test_range = TestRange::next_episode;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  lorenz96::L96Params lorenz;
  lorenz96::SimConfig sim;
  // Rows after train_end used by the holdout test range.
  std::size_t test_length = 2000;
  dgfm::NetworkSpec network;
  scoring::ScoreConfig score;
  smc::SMCConfig smc;  // its kernel, score and seed fields are filled by smc_config()
  kernel::KernelConfig kernel;
  enkf::EnKFConfig enkf;
  DiagnosticsConfig diagnostics;
  // Series file; empty means <out>/series.csv.
  std::string data_path;
  std::string out = "out";

  /// Cross-field checks; throws ConfigError.
  void validate() const;
  /// SMC settings with the shared kernel, score and seed copied in.
  smc::SMCConfig smc_config() const;
  /// Network spec with obs_dim tied to the Lorenz-96 slow dimension.
  dgfm::NetworkSpec network_spec() const;
  /// EnKF settings with the integration steps taken from the simulation.
  enkf::EnKFConfig enkf_config() const;
  fs::path series_path() const;
};

/// Applies one `section.key = value` assignment; throws ConfigError naming
/// the key on unknown keys and unparsable values.
void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Parses flat config text: one assignment per line, `#` starts a comment.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const fs::path& path);

/// Every key with its canonical value, one `key = value` line each, sorted.
std::string canonical_config(const ExperimentConfig& cfg);

/// 64-bit FNV-1a of the canonical text excluding paths, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);
std::uint64_t fnv1a64(const std::string& bytes);

// ---------------------------------------------------------------------------
// Binary container: "PQDA", u32 version, u32 entry count, a directory of
// entries and then the payloads, all little endian.

enum class DType : std::uint8_t { f64 = 1, text = 2 };

struct Entry {
  DType dtype = DType::f64;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;  // f64 payload
  std::string text;            // text payload
};

using Container = std::map<std::string, Entry>;

Entry f64_entry(std::vector<double> values, std::vector<std::uint64_t> shape);
Entry text_entry(std::string text);

void write_container(const fs::path& path, const Container& c);
Container read_container(const fs::path& path);

/// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

// ---------------------------------------------------------------------------
// CSV files

/// `# pqda series ...` metadata line, `time,y1..yK` header and one row per record.
std::string series_csv(const TimeSeries& series, const std::string& hash);
TimeSeries parse_series_csv(const std::string& text);

struct MetricsRow {
  std::size_t episode_index = 0;
  double calibration_error = 0.0;
  double nrmse = 0.0;
  double r2 = 0.0;
  std::size_t range_begin = 0;
  std::size_t range_end = 0;
};

MetricsRow to_row(const diagnostics::MetricsReport& r);

std::string metrics_csv(const std::vector<MetricsRow>& rows, const std::string& hash, const std::string& source,
                        TestRange range);

struct TemperingRow {
  std::size_t episode_index = 0;
  std::size_t step = 0;
  double alpha = 0.0;
  double cess = 0.0;
};

std::string tempering_csv(const std::vector<TemperingRow>& rows, const std::string& hash);

// A parsed CSV: named columns of numbers plus the `#` metadata lines.
struct Table {
  std::vector<std::string> comments;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  /// Values of a named column; throws ConfigError naming a missing column.
  std::vector<double> column(const std::string& name) const;
  /// Value of `key=value` in the comment lines, if present.
  std::optional<std::string> meta(const std::string& key) const;
};

Table parse_table(const std::string& text);

// ---------------------------------------------------------------------------
// Output directory

/// Exclusive `.lock` file in a directory, removed on destruction. A lock left
/// behind by a process that no longer exists is taken over.
class DirectoryLock {
public:
  explicit DirectoryLock(const fs::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
  fs::path path_;
};

struct Checkpoint {
  smc::ParticleEnsemble ensemble;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<MetricsRow> metrics;
  std::vector<TemperingRow> tempering;
};

fs::path checkpoint_path(const fs::path& out, std::size_t episode);
void write_checkpoint(const fs::path& path, const Checkpoint& cp);
Checkpoint read_checkpoint(const fs::path& path);
/// Highest-numbered checkpoint under out/checkpoints, if any.
std::optional<fs::path> latest_checkpoint(const fs::path& out);

// ---------------------------------------------------------------------------
// Subcommands

struct RunOptions {
  bool force = false;
  bool resume = false;
  // Stops after this many episodes in this invocation (interruption testing).
  std::optional<std::size_t> stop_after;
  Execution exec = Execution::parallel;
};

/// Generates the dataset into series_path(). Returns the path written.
fs::path cmd_simulate(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Episodic assimilation with per-episode metrics; writes checkpoints,
/// metrics.csv and tempering.csv under out. Returns all metrics rows.
std::vector<MetricsRow> cmd_assimilate(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// EnKF baseline with the same per-episode evaluation ranges; writes enkf_metrics.csv.
std::vector<MetricsRow> cmd_enkf(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Evaluates the latest checkpoint on the holdout range; writes evaluation.csv.
MetricsRow cmd_evaluate(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Three-panel SVG of calibration error, NRMSE and R2 against episode, one
/// curve per CSV. Labels default to the file stems.
void cmd_plot(const std::vector<fs::path>& csvs, const fs::path& svg_out,
              const std::vector<std::string>& labels = {});

std::string render_plot(const std::vector<Table>& tables, const std::vector<std::string>& labels);

/// Evaluation range for the diagnostics after a 1-based episode; empty when
/// it falls outside the series.
smc::EpisodeRange evaluation_range(const ExperimentConfig& cfg, std::size_t episode, std::size_t series_length,
                                   std::size_t train_end);

} // namespace pqda::cli
