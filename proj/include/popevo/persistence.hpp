#pragma once

#include "popevo/evolution.hpp"
#include "popevo/fitness.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace popevo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CacheSnapshot {
    std::map<CacheKey, EvaluationOutcome> entries;
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
};

struct Checkpoint {
    EngineState state;
    /// Evaluator counters at the boundary.
    std::uint64_t evaluations = 0;
    std::uint64_t cache_hits = 0;
    std::optional<CacheSnapshot> cache;
};

Checkpoint capture_checkpoint(const EngineState& state, const Evaluator& evaluator, bool include_cache = true);

/// Loads cache contents and counters back into an evaluator.
void restore_evaluator(const Checkpoint& ckpt, Evaluator& evaluator);

/// Layout: "POPEVOCK" | u32 version | u64 payload length | payload |
/// BLAKE2b-256 of everything before it. Integers are little-endian; doubles
/// are stored as their raw IEEE-754 bits.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// --- iteration log -------------------------------------------------------------

inline constexpr const char* kLogHeader =
    "generation,best_fitness,mean_fitness,topk_mean,pool_after_crossover,pool_after_mutation,evals,cache_hits,"
    "wall_clock_s";

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

std::string format_log_row(const IterationReport& report);
IterationReport parse_log_row(const std::string& row);

/// Appends one row, writing the header first when the stream is at offset 0.
void append_iteration_log(const IterationReport& report, std::ostream& sink);
/// File variant: the header is written only if the file is new or empty.
void append_iteration_log(const IterationReport& report, const std::filesystem::path& path);

std::vector<IterationReport> read_iteration_log(const std::filesystem::path& path);

// --- reports -------------------------------------------------------------------

enum class ReportFormat { Csv, Json };

void export_report(const RunResult& run, ReportFormat fmt, const std::filesystem::path& path);
std::string report_json_text(const RunResult& run);
std::string report_csv_text(const RunResult& run);

// --- run directory ---------------------------------------------------------------

struct RunDirectory {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path log() const { return root / "log.csv"; }
    std::filesystem::path checkpoint(std::uint64_t generation) const
    {
        return root / ("ckpt_" + std::to_string(generation) + ".bin");
    }
    std::filesystem::path report(ReportFormat fmt) const
    {
        return root / (fmt == ReportFormat::Csv ? "report.csv" : "report.json");
    }
    /// Highest-generation checkpoint present, if any.
    std::optional<std::filesystem::path> latest_checkpoint() const;
};

/// Writes log rows and a checkpoint at every iteration boundary and the
/// reports at the end.
class RunDirectorySink final : public RunSink {
public:
    explicit RunDirectorySink(RunDirectory dir, bool include_cache = true);

    void on_iteration(const IterationReport& report, const Engine& engine) override;
    void on_abort(const EngineState& last_good, const Evaluator& evaluator) override;
    void on_finish(const RunResult& result, const Engine& engine) override;

private:
    RunDirectory dir_;
    bool include_cache_;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace popevo
