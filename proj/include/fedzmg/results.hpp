#pragma once

// Results files. Every row carries the hash of the config that produced it;
// writing a cell replaces that hash's earlier rows and keeps all others.
//
//   rounds.csv    config_hash,algorithm,seed,round,val_accuracy,train_loss
//   manifest.csv  config_hash,algorithm,seed,artifact_version,config_file
//   configs/<hash>.cfg  canonical text of each cell

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fedzmg/engine.hpp"

namespace fedzmg {

inline constexpr const char* kArtifactVersion = FEDZMG_VERSION;
inline constexpr const char* kOutputDirEnv = "FEDZMG_OUTPUT_DIR";
inline constexpr const char* kDefaultOutputDir = "fedzmg_out";

struct RoundsRow {
    std::string config_hash;
    std::string algorithm;
    std::uint64_t seed = 0;
    std::size_t round = 0;
    std::optional<double> val_accuracy;
    double train_loss = 0.0;
};

struct ManifestRow {
    std::string config_hash;
    std::string algorithm;
    std::uint64_t seed = 0;
    std::string artifact_version;
    std::string config_file;  // relative to the output directory
};

std::string format_rounds_csv(const std::vector<RoundsRow>& rows);
std::vector<RoundsRow> parse_rounds_csv(const std::string& text);
std::string format_manifest_csv(const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> parse_manifest_csv(const std::string& text);

std::vector<RoundsRow> rounds_rows(const ExperimentConfig& cfg, const std::string& hash,
                                   const std::vector<RoundRecord>& records);

// Flag, then FEDZMG_OUTPUT_DIR, then ./fedzmg_out.
std::filesystem::path resolve_output_dir(const std::optional<std::filesystem::path>& flag);

class ResultsSink {
public:
    explicit ResultsSink(std::filesystem::path dir, std::string rounds_file = "rounds.csv");

    const std::filesystem::path& dir() const noexcept { return dir_; }
    std::filesystem::path rounds_path() const { return dir_ / rounds_file_; }
    std::filesystem::path manifest_path() const { return dir_ / "manifest.csv"; }

    // Stores the cell's canonical config, its manifest row and its rounds.
    // Safe to call from several threads; rows are kept sorted so the files
    // do not depend on completion order.
    void write_cell(const ExperimentConfig& cfg, const std::vector<RoundRecord>& records);
    void write_text(const std::string& name, const std::string& contents);

private:
    std::filesystem::path dir_;
    std::string rounds_file_;
    std::mutex mu_;
};

}  // namespace fedzmg
