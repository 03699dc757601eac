#include "fedzmg/results.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <tuple>

#include "fedzmg/config.hpp"
#include "fedzmg/errors.hpp"
#include "fedzmg/io.hpp"

namespace fedzmg {

namespace {

constexpr const char* kRoundsHeader = "config_hash,algorithm,seed,round,val_accuracy,train_loss";
constexpr const char* kManifestHeader = "config_hash,algorithm,seed,artifact_version,config_file";

std::vector<std::vector<std::string>> csv_records(const std::string& text, const char* header,
                                                  std::size_t columns, const char* what) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || io::trim(line) != header) {
        throw IoError(std::string(what) + ": expected header '" + header + "'");
    }
    std::vector<std::vector<std::string>> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (io::trim(line).empty()) continue;
        auto fields = io::split(io::trim(line), ',');
        if (fields.size() != columns) {
            throw IoError(std::string(what) + " line " + std::to_string(line_no) + ": expected " +
                          std::to_string(columns) + " fields, got " + std::to_string(fields.size()));
        }
        out.push_back(std::move(fields));
    }
    return out;
}

auto row_key(const RoundsRow& r) { return std::tie(r.algorithm, r.seed, r.config_hash, r.round); }
auto row_key(const ManifestRow& r) { return std::tie(r.algorithm, r.seed, r.config_hash); }

template <class Row>
void merge_rows(std::vector<Row>& existing, const std::string& hash, std::vector<Row> fresh) {
    std::erase_if(existing, [&](const Row& r) { return r.config_hash == hash; });
    existing.insert(existing.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
    std::stable_sort(existing.begin(), existing.end(), [](const Row& a, const Row& b) { return row_key(a) < row_key(b); });
}

}  // namespace

std::string format_rounds_csv(const std::vector<RoundsRow>& rows) {
    std::string out = std::string(kRoundsHeader) + "\n";
    for (const auto& r : rows) {
        out += r.config_hash + "," + r.algorithm + "," + std::to_string(r.seed) + "," + std::to_string(r.round) + "," +
               (r.val_accuracy ? io::format_real(*r.val_accuracy) : std::string()) + "," +
               io::format_real(r.train_loss) + "\n";
    }
    return out;
}

std::vector<RoundsRow> parse_rounds_csv(const std::string& text) {
    std::vector<RoundsRow> rows;
    for (const auto& f : csv_records(text, kRoundsHeader, 6, "rounds csv")) {
        RoundsRow r;
        r.config_hash = f[0];
        r.algorithm = f[1];
        r.seed = io::parse_uint(f[2], "rounds csv seed");
        r.round = io::parse_uint(f[3], "rounds csv round");
        if (!f[4].empty()) r.val_accuracy = io::parse_real(f[4], "rounds csv val_accuracy");
        r.train_loss = io::parse_real(f[5], "rounds csv train_loss");
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string format_manifest_csv(const std::vector<ManifestRow>& rows) {
    std::string out = std::string(kManifestHeader) + "\n";
    for (const auto& r : rows) {
        out += r.config_hash + "," + r.algorithm + "," + std::to_string(r.seed) + "," + r.artifact_version + "," +
               r.config_file + "\n";
    }
    return out;
}

std::vector<ManifestRow> parse_manifest_csv(const std::string& text) {
    std::vector<ManifestRow> rows;
    for (const auto& f : csv_records(text, kManifestHeader, 5, "manifest csv")) {
        rows.push_back({f[0], f[1], io::parse_uint(f[2], "manifest csv seed"), f[3], f[4]});
    }
    return rows;
}

std::vector<RoundsRow> rounds_rows(const ExperimentConfig& cfg, const std::string& hash,
                                   const std::vector<RoundRecord>& records) {
    std::vector<RoundsRow> rows;
    rows.reserve(records.size());
    for (const auto& rec : records) {
        rows.push_back({hash, to_string(cfg.algorithm), cfg.seed, rec.round, rec.val_accuracy, rec.train_loss});
    }
    return rows;
}

std::filesystem::path resolve_output_dir(const std::optional<std::filesystem::path>& flag) {
    if (flag && !flag->empty()) return *flag;
    if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
    return kDefaultOutputDir;
}

ResultsSink::ResultsSink(std::filesystem::path dir, std::string rounds_file)
    : dir_(std::move(dir)), rounds_file_(std::move(rounds_file)) {}

void ResultsSink::write_cell(const ExperimentConfig& cfg, const std::vector<RoundRecord>& records) {
    const std::string text = canonical_config_text(cfg);
    const std::string hash = text_hash(text);
    const std::string cfg_file = "configs/" + hash + ".cfg";

    std::lock_guard lock(mu_);
    io::write_file(dir_ / cfg_file, text);

    std::vector<ManifestRow> manifest;
    if (std::filesystem::exists(manifest_path())) manifest = parse_manifest_csv(io::read_file(manifest_path()));
    merge_rows(manifest, hash, {{hash, to_string(cfg.algorithm), cfg.seed, kArtifactVersion, cfg_file}});
    io::write_file(manifest_path(), format_manifest_csv(manifest));

    std::vector<RoundsRow> rounds;
    if (std::filesystem::exists(rounds_path())) rounds = parse_rounds_csv(io::read_file(rounds_path()));
    merge_rows(rounds, hash, rounds_rows(cfg, hash, records));
    io::write_file(rounds_path(), format_rounds_csv(rounds));
}

void ResultsSink::write_text(const std::string& name, const std::string& contents) {
    std::lock_guard lock(mu_);
    io::write_file(dir_ / name, contents);
}

}  // namespace fedzmg
