#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace poolnas {

/// One search iteration.
struct RunRecord {
    std::int64_t step = 0;
    std::string config;              ///< "[4,3,3]"
    int model = 0;
    double accuracy = 0.0;           ///< observed validation-minibatch accuracy
    std::optional<double> tau;       ///< sampling temperature, when the method has one
    std::optional<double> loss;      ///< training loss, cnn backend
    std::optional<double> entropy;   ///< mean H(p(m | c)) of the sampling joint
    double wall_clock = 0.0;         ///< seconds since run start

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& doc);

    friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

/// Appends records to a line-delimited file as they are produced.
class RecordWriter {
public:
    explicit RecordWriter(const std::filesystem::path& path);
    void write(const RunRecord& record);
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

void write_records(const std::vector<RunRecord>& records, const std::filesystem::path& path);

/// Throws ParseError with the 1-based line of a malformed record and
/// ValidationError when steps do not increase.
std::vector<RunRecord> read_records(const std::filesystem::path& path);

/// Pretty-printed with sorted keys and a trailing newline.
std::string dump_report(const nlohmann::json& report);
void write_report(const nlohmann::json& report, const std::filesystem::path& path);
nlohmann::json read_report(const std::filesystem::path& path);

/// `dir/records.jsonl` and `dir/report.json`; creates `dir`.
void persist_results(const std::vector<RunRecord>& records, const nlohmann::json& report,
                     const std::filesystem::path& dir);

struct StoredResults {
    std::vector<RunRecord> records;
    nlohmann::json report;
};
StoredResults load_results(const std::filesystem::path& dir);

}  // namespace poolnas
