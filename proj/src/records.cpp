#include "poolnas/records.hpp"

#include "poolnas/error.hpp"

#include <sstream>

namespace poolnas {

namespace {

void put_optional(nlohmann::json& doc, const char* key, const std::optional<double>& v) {
    if (v) doc[key] = *v;
}

std::optional<double> get_optional(const nlohmann::json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return std::nullopt;
    return it->get<double>();
}

std::ofstream open_for_write(const std::filesystem::path& path, std::ios::openmode mode) {
    std::ofstream out(path, mode);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace

nlohmann::json RunRecord::to_json() const {
    nlohmann::json doc = {
        {"step", step},   {"config", config},          {"model", model},
        {"accuracy", accuracy}, {"wall_clock", wall_clock},
    };
    put_optional(doc, "tau", tau);
    put_optional(doc, "loss", loss);
    put_optional(doc, "entropy", entropy);
    return doc;
}

RunRecord RunRecord::from_json(const nlohmann::json& doc) {
    RunRecord r;
    r.step = doc.at("step").get<std::int64_t>();
    r.config = doc.at("config").get<std::string>();
    r.model = doc.at("model").get<int>();
    r.accuracy = doc.at("accuracy").get<double>();
    r.wall_clock = doc.at("wall_clock").get<double>();
    r.tau = get_optional(doc, "tau");
    r.loss = get_optional(doc, "loss");
    r.entropy = get_optional(doc, "entropy");
    return r;
}

RecordWriter::RecordWriter(const std::filesystem::path& path)
    : path_(path), out_(open_for_write(path, std::ios::out | std::ios::trunc)) {}

void RecordWriter::write(const RunRecord& record) {
    out_ << record.to_json().dump() << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("write failed on " + path_.string());
}

void write_records(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
    RecordWriter writer(path);
    for (const auto& r : records) writer.write(r);
}

std::vector<RunRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<RunRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        RunRecord r;
        try {
            r = RunRecord::from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what(),
                             line_no);
        }
        if (!records.empty() && r.step <= records.back().step)
            throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                                  ": step does not increase");
        records.push_back(std::move(r));
    }
    return records;
}

std::string dump_report(const nlohmann::json& report) { return report.dump(2) + "\n"; }

void write_report(const nlohmann::json& report, const std::filesystem::path& path) {
    auto out = open_for_write(path, std::ios::out | std::ios::trunc | std::ios::binary);
    out << dump_report(report);
    if (!out) throw std::runtime_error("write failed on " + path.string());
}

nlohmann::json read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), e.byte);
    }
}

void persist_results(const std::vector<RunRecord>& records, const nlohmann::json& report,
                     const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
    write_records(records, dir / "records.jsonl");
    write_report(report, dir / "report.json");
}

StoredResults load_results(const std::filesystem::path& dir) {
    return {read_records(dir / "records.jsonl"), read_report(dir / "report.json")};
}

}  // namespace poolnas
