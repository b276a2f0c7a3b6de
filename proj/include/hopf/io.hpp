#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hopf/dataset.hpp"
#include "hopf/model.hpp"

namespace hopf {

inline constexpr int kDatasetFormatVersion = 1;

// %.17g
std::string format_double(double v);

// Writes to a sibling temporary file, then renames over `path`. Throws Io.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// Comma-separated, header row, LF endings, '.' decimal point.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);
    CsvWriter& row(const std::vector<std::string>& cells);
    CsvWriter& row(const std::vector<double>& values);
    const std::string& str() const { return text_; }
    std::size_t rows() const { return rows_; }

private:
    std::size_t columns_;
    std::size_t rows_ = 0;
    std::string text_;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

// Numeric CSV with a header row. Throws Io on malformed content.
CsvTable parse_csv(const std::string& text, const std::string& source = "csv");

// One <id>.csv per record (t, z1..zm) plus manifest.json.
void write_dataset(const std::filesystem::path& dir, const TrainingDataset& data);
TrainingDataset read_dataset(const std::filesystem::path& dir);

nlohmann::json model_to_json(const HybridModel& model);
// Validates the result; throws InvalidArgument naming the offending field.
HybridModel model_from_json(const nlohmann::json& j);

std::string dump_json(const nlohmann::json& j);  // 2-space indent, trailing newline
void write_model(const std::filesystem::path& path, const HybridModel& model);
HybridModel read_model(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace hopf
