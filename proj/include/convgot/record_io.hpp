#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convgot/stream.hpp"

namespace convgot {

enum class IngestMode { Strict, Lenient };

struct ParseIssue {
  std::size_t line = 0;
  std::string message;
};

struct ReadResult {
  std::vector<SecondRecord> records;
  std::vector<ParseIssue> skipped;  // lenient mode only
};

// Strict mode rejects unknown fields; both modes reject missing/mistyped required fields.
SecondRecord record_from_json(const nlohmann::json& j, IngestMode mode = IngestMode::Strict);
nlohmann::json record_to_json(const SecondRecord& r, bool include_gold = true);

GoldAnnotation gold_from_json(const nlohmann::json& j, IngestMode mode = IngestMode::Strict);
nlohmann::json gold_to_json(const GoldAnnotation& g);

// Parses JSON Lines; enforces strictly increasing t per audio_id. Strict mode throws
// DataError on the first bad line, lenient mode skips it and records the issue.
ReadResult read_records(std::istream& in, IngestMode mode = IngestMode::Strict);
ReadResult read_records_file(const std::filesystem::path& path, IngestMode mode = IngestMode::Strict);
void write_records(std::ostream& out, std::span<const SecondRecord> records, bool include_gold = true);

// Labels file: {"audio_id","t","high","low","anchors":[...],"rationale"} per line.
nlohmann::json label_line(const SecondRecord& r);
// Attaches labels to matching (audio_id, t) records; throws when a label has no record.
void attach_labels(std::vector<SecondRecord>& records, std::istream& labels);

// Groups records by audio_id preserving first-appearance order.
struct Dialogue {
  std::string audio_id;
  std::vector<SecondRecord> records;
};
std::vector<Dialogue> group_dialogues(std::span<const SecondRecord> records);

}  // namespace convgot
