#include "convgot/record_io.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "convgot/errors.hpp"

namespace convgot {
namespace {

using nlohmann::json;

const std::set<std::string, std::less<>> kRecordFields{"audio_id", "t", "speaker", "channel", "text",
                                                      "emb_acoustic", "emb_semantic", "vad", "sentence_end",
                                                      "padded", "gold"};
const std::set<std::string, std::less<>> kGoldFields{"high", "low", "anchors", "rationale"};

template <typename T>
T required(const json& j, const char* key) {
  if (!j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(std::string("field '") + key + "' has the wrong type");
  }
}

template <typename T>
T optional_field(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(std::string("field '") + key + "' has the wrong type");
  }
}

void reject_unknown(const json& j, const std::set<std::string, std::less<>>& known, const char* what) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw DataError(std::string("unknown ") + what + " field '" + key + "'");
  }
}

}  // namespace

GoldAnnotation gold_from_json(const json& j, IngestMode mode) {
  if (!j.is_object()) throw DataError("gold must be an object");
  if (mode == IngestMode::Strict) reject_unknown(j, kGoldFields, "gold");
  GoldAnnotation g;
  const auto high = required<std::string>(j, "high");
  const auto low = required<std::string>(j, "low");
  auto h = parse_high_act(high);
  auto l = parse_low_act(low);
  if (!h) throw DataError("unknown high-level act '" + high + "'");
  if (!l) throw DataError("unknown low-level act '" + low + "'");
  g.high = *h;
  g.low = *l;
  g.anchors = optional_field<std::vector<std::int64_t>>(j, "anchors", {});
  g.rationale = optional_field<std::string>(j, "rationale", "");
  return g;
}

json gold_to_json(const GoldAnnotation& g) {
  return {{"high", to_string(g.high)}, {"low", to_string(g.low)}, {"anchors", g.anchors}, {"rationale", g.rationale}};
}

SecondRecord record_from_json(const json& j, IngestMode mode) {
  if (!j.is_object()) throw DataError("record must be a JSON object");
  if (mode == IngestMode::Strict) reject_unknown(j, kRecordFields, "record");
  SecondRecord r;
  r.audio_id = required<std::string>(j, "audio_id");
  r.t = required<std::int64_t>(j, "t");
  if (r.t < 0) throw DataError("tick must be nonnegative");
  r.speaker = required<int>(j, "speaker");
  if (r.speaker < 0) throw DataError("speaker must be nonnegative");
  if (j.contains("channel") && !j.at("channel").is_null()) r.channel = required<int>(j, "channel");
  r.text = optional_field<std::string>(j, "text", "");
  r.emb_acoustic = required<std::vector<double>>(j, "emb_acoustic");
  r.emb_semantic = required<std::vector<double>>(j, "emb_semantic");
  const auto vad = optional_field<std::vector<bool>>(j, "vad", {false, false});
  if (vad.size() != 2) throw DataError("vad must hold exactly two booleans");
  r.vad = {vad[0], vad[1]};
  r.sentence_end = optional_field<bool>(j, "sentence_end", false);
  r.padded = optional_field<bool>(j, "padded", false);
  if (j.contains("gold") && !j.at("gold").is_null()) r.gold = gold_from_json(j.at("gold"), mode);
  return r;
}

json record_to_json(const SecondRecord& r, bool include_gold) {
  json j = {{"audio_id", r.audio_id},
            {"t", r.t},
            {"speaker", r.speaker},
            {"text", r.text},
            {"emb_acoustic", r.emb_acoustic},
            {"emb_semantic", r.emb_semantic},
            {"vad", {r.vad[0], r.vad[1]}},
            {"sentence_end", r.sentence_end}};
  if (r.channel) j["channel"] = *r.channel;
  if (r.padded) j["padded"] = true;
  if (include_gold && r.gold) j["gold"] = gold_to_json(*r.gold);
  return j;
}

ReadResult read_records(std::istream& in, IngestMode mode) {
  ReadResult out;
  std::unordered_map<std::string, std::int64_t> last_tick;
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> dims;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw DataError(std::string("invalid JSON: ") + e.what());
      }
      SecondRecord r = record_from_json(j, mode);
      if (auto it = last_tick.find(r.audio_id); it != last_tick.end() && r.t <= it->second) {
        throw DataError("tick " + std::to_string(r.t) + " for '" + r.audio_id + "' is not after tick " +
                        std::to_string(it->second));
      }
      const std::pair dim{r.emb_acoustic.size(), r.emb_semantic.size()};
      if (auto it = dims.find(r.audio_id); it != dims.end() && it->second != dim) {
        throw DataError("embedding dimensions changed within '" + r.audio_id + "'");
      }
      dims[r.audio_id] = dim;
      last_tick[r.audio_id] = r.t;
      out.records.push_back(std::move(r));
    } catch (const DataError& e) {
      if (mode == IngestMode::Strict) throw DataError("line " + std::to_string(lineno) + ": " + e.what());
      out.skipped.push_back({lineno, e.what()});
    }
  }
  return out;
}

ReadResult read_records_file(const std::filesystem::path& path, IngestMode mode) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_records(in, mode);
}

void write_records(std::ostream& out, std::span<const SecondRecord> records, bool include_gold) {
  for (const auto& r : records) out << record_to_json(r, include_gold).dump() << '\n';
}

json label_line(const SecondRecord& r) {
  if (!r.gold) throw DataError("record " + r.audio_id + "@" + std::to_string(r.t) + " has no gold labels");
  json j = {{"audio_id", r.audio_id}, {"t", r.t}};
  j.update(gold_to_json(*r.gold));
  return j;
}

void attach_labels(std::vector<SecondRecord>& records, std::istream& labels) {
  std::map<std::pair<std::string, std::int64_t>, std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i) index[{records[i].audio_id, records[i].t}] = i;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(labels, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      const auto id = required<std::string>(j, "audio_id");
      const auto t = required<std::int64_t>(j, "t");
      auto it = index.find({id, t});
      if (it == index.end()) throw DataError("label for unknown record " + id + "@" + std::to_string(t));
      json g = j;
      g.erase("audio_id");
      g.erase("t");
      records[it->second].gold = gold_from_json(g, IngestMode::Strict);
    } catch (const json::exception& e) {
      throw DataError("labels line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("labels line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::vector<Dialogue> group_dialogues(std::span<const SecondRecord> records) {
  std::vector<Dialogue> out;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& r : records) {
    auto [it, inserted] = slot.emplace(r.audio_id, out.size());
    if (inserted) out.push_back(Dialogue{r.audio_id, {}});
    out[it->second].records.push_back(r);
  }
  return out;
}

}  // namespace convgot
