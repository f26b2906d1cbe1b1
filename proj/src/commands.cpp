#include "convgot/commands.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "convgot/checkpoint.hpp"
#include "convgot/digest.hpp"
#include "convgot/errors.hpp"
#include "convgot/random.hpp"
#include "convgot/record_io.hpp"
#include "convgot/text.hpp"

namespace convgot {

using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

void write_jsonl(const fs::path& path, const std::vector<json>& lines) {
  auto out = open_out(path);
  for (const auto& l : lines) out << l.dump() << '\n';
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("missing input " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.filename().string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw UsageError("missing input " + p.string());
}

void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<SecondRecord> read_stream(const fs::path& path, const EngineConfig& cfg, RunLog* log = nullptr) {
  require_file(path);
  ReadResult rr = read_records_file(path, cfg.strict ? IngestMode::Strict : IngestMode::Lenient);
  if (log) {
    for (const auto& s : rr.skipped) log->skipped.push_back("line " + std::to_string(s.line) + ": " + s.message);
  }
  return std::move(rr.records);
}

std::vector<SecondRecord> keep_part(std::vector<SecondRecord> records, const fs::path& split_path,
                                    const std::string& part) {
  if (part == "all") return records;
  const DatasetSplit s = read_split(split_path);
  const auto& ids = s.part(part);
  const std::set<std::string> keep(ids.begin(), ids.end());
  std::erase_if(records, [&](const SecondRecord& r) { return !keep.contains(r.audio_id); });
  return records;
}

TrainOptions perceiver_options(const EngineConfig& cfg) {
  TrainOptions o;
  o.epochs = cfg.perceiver_train.epochs;
  o.batch_size = cfg.perceiver_train.batch_size;
  o.optimizer = cfg.perceiver_train.optimizer;
  o.seed = derive_seed(cfg.seed, "perceiver-train");
  return o;
}

}  // namespace

// ---- manifest

json write_manifest(const fs::path& out_dir, const std::string& command, const EngineConfig& cfg,
                    const std::vector<std::string>& files, const std::vector<std::string>& excluded) {
  std::vector<std::string> sorted = files;
  std::sort(sorted.begin(), sorted.end());
  json entries = json::array();
  for (const auto& f : sorted) {
    const fs::path p = out_dir / f;
    require_file(p);
    entries.push_back({{"path", f}, {"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}});
  }
  std::vector<std::string> ex = excluded;
  std::sort(ex.begin(), ex.end());
  json m = {{"command", command},
            {"config_hash", config_hash(cfg)},
            {"seed", cfg.seed},
            {"files", entries},
            {"excluded", ex}};
  write_text(out_dir / "manifest.json", m.dump(2) + "\n");
  return m;
}

// ---- split

const std::vector<std::string>& DatasetSplit::part(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw UsageError("unknown split part '" + name + "' (train, val, test, all)");
}

DatasetSplit read_split(const fs::path& path) {
  require_file(path);
  const json j = read_json_file(path);
  DatasetSplit s;
  try {
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError("bad split file " + path.string() + ": " + e.what());
  }
  return s;
}

// ---- synth

void cmd_synth(const EngineConfig& cfg, const SynthOptions& opts, const fs::path& out_dir) {
  validate(opts.scenario);
  prepare_out(out_dir);
  const SynthCorpus corpus = synth_stream(opts.scenario);

  std::vector<SecondRecord> all;
  for (const auto& d : corpus.dialogues) all.insert(all.end(), d.records.begin(), d.records.end());
  {
    auto out = open_out(out_dir / kStreamFile);
    write_records(out, all, false);
  }
  {
    std::vector<json> lines;
    for (const auto& r : all) lines.push_back(label_line(r));
    write_jsonl(out_dir / kLabelsFile, lines);
  }
  const SplitIndices idx = split(corpus.dialogues.size(), opts.ratios, opts.scenario.seed);
  auto ids = [&](const std::vector<std::size_t>& v) {
    std::vector<std::string> out;
    for (auto i : v) out.push_back(corpus.dialogues[i].audio_id);
    return out;
  };
  write_text(out_dir / kSplitFile,
             json{{"ratios", opts.ratios}, {"train", ids(idx.train)}, {"val", ids(idx.val)}, {"test", ids(idx.test)}}
                     .dump(2) +
                 "\n");
  write_text(out_dir / "scenario.json", to_json(opts.scenario).dump(2) + "\n");
  write_manifest(out_dir, "synth", cfg, {kStreamFile, kLabelsFile, kSplitFile, "scenario.json"});
}

std::vector<SecondRecord> load_labeled(const fs::path& data_dir, const std::string& part) {
  const fs::path stream = data_dir / kStreamFile, labels = data_dir / kLabelsFile;
  require_file(stream);
  require_file(labels);
  std::vector<SecondRecord> records = read_records_file(stream).records;
  std::ifstream in(labels);
  attach_labels(records, in);
  records = keep_part(std::move(records), data_dir / kSplitFile, part);
  for (const auto& r : records) {
    if (!r.gold) throw DataError("record " + r.audio_id + "@" + std::to_string(r.t) + " has no label line");
  }
  return records;
}

// ---- training

void cmd_train_perceiver(const EngineConfig& cfg, const fs::path& data_dir, const fs::path& out_dir) {
  validate(cfg);
  const auto records = load_labeled(data_dir, "train");
  std::vector<PerceiverSample> samples;
  for (const auto& d : group_dialogues(records)) {
    auto s = make_perceiver_samples(d.records, cfg.perceiver.context);
    samples.insert(samples.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  if (samples.empty()) throw DataError("train split is empty");
  prepare_out(out_dir);
  PerceiverModel model = init_perceiver(cfg.perceiver, derive_seed(cfg.seed, "perceiver"));
  std::vector<json> log;
  train_perceiver(model, samples, perceiver_options(cfg),
                  [&](std::size_t epoch, double loss) { log.push_back({{"epoch", epoch}, {"loss", loss}}); });
  write_json_file(out_dir / kPerceiverFile, perceiver_to_json(model));
  write_jsonl(out_dir / "perceiver_log.jsonl", log);
  write_manifest(out_dir, "train-perceiver", cfg, {kPerceiverFile, "perceiver_log.jsonl"});
}

void cmd_train_selector(const EngineConfig& cfg, const fs::path& data_dir, const fs::path& out_dir) {
  validate(cfg);
  const auto records = load_labeled(data_dir, "train");
  std::vector<SelectorSample> samples;
  for (const auto& d : group_dialogues(records)) {
    auto s = make_selector_samples(d.records, cfg.selector, cfg.graph());
    samples.insert(samples.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  if (samples.empty()) throw DataError("train split has no ticks with candidates");
  prepare_out(out_dir);
  SelectorModel model = init_selector(cfg.selector, derive_seed(cfg.seed, "selector"));
  SelectorTrainOptions o;
  o.epochs = cfg.selector_train.epochs;
  o.batch_size = cfg.selector_train.batch_size;
  o.optimizer = cfg.selector_train.optimizer;
  o.seed = derive_seed(cfg.seed, "selector-train");
  std::vector<json> log;
  train_selector(model, samples, o, [&](std::size_t epoch, const SelectorLoss& l) {
    log.push_back({{"epoch", epoch}, {"loss", l.total}, {"wbce", l.wbce}, {"count", l.count}, {"rank", l.rank}});
  });
  write_json_file(out_dir / kSelectorFile, selector_to_json(model));
  write_jsonl(out_dir / "selector_log.jsonl", log);
  write_manifest(out_dir, "train-selector", cfg, {kSelectorFile, "selector_log.jsonl"});
}

std::vector<GoldPair> gold_pairs(std::span<const SecondRecord> dialogue, const EngineConfig& cfg) {
  GotGraph graph(cfg.graph());
  std::vector<GoldPair> out;
  for (const auto& r : dialogue) {
    if (!r.gold) throw DataError("record " + r.audio_id + "@" + std::to_string(r.t) + " has no gold labels");
    graph.observe(r, SpeechActPair::from_labels(r.gold->high, r.gold->low));
    if (r.padded || r.gold->rationale.empty()) continue;
    SelectionResult sel;
    sel.t = r.t;
    sel.anchors = r.gold->anchors;
    out.push_back({linearize(build_condition(graph, sel, cfg.recent)), r.gold->rationale});
  }
  return out;
}

void cmd_train_decoder(const EngineConfig& cfg, const fs::path& data_dir, const fs::path& out_dir) {
  validate(cfg);
  const auto records = load_labeled(data_dir, "train");
  std::vector<GoldPair> all;
  for (const auto& d : group_dialogues(records)) {
    auto p = gold_pairs(d.records, cfg);
    all.insert(all.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  std::erase_if(all, [&](const GoldPair& p) {
    return tokenize_whitespace(p.rationale).size() + 1 > cfg.decoder.max_target;
  });
  if (all.empty()) throw DataError("no usable (chain, rationale) pairs in the train split");
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, "decoder-pairs"));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(order.size(), cfg.decoder_pairs));
  std::sort(order.begin(), order.end());

  std::vector<std::string> texts;
  for (auto i : order) {
    texts.push_back(all[i].chain.text);
    texts.push_back(all[i].rationale);
  }
  prepare_out(out_dir);
  Seq2SeqModel model = init_seq2seq(cfg.decoder, Vocabulary::build(texts), derive_seed(cfg.seed, "decoder"));
  std::vector<Seq2SeqPair> pairs;
  for (auto i : order) pairs.push_back({encode_source(model, all[i].chain), encode_target(model, all[i].rationale)});
  Seq2SeqTrainOptions o;
  o.epochs = cfg.decoder_train.epochs;
  o.batch_size = cfg.decoder_train.batch_size;
  o.optimizer = cfg.decoder_train.optimizer;
  o.seed = derive_seed(cfg.seed, "decoder-train");
  std::vector<json> log;
  train_seq2seq(model, pairs, o, [&](std::size_t epoch, double loss) { log.push_back({{"epoch", epoch}, {"nll", loss}}); });
  log.push_back({{"pairs", pairs.size()}, {"available", all.size()}, {"vocab", model.vocab.size()}});
  write_json_file(out_dir / kDecoderFile, seq2seq_to_json(model));
  write_jsonl(out_dir / "decoder_log.jsonl", log);
  write_manifest(out_dir, "train-decoder", cfg, {kDecoderFile, "decoder_log.jsonl"});
}

// ---- run

EngineModels load_models(const EngineConfig& cfg, const std::optional<fs::path>& models_dir) {
  EngineModels m;
  if (models_dir) {
    const fs::path p = *models_dir / kPerceiverFile, s = *models_dir / kSelectorFile;
    require_file(p);
    require_file(s);
    m.perceiver = perceiver_from_json(read_json_file(p));
    m.selector = selector_from_json(read_json_file(s));
  } else {
    m.perceiver = init_perceiver(cfg.perceiver, derive_seed(cfg.seed, "perceiver"));
    m.selector = init_selector(cfg.selector, derive_seed(cfg.seed, "selector"));
  }
  switch (cfg.backend) {
    case BackendKind::Template:
      m.backend = std::make_shared<TemplateBackend>();
      break;
    case BackendKind::Trainable: {
      if (!models_dir) throw UsageError("the trainable backend needs --models with decoder.json");
      const fs::path d = *models_dir / kDecoderFile;
      require_file(d);
      m.backend = std::make_shared<TrainableBackend>(std::make_shared<Seq2SeqModel>(seq2seq_from_json(read_json_file(d))));
      break;
    }
    case BackendKind::Remote:
      m.backend = std::make_shared<RemoteBackend>(remote_config_from_env(cfg.remote));
      break;
  }
  return m;
}

void cmd_run(const EngineConfig& cfg, const RunOptions& opts, const fs::path& out_dir) {
  validate(cfg);
  const fs::path stream = fs::is_directory(opts.input) ? opts.input / kStreamFile : opts.input;
  RunLog log;
  auto records = keep_part(read_stream(stream, cfg, &log), stream.parent_path() / kSplitFile, opts.split);
  const EngineModels models = load_models(cfg, opts.models_dir);
  prepare_out(out_dir);

  auto pred = open_out(out_dir / "predictions.jsonl");
  auto sel = open_out(out_dir / "selections.jsonl");
  auto rat = open_out(out_dir / "rationales.jsonl");
  auto lat = open_out(out_dir / "latency.jsonl");
  std::map<std::string, std::vector<double>> stages;
  run_stream(
      cfg, models, records,
      [&](const TickOutput& o) {
        pred << prediction_line(o).dump() << '\n';
        sel << selection_line(o).dump() << '\n';
        rat << rationale_line(o).dump() << '\n';
        lat << timing_line(o).dump() << '\n';
        stages["predict"].push_back(o.timings.predict_ms);
        stages["graph"].push_back(o.timings.graph_ms);
        stages["select"].push_back(o.timings.select_ms);
        stages["rationale"].push_back(o.timings.rationale_ms);
        stages["total"].push_back(o.timings.total_ms);
      },
      &log);
  for (auto* f : {&pred, &sel, &rat, &lat}) {
    f->close();
    if (!*f) throw DataError("write failed in " + out_dir.string());
  }

  json summary = json::object();
  if (!stages.empty()) {
    for (const auto& [name, v] : stages) summary[name] = to_json(latency_profile(v));
    double sum = 0.0, total = 0.0;
    for (const char* s : {"predict", "graph", "select", "rationale"})
      for (double x : stages[s]) sum += x;
    for (double x : stages["total"]) total += x;
    summary["stage_sum_over_total"] = total > 0.0 ? sum / total : 1.0;
  }
  write_text(out_dir / "latency_summary.json", summary.dump(2) + "\n");

  std::vector<std::string> files{"predictions.jsonl", "selections.jsonl", "rationales.jsonl"};
  if (!log.skipped.empty()) {
    std::ostringstream s;
    for (const auto& l : log.skipped) s << l << '\n';
    write_text(out_dir / "skipped.txt", s.str());
    files.push_back("skipped.txt");
  }
  write_manifest(out_dir, "run", cfg, files, {"latency.jsonl", "latency_summary.json"});
}

// ---- eval

double AnchorScore::precision() const { return tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
double AnchorScore::recall() const { return tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
double AnchorScore::f1() const {
  const double p = precision(), r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

namespace {

using TickKey = std::pair<std::string, std::int64_t>;

std::map<TickKey, json> index_lines(const fs::path& path) {
  std::map<TickKey, json> out;
  for (auto& j : read_jsonl(path)) {
    try {
      TickKey k{j.at("audio_id").get<std::string>(), j.at("t").get<std::int64_t>()};
      out.emplace(std::move(k), std::move(j));
    } catch (const json::exception& e) {
      throw DataError(path.filename().string() + ": " + e.what());
    }
  }
  return out;
}

ActDistribution read_dist(const json& j) {
  ActDistribution d{};
  const auto v = j.get<std::vector<double>>();
  if (v.size() != kNumActs) throw ShapeError("distribution of length " + std::to_string(v.size()));
  std::copy(v.begin(), v.end(), d.begin());
  return d;
}

}  // namespace

json cmd_eval(const EngineConfig& cfg, const fs::path& run_dir, const fs::path& data_dir, const fs::path& out_dir) {
  const auto preds = index_lines(run_dir / "predictions.jsonl");
  const auto sels = index_lines(run_dir / "selections.jsonl");
  const auto rats = index_lines(run_dir / "rationales.jsonl");
  const auto records = load_labeled(data_dir, "all");
  std::map<TickKey, const SecondRecord*> gold;
  for (const auto& r : records) gold[{r.audio_id, r.t}] = &r;

  EvalAccumulator acc;
  AnchorScore anchors;
  std::int64_t exact = 0, rationales = 0;
  std::set<std::string> dialogues;
  for (const auto& [key, p] : preds) {
    auto g = gold.find(key);
    if (g == gold.end()) throw DataError("prediction for unlabeled tick " + key.first + "@" + std::to_string(key.second));
    const GoldAnnotation& ga = *g->second->gold;
    SpeechActPair sp;
    try {
      sp = SpeechActPair::from_distributions(read_dist(p.at("p_high")), read_dist(p.at("p_low")));
    } catch (const json::exception& e) {
      throw DataError(std::string("predictions.jsonl: ") + e.what());
    }
    acc.add(sp, ga.high, ga.low);
    dialogues.insert(key.first);

    if (auto s = sels.find(key); s != sels.end()) {
      const auto picked = s->second.at("anchors").get<std::vector<std::int64_t>>();
      const std::set<std::int64_t> want(ga.anchors.begin(), ga.anchors.end()), got(picked.begin(), picked.end());
      for (auto id : got) (want.contains(id) ? anchors.tp : anchors.fp) += 1;
      for (auto id : want)
        if (!got.contains(id)) anchors.fn += 1;
    }
    if (auto r = rats.find(key); r != rats.end() && !ga.rationale.empty()) {
      ++rationales;
      exact += r->second.at("text").get<std::string>() == ga.rationale;
    }
  }
  if (acc.ticks() == 0) throw DataError("no predictions to evaluate in " + run_dir.string());

  MetricReport report = acc.report();
  std::vector<EventTable> tables;
  for (const auto& d : group_dialogues(records)) {
    if (!dialogues.contains(d.audio_id)) continue;
    std::vector<std::array<bool, 2>> vad;
    for (const auto& r : d.records) vad.push_back(r.vad);
    tables.push_back(event_statistics(vad, cfg.events()));
  }
  report.events = merge_events(tables, cfg.events());

  json j = to_json(report);
  j["anchors"] = {{"precision", anchors.precision()},
                  {"recall", anchors.recall()},
                  {"f1", anchors.f1()},
                  {"tp", anchors.tp},
                  {"fp", anchors.fp},
                  {"fn", anchors.fn}};
  j["rationale_exact_match"] = rationales > 0 ? static_cast<double>(exact) / static_cast<double>(rationales) : 0.0;
  j["rationale_count"] = rationales;
  prepare_out(out_dir);
  write_text(out_dir / "report.json", j.dump(2) + "\n");
  write_manifest(out_dir, "eval", cfg, {"report.json"});
  return j;
}

// ---- stats

std::vector<std::array<bool, 2>> read_vad_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("missing input " + path.string());
  std::vector<std::array<bool, 2>> out;
  std::string line;
  std::size_t n = 0;
  auto bit = [&](const std::string& s) {
    if (s == "0") return false;
    if (s == "1") return true;
    throw DataError(path.filename().string() + " line " + std::to_string(n) + ": expected 0 or 1, got '" + s + "'");
  };
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (n == 1 && line.find_first_not_of("01, ") != std::string::npos) continue;  // header
    std::string a, b;
    std::istringstream s(line);
    if (!std::getline(s, a, ',') || !std::getline(s, b) || a.empty() || b.empty())
      throw DataError(path.filename().string() + " line " + std::to_string(n) + ": expected two columns");
    auto trim = [](std::string x) {
      x.erase(0, x.find_first_not_of(' '));
      x.erase(x.find_last_not_of(' ') + 1);
      return x;
    };
    out.push_back({bit(trim(a)), bit(trim(b))});
  }
  return out;
}

EventTable cmd_stats(const EngineConfig& cfg, const fs::path& input, const fs::path& out_dir) {
  validate(cfg);
  fs::path src = fs::is_directory(input) ? input / kStreamFile : input;
  require_file(src);
  EventTable table;
  if (src.extension() == ".csv") {
    table = event_statistics(read_vad_csv(src), cfg.events());
  } else {
    const auto records = read_stream(src, cfg);
    std::vector<EventTable> tables;
    for (const auto& d : group_dialogues(records)) {
      std::vector<std::array<bool, 2>> vad;
      for (const auto& r : d.records) vad.push_back(r.vad);
      tables.push_back(event_statistics(vad, cfg.events()));
    }
    table = merge_events(tables, cfg.events());
  }
  prepare_out(out_dir);
  write_text(out_dir / "events.json", to_json(table).dump(2) + "\n");
  write_text(out_dir / "events.csv", events_csv(table));
  write_manifest(out_dir, "stats", cfg, {"events.json", "events.csv"});
  return table;
}

}  // namespace convgot
