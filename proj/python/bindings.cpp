#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "convgot/commands.hpp"
#include "convgot/digest.hpp"
#include "convgot/errors.hpp"
#include "convgot/metrics.hpp"

namespace py = pybind11;
using namespace convgot;

namespace {

EngineConfig make_config(const std::optional<std::string>& ini, const std::vector<std::string>& overrides) {
  EngineConfig cfg;
  if (ini) {
    std::istringstream in(*ini);
    cfg = parse_engine_config(in);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  validate(cfg);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "convgot native core";
  m.attr("__version__") = "0.1.0";

  auto config_error = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", config_error.ptr());
  auto data_error = py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", data_error.ptr());
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("canonical_config", [](const std::optional<std::string>& ini, const std::vector<std::string>& overrides) {
    return canonical_ini(make_config(ini, overrides));
  }, py::arg("ini") = py::none(), py::arg("overrides") = std::vector<std::string>{});
  m.def("config_hash", [](const std::optional<std::string>& ini, const std::vector<std::string>& overrides) {
    return config_hash(make_config(ini, overrides));
  }, py::arg("ini") = py::none(), py::arg("overrides") = std::vector<std::string>{});
  m.def("sha256", [](const std::string& s) { return sha256_hex(s); });

  m.def(
      "synth",
      [](const fs::path& out_dir, std::optional<std::uint64_t> seed, std::size_t dialogues, std::int64_t duration,
         const std::optional<std::string>& ini, const std::vector<std::string>& overrides) {
        const EngineConfig cfg = make_config(ini, overrides);
        SynthOptions so;
        so.scenario.seed = seed.value_or(cfg.seed);
        so.scenario.dialogues = dialogues;
        so.scenario.duration = duration;
        py::gil_scoped_release release;
        cmd_synth(cfg, so, out_dir);
      },
      py::arg("out_dir"), py::arg("seed") = py::none(), py::arg("dialogues") = 200, py::arg("duration") = 60,
      py::arg("ini") = py::none(), py::arg("overrides") = std::vector<std::string>{});

  auto trainer = [&m](const char* name, void (*fn)(const EngineConfig&, const fs::path&, const fs::path&)) {
    m.def(
        name,
        [fn](const fs::path& data_dir, const fs::path& out_dir, const std::optional<std::string>& ini,
             const std::vector<std::string>& overrides) {
          const EngineConfig cfg = make_config(ini, overrides);
          py::gil_scoped_release release;
          fn(cfg, data_dir, out_dir);
        },
        py::arg("data_dir"), py::arg("out_dir"), py::arg("ini") = py::none(),
        py::arg("overrides") = std::vector<std::string>{});
  };
  trainer("train_perceiver", &cmd_train_perceiver);
  trainer("train_selector", &cmd_train_selector);
  trainer("train_decoder", &cmd_train_decoder);

  m.def(
      "run",
      [](const fs::path& input, const fs::path& out_dir, const std::optional<fs::path>& models, const std::string& split,
         const std::optional<std::string>& ini, const std::vector<std::string>& overrides) {
        const EngineConfig cfg = make_config(ini, overrides);
        RunOptions ro;
        ro.input = input;
        ro.models_dir = models;
        ro.split = split;
        py::gil_scoped_release release;
        cmd_run(cfg, ro, out_dir);
      },
      py::arg("input"), py::arg("out_dir"), py::arg("models") = py::none(), py::arg("split") = "all",
      py::arg("ini") = py::none(), py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "evaluate",
      [](const fs::path& run_dir, const fs::path& data_dir, const fs::path& out_dir, const std::optional<std::string>& ini,
         const std::vector<std::string>& overrides) {
        const EngineConfig cfg = make_config(ini, overrides);
        return cmd_eval(cfg, run_dir, data_dir, out_dir).dump();
      },
      py::arg("run_dir"), py::arg("data_dir"), py::arg("out_dir"), py::arg("ini") = py::none(),
      py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "stats",
      [](const fs::path& input, const fs::path& out_dir, const std::optional<std::string>& ini,
         const std::vector<std::string>& overrides) {
        const EngineConfig cfg = make_config(ini, overrides);
        return to_json(cmd_stats(cfg, input, out_dir)).dump();
      },
      py::arg("input"), py::arg("out_dir"), py::arg("ini") = py::none(),
      py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "auc",
      [](const std::vector<double>& scores, const std::vector<bool>& labels) {
        std::unique_ptr<bool[]> flags(new bool[labels.size()]);
        for (std::size_t i = 0; i < labels.size(); ++i) flags[i] = labels[i];
        return auc_binary(scores, std::span<const bool>(flags.get(), labels.size()));
      },
      py::arg("scores"), py::arg("labels"));
  m.def("hma", &hma, py::arg("agreements"));
  m.def(
      "event_table",
      [](const std::vector<bool>& ch0, const std::vector<bool>& ch1, double tick_seconds, std::int64_t min_silence) {
        EventConfig cfg;
        cfg.tick_seconds = tick_seconds;
        cfg.min_silence_ticks = min_silence;
        std::vector<std::array<bool, 2>> vad(ch0.size());
        if (ch1.size() != ch0.size()) throw ShapeError("channel lengths differ");
        for (std::size_t i = 0; i < ch0.size(); ++i) vad[i] = {ch0[i], ch1[i]};
        return to_json(event_statistics(vad, cfg)).dump();
      },
      py::arg("ch0"), py::arg("ch1"), py::arg("tick_seconds") = 1.0, py::arg("min_silence_ticks") = 1);
}
