#include "convgot/checkpoint.hpp"

#include <fstream>

#include "convgot/errors.hpp"

namespace convgot {

nlohmann::json params_to_json(const ParamSet& params) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, p] : params) {
    out[name] = {{"shape", {p.value.rows(), p.value.cols()}}, {"data", p.value.storage()}};
  }
  return out;
}

namespace {

Matrix matrix_from_json(const std::string& name, const nlohmann::json& entry) {
  if (!entry.contains("shape") || !entry.contains("data")) throw DataError("checkpoint entry '" + name + "' malformed");
  const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2) throw DataError("checkpoint entry '" + name + "' must be 2-D");
  return Matrix(shape[0], shape[1], entry.at("data").get<std::vector<double>>());
}

}  // namespace

ParamSet params_from_json(const nlohmann::json& j) {
  ParamSet params;
  for (const auto& [name, entry] : j.items()) params.add(name, matrix_from_json(name, entry));
  return params;
}

void load_params_into(ParamSet& params, const nlohmann::json& j) {
  for (auto& [name, p] : params) {
    if (!j.contains(name)) throw DataError("checkpoint is missing parameter '" + name + "'");
    Matrix m = matrix_from_json(name, j.at(name));
    if (!m.same_shape(p.value)) throw ShapeError("checkpoint parameter '" + name + "' has the wrong shape");
    p.value = std::move(m);
  }
  params.zero_grad();
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace convgot
