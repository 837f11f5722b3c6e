#include "epmc/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace epmc {

namespace fs = std::filesystem;

void write_matrix_csv(const fs::path& path, const Matrix& matrix) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  char buffer[64];
  for (std::int64_t i = 0; i < matrix.rows(); ++i) {
    for (std::int64_t j = 0; j < matrix.cols(); ++j) {
      std::snprintf(buffer, sizeof(buffer), "%.17g", matrix(i, j));
      if (j) out << ',';
      out << buffer;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Matrix read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open sample file: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
    if (!rows.empty() && rows.front().size() != row.size())
      throw std::runtime_error("ragged csv row in " + path.string());
    rows.push_back(std::move(row));
  }
  Matrix matrix(static_cast<std::int64_t>(rows.size()),
                rows.empty() ? 0 : static_cast<std::int64_t>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      matrix(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)) = rows[i][j];
  return matrix;
}

fs::path meta_path(const fs::path& data_path) {
  fs::path p = data_path;
  p.replace_extension(".meta.json");
  return p;
}

void write_meta(const fs::path& data_path, const nlohmann::json& meta) {
  const fs::path p = meta_path(data_path);
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot open for writing: " + p.string());
  out << meta.dump(2) << '\n';
}

nlohmann::json read_meta(const fs::path& data_path) {
  const fs::path p = meta_path(data_path);
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open metadata: " + p.string());
  nlohmann::json meta;
  in >> meta;
  return meta;
}

void write_dataset(const fs::path& dir, const Dataset& dataset, const nlohmann::json& model_spec) {
  fs::create_directories(dir);
  const fs::path data = dir / "dataset.csv";
  write_matrix_csv(data, dataset.records);
  nlohmann::json meta{{"id", dataset.id},
                      {"model_id", dataset.model_id},
                      {"n", dataset.size()},
                      {"record_width", dataset.records.cols()},
                      {"seed", dataset.seed},
                      {"model", model_spec}};
  if (dataset.true_params.size() > 0) {
    std::vector<double> truth(dataset.true_params.data(),
                              dataset.true_params.data() + dataset.true_params.size());
    meta["true_params"] = truth;
  }
  write_meta(data, meta);
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path data = dir / "dataset.csv";
  Dataset dataset;
  dataset.records = read_matrix_csv(data);
  const nlohmann::json meta = read_meta(data);
  dataset.id = meta.value("id", data.string());
  dataset.model_id = meta.value("model_id", "");
  dataset.seed = meta.value("seed", 0ULL);
  if (meta.contains("true_params")) {
    const auto& truth = meta.at("true_params");
    dataset.true_params.resize(static_cast<Eigen::Index>(truth.size()));
    for (std::size_t j = 0; j < truth.size(); ++j)
      dataset.true_params[static_cast<Eigen::Index>(j)] = truth.at(j).get<double>();
  }
  return dataset;
}

nlohmann::json read_dataset_model_spec(const fs::path& dir) {
  const nlohmann::json meta = read_meta(dir / "dataset.csv");
  require(meta.contains("model"), "dataset metadata has no model spec: " + dir.string());
  return meta.at("model");
}

fs::path shard_path(const fs::path& dir, int shard_index, int machines) {
  return dir / ("shard_" + std::to_string(shard_index) + "_of_" + std::to_string(machines) +
                ".csv");
}

void write_shard(const fs::path& dir, const DataShard& shard) {
  fs::create_directories(dir);
  const fs::path path = shard_path(dir, shard.shard_index, shard.machines);
  write_matrix_csv(path, shard.records);
  write_meta(path, nlohmann::json{{"parent_id", shard.parent_id},
                                  {"shard_index", shard.shard_index},
                                  {"machines", shard.machines},
                                  {"rows", shard.size()}});
}

DataShard read_shard(const fs::path& dir, int shard_index, int machines) {
  const fs::path path = shard_path(dir, shard_index, machines);
  DataShard shard;
  shard.records = read_matrix_csv(path);
  const nlohmann::json meta = read_meta(path);
  shard.parent_id = meta.value("parent_id", "");
  shard.shard_index = meta.value("shard_index", shard_index);
  shard.machines = meta.value("machines", machines);
  return shard;
}

fs::path subposterior_path(const fs::path& dir, int shard_index, int machines) {
  return dir / ("subpost_" + std::to_string(shard_index) + "_of_" + std::to_string(machines) +
                ".csv");
}

void write_subposterior(const fs::path& dir, const SubposteriorSamples& samples) {
  fs::create_directories(dir);
  const fs::path path = subposterior_path(dir, samples.shard_index, samples.machines);
  write_matrix_csv(path, samples.samples);
  write_meta(path, nlohmann::json{{"shard_index", samples.shard_index},
                                  {"machines", samples.machines},
                                  {"seed", samples.seed},
                                  {"model_id", samples.model_id},
                                  {"accept_rate", samples.accept_rate},
                                  {"wall_seconds", samples.wall_seconds},
                                  {"rows", samples.samples.rows()},
                                  {"dim", samples.samples.cols()}});
}

SubposteriorSamples read_subposterior(const fs::path& path) {
  SubposteriorSamples samples;
  samples.samples = read_matrix_csv(path);
  const nlohmann::json meta = read_meta(path);
  samples.shard_index = meta.value("shard_index", 1);
  samples.machines = meta.value("machines", 1);
  samples.seed = meta.value("seed", 0ULL);
  samples.model_id = meta.value("model_id", "");
  samples.accept_rate = meta.value("accept_rate", 0.0);
  samples.wall_seconds = meta.value("wall_seconds", 0.0);
  return samples;
}

}  // namespace epmc
