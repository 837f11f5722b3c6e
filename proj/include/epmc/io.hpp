#ifndef EPMC_IO_HPP
#define EPMC_IO_HPP

#include "epmc/common.hpp"
#include "epmc/model.hpp"
#include "epmc/sampler.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace epmc {

/// Comma-separated rows, one record/sample per line, full double precision.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& matrix);
Matrix read_matrix_csv(const std::filesystem::path& path);

/// Sidecar metadata lives next to the data as `<stem>.meta.json`.
std::filesystem::path meta_path(const std::filesystem::path& data_path);
void write_meta(const std::filesystem::path& data_path, const nlohmann::json& meta);
nlohmann::json read_meta(const std::filesystem::path& data_path);

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                   const nlohmann::json& model_spec);
Dataset read_dataset(const std::filesystem::path& dir);
nlohmann::json read_dataset_model_spec(const std::filesystem::path& dir);

std::filesystem::path shard_path(const std::filesystem::path& dir, int shard_index, int machines);
void write_shard(const std::filesystem::path& dir, const DataShard& shard);
DataShard read_shard(const std::filesystem::path& dir, int shard_index, int machines);

/// File name convention for per-machine sample files.
std::filesystem::path subposterior_path(const std::filesystem::path& dir, int shard_index,
                                        int machines);
void write_subposterior(const std::filesystem::path& dir, const SubposteriorSamples& samples);
SubposteriorSamples read_subposterior(const std::filesystem::path& path);

}  // namespace epmc

#endif
