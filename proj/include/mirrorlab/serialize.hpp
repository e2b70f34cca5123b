#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "mirrorlab/drift.hpp"
#include "mirrorlab/esmeta.hpp"
#include "mirrorlab/trainer.hpp"

namespace mirrorlab {

using json = nlohmann::json;

// ---- JSON: specs and configs --------------------------------------------

json mlp_spec_to_json(const MlpSpec& spec);
MlpSpec mlp_spec_from_json(const json& j);

// weights file: {"spec": ..., "data": [...]}; field order documented in the
// README; doubles round-trip exactly.
json mlp_weights_to_json(const MlpSpec& spec, const MlpWeights& w);
void mlp_weights_from_json(const json& j, MlpSpec& spec, MlpWeights& w);

json drift_spec_to_json(const DriftSpec& spec);
DriftSpec drift_spec_from_json(const json& j);

json env_spec_to_json(const EnvSpec& spec);
EnvSpec env_spec_from_json(const json& j);

json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const json& j);

json es_config_to_json(const EsConfig& cfg);
EsConfig es_config_from_json(const json& j);

json validity_report_to_json(const ValidityReport& rep);

json run_record_to_json(const RunRecord& rec);
RunRecord run_record_from_json(const json& j);

json meta_checkpoint_to_json(const EsConfig& cfg, const MetaCheckpoint& ckpt);
void meta_checkpoint_from_json(const json& j, EsConfig& cfg,
                               MetaCheckpoint& ckpt);

void write_meta_checkpoint(const std::string& path, const EsConfig& cfg,
                           const MetaCheckpoint& ckpt);
void read_meta_checkpoint(const std::string& path, EsConfig& cfg,
                          MetaCheckpoint& ckpt);

json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j);

// ---- CSV ------------------------------------------------------------------

std::string format_full(double v);  // %.17g, round-trip exact
std::string format_sci9(double v);  // scientific, 9 significant digits

void write_metrics_csv(const RunRecord& rec, std::ostream& os);

// Per-iteration mean and standard error (sample std / sqrt(N)) across runs.
void write_summary_csv(const std::vector<RunRecord>& runs, std::ostream& os);

// Header row of r values, first column of A values, cells = A - d drift/dr.
void write_heatmap_csv(const HeatmapData& data, std::ostream& os);
// Fixed-advantage slices at A in {-3, -1, 1, 3}.
void write_slices_csv(const DriftSpec& spec, double r_min, double r_max,
                      int resolution, std::ostream& os);

void write_fitness_history_csv(const std::vector<MetaHistoryRow>& history,
                               std::ostream& os);

// Aligned per-iteration return/entropy columns across runs, plus differences
// against the first run.
void write_compare_csv(const std::vector<std::string>& names,
                       const std::vector<RunRecord>& runs, std::ostream& os);

}  // namespace mirrorlab
