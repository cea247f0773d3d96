// SPDX-License-Identifier: Apache-2.0
//
// Self-contained SVG plots rendered from run CSV files only, so deleting
// the plots and re-emitting them gives byte-identical output.
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "normprobe/csv.hpp"

namespace normprobe {

/// Mean prediction per index (predictions: index,target,mean,std,localized)
/// over thin individual traces (traces: index,t0,t1,...), with dashed
/// verticals at R and length - R.
std::string svg_prediction_plot(const CsvTable& predictions, const CsvTable& traces,
                                std::size_t receptive_field);

/// One cell per (depth, index) of map (depth,1,2,...,length); localized cells are dark.
std::string svg_heatmap(const CsvTable& map);

/// overlap: overlap,final_mse,...
std::string svg_overlap_plot(const CsvTable& overlap);

/// per_seed: groups,seed,best_learning_rate,best_distance. Seed points and their mean.
std::string svg_groupnorm_plot(const CsvTable& per_seed);

/// Mean predictions of the three batch norm evaluations with their localized indices.
std::string svg_batchnorm_plot(const CsvTable& minibatch, const CsvTable& population,
                               const CsvTable& normfree, std::size_t receptive_field);

/// Rewrites every plot of the run directory from its manifest and CSV
/// files. Throws CsvError if a CSV the plots need is missing.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& run_dir);

}  // namespace normprobe
