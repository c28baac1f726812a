// Config and artifact I/O: JSON problem loading, deterministic report
// writing (sorted keys, shortest round-trip doubles, no timestamps), and
// CSV emission with 17 significant digits so values survive a round trip.
#pragma once

#include "tilq/kernel_ode.hpp"
#include "tilq/problem.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace tilq {

using Json = nlohmann::json;

Json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& doc);

/// Builds and validates a coefficient set from a JSON document. Matrix
/// fields accept a plain number (1x1), a 2-D array (constant in time) or
/// an array of N + 1 2-D arrays (one per node); vector fields accept a
/// number (length 1), a 1-D array (constant) or an array of N + 1 1-D
/// arrays. Omitted fields default to zero.
Coefficients problem_from_json(const Json& doc);

MatrixPath matrix_path_from_json(const Json& value, const std::string& name, int rows, int cols,
                                 int N);
VectorPath vector_path_from_json(const Json& value, const std::string& name, int len, int N);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
std::vector<std::vector<double>> read_csv(const std::string& path,
                                          std::vector<std::string>* header = nullptr);

void write_strategy_csv(const std::string& path, const TimeGrid& grid,
                        const StrategyPair& strategy);
StrategyPair read_strategy_csv(const std::string& path, const Coefficients& prob,
                               StrategyKind kind);
void write_control_csv(const std::string& path, const TimeGrid& grid, const VectorPath& u);
VectorPath read_control_csv(const std::string& path, const Coefficients& prob);
void write_kernel_csv(const std::string& path, const TimeGrid& grid,
                      const KernelSolution& kernel);

}  // namespace tilq
