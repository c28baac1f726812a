#include "tilq/report_io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace tilq {

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ProblemError("cannot open " + path);
  Json doc;
  try {
    in >> doc;
  } catch (const Json::exception& e) {
    throw ProblemError("cannot parse " + path + ": " + e.what());
  }
  return doc;
}

void write_json_file(const std::string& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) throw ProblemError("cannot write " + path);
  out << doc.dump(2) << "\n";
}

namespace {

Matrix matrix_from_json(const Json& value, const std::string& name, int rows, int cols) {
  if (value.is_number()) {
    if (rows != 1 || cols != 1)
      throw ProblemError(name + ": scalar given for a " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " matrix");
    Matrix M(1, 1);
    M(0, 0) = value.get<double>();
    return M;
  }
  if (!value.is_array() || static_cast<int>(value.size()) != rows)
    throw ProblemError(name + ": expected " + std::to_string(rows) + " rows");
  Matrix M(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const Json& row = value[i];
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      throw ProblemError(name + ": row " + std::to_string(i) + " must hold " +
                         std::to_string(cols) + " numbers");
    for (int j = 0; j < cols; ++j) {
      if (!row[j].is_number()) throw ProblemError(name + ": non-numeric entry");
      M(i, j) = row[j].get<double>();
    }
  }
  return M;
}

Vector vector_from_json(const Json& value, const std::string& name, int len) {
  if (value.is_number()) {
    if (len != 1) throw ProblemError(name + ": scalar given for a length-" + std::to_string(len) +
                                     " vector");
    Vector v(1);
    v(0) = value.get<double>();
    return v;
  }
  if (!value.is_array() || static_cast<int>(value.size()) != len)
    throw ProblemError(name + ": expected " + std::to_string(len) + " numbers");
  Vector v(len);
  for (int i = 0; i < len; ++i) {
    if (!value[i].is_number()) throw ProblemError(name + ": non-numeric entry");
    v(i) = value[i].get<double>();
  }
  return v;
}

bool looks_per_node_matrix(const Json& value) {
  // array of 2-D arrays: [[[..],..], ...]
  return value.is_array() && !value.empty() && value[0].is_array() && !value[0].empty() &&
         value[0][0].is_array();
}

bool looks_per_node_vector(const Json& value) {
  return value.is_array() && !value.empty() && value[0].is_array();
}

}  // namespace

MatrixPath matrix_path_from_json(const Json& value, const std::string& name, int rows, int cols,
                                 int N) {
  if (looks_per_node_matrix(value)) {
    if (static_cast<int>(value.size()) != N + 1)
      throw ProblemError(name + ": per-node data must hold " + std::to_string(N + 1) +
                         " matrices");
    MatrixPath path(N + 1);
    for (int k = 0; k <= N; ++k)
      path[k] = matrix_from_json(value[k], name + "[" + std::to_string(k) + "]", rows, cols);
    return path;
  }
  return constant_path(matrix_from_json(value, name, rows, cols), N);
}

VectorPath vector_path_from_json(const Json& value, const std::string& name, int len, int N) {
  if (looks_per_node_vector(value)) {
    if (static_cast<int>(value.size()) != N + 1)
      throw ProblemError(name + ": per-node data must hold " + std::to_string(N + 1) +
                         " vectors");
    VectorPath path(N + 1);
    for (int k = 0; k <= N; ++k)
      path[k] = vector_from_json(value[k], name + "[" + std::to_string(k) + "]", len);
    return path;
  }
  return constant_path(vector_from_json(value, name, len), N);
}

Coefficients problem_from_json(const Json& doc) {
  for (const char* key : {"n", "m", "T", "N"})
    if (!doc.contains(key) || !doc[key].is_number())
      throw ProblemError(std::string("problem config: missing numeric field '") + key + "'");
  int n = doc["n"].get<int>();
  int m = doc["m"].get<int>();
  double T = doc["T"].get<double>();
  int N = doc["N"].get<int>();
  if (n < 1 || m < 1 || N < 1 || !(T > 0.0))
    throw ProblemError("problem config: need n, m >= 1, N >= 1, T > 0");

  Coefficients prob = make_zero_problem(n, m, T, N);
  auto mat = [&](const char* key, MatrixPath& dst, int rows, int cols) {
    if (doc.contains(key)) dst = matrix_path_from_json(doc[key], key, rows, cols, N);
  };
  auto vec = [&](const char* key, VectorPath& dst, int len) {
    if (doc.contains(key)) dst = vector_path_from_json(doc[key], key, len, N);
  };
  mat("A", prob.A, n, n);
  mat("C", prob.C, n, n);
  mat("B", prob.B, n, m);
  mat("D", prob.D, n, m);
  vec("b", prob.b, n);
  vec("sigma", prob.sigma, n);
  mat("Q", prob.Q, n, n);
  mat("Q_tilde", prob.Q_tilde, n, n);
  mat("S", prob.S, m, n);
  mat("S_tilde", prob.S_tilde, m, n);
  mat("R", prob.R, m, m);
  mat("R_tilde", prob.R_tilde, m, m);
  if (doc.contains("G")) prob.G = matrix_from_json(doc["G"], "G", n, n);
  if (doc.contains("G_tilde")) prob.G_tilde = matrix_from_json(doc["G_tilde"], "G_tilde", n, n);
  if (doc.contains("g")) prob.g = vector_from_json(doc["g"], "g", n);
  if (doc.contains("x0")) prob.x0 = vector_from_json(doc["x0"], "x0", n);
  validate(prob);
  return prob;
}

namespace {

std::string format_cell(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw ProblemError("cannot write " + path);
  for (std::size_t i = 0; i < header.size(); ++i)
    out << header[i] << (i + 1 < header.size() ? "," : "");
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << format_cell(row[i]) << (i + 1 < row.size() ? "," : "");
    out << "\n";
  }
}

std::vector<std::vector<double>> read_csv(const std::string& path,
                                          std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw ProblemError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ProblemError(path + ": empty file");
  if (header) {
    header->clear();
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header->push_back(cell);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      char* end = nullptr;
      double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw ProblemError(path + ": non-numeric cell '" + cell + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_strategy_csv(const std::string& path, const TimeGrid& grid,
                        const StrategyPair& strategy) {
  int m = static_cast<int>(strategy.Theta[0].rows());
  int n = static_cast<int>(strategy.Theta[0].cols());
  std::vector<std::string> header{"time"};
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      header.push_back("Theta_" + std::to_string(i) + "_" + std::to_string(j));
  for (int i = 0; i < m; ++i) header.push_back("phi_" + std::to_string(i));
  std::vector<std::vector<double>> rows(grid.N + 1);
  for (int k = 0; k <= grid.N; ++k) {
    auto& row = rows[k];
    row.push_back(grid.nodes[k]);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) row.push_back(strategy.Theta[k](i, j));
    for (int i = 0; i < m; ++i) row.push_back(strategy.phi[k](i));
  }
  write_csv(path, header, rows);
}

StrategyPair read_strategy_csv(const std::string& path, const Coefficients& prob,
                               StrategyKind kind) {
  auto rows = read_csv(path);
  int n = prob.n, m = prob.m, N = prob.grid.N;
  if (static_cast<int>(rows.size()) != N + 1)
    throw ProblemError(path + ": expected " + std::to_string(N + 1) + " rows");
  StrategyPair s;
  s.kind = kind;
  s.Theta.resize(N + 1);
  s.phi.resize(N + 1);
  for (int k = 0; k <= N; ++k) {
    const auto& row = rows[k];
    if (static_cast<int>(row.size()) != 1 + m * n + m)
      throw ProblemError(path + ": row " + std::to_string(k) + " has wrong width");
    if (std::abs(row[0] - prob.grid.nodes[k]) > 1e-9 * std::max(1.0, prob.grid.T))
      throw ProblemError(path + ": time column does not match the problem grid");
    Matrix Th(m, n);
    int c = 1;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) Th(i, j) = row[c++];
    Vector ph(m);
    for (int i = 0; i < m; ++i) ph(i) = row[c++];
    s.Theta[k] = Th;
    s.phi[k] = ph;
  }
  return s;
}

void write_control_csv(const std::string& path, const TimeGrid& grid, const VectorPath& u) {
  int m = static_cast<int>(u[0].size());
  std::vector<std::string> header{"time"};
  for (int i = 0; i < m; ++i) header.push_back("u_" + std::to_string(i));
  std::vector<std::vector<double>> rows(grid.N + 1);
  for (int k = 0; k <= grid.N; ++k) {
    rows[k].push_back(grid.nodes[k]);
    for (int i = 0; i < m; ++i) rows[k].push_back(u[k](i));
  }
  write_csv(path, header, rows);
}

VectorPath read_control_csv(const std::string& path, const Coefficients& prob) {
  auto rows = read_csv(path);
  int m = prob.m, N = prob.grid.N;
  if (static_cast<int>(rows.size()) != N + 1)
    throw ProblemError(path + ": expected " + std::to_string(N + 1) + " rows");
  VectorPath u(N + 1);
  for (int k = 0; k <= N; ++k) {
    if (static_cast<int>(rows[k].size()) != 1 + m)
      throw ProblemError(path + ": row " + std::to_string(k) + " has wrong width");
    if (std::abs(rows[k][0] - prob.grid.nodes[k]) > 1e-9 * std::max(1.0, prob.grid.T))
      throw ProblemError(path + ": time column does not match the problem grid");
    Vector v(m);
    for (int i = 0; i < m; ++i) v(i) = rows[k][1 + i];
    u[k] = v;
  }
  return u;
}

void write_kernel_csv(const std::string& path, const TimeGrid& grid,
                      const KernelSolution& kernel) {
  int n = static_cast<int>(kernel.P1[0].rows());
  std::vector<std::string> header{"time"};
  auto block = [&](const char* tag) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        header.push_back(std::string(tag) + "_" + std::to_string(i) + "_" + std::to_string(j));
  };
  block("P1");
  block("P2");
  for (int i = 0; i < n; ++i) header.push_back("P3_" + std::to_string(i));
  for (int i = 0; i < n; ++i) header.push_back("P4_" + std::to_string(i));
  std::vector<std::vector<double>> rows(grid.N + 1);
  for (int k = 0; k <= grid.N; ++k) {
    auto& row = rows[k];
    row.push_back(grid.nodes[k]);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) row.push_back(kernel.P1[k](i, j));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) row.push_back(kernel.P2[k](i, j));
    for (int i = 0; i < n; ++i) row.push_back(kernel.P3[k](i));
    for (int i = 0; i < n; ++i) row.push_back(kernel.P4[k](i));
  }
  write_csv(path, header, rows);
}

}  // namespace tilq
