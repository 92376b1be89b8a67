#include "mlrvar/io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mlrvar {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

TimeSeries read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("read_csv: empty file '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  TimeSeries ts;
  ts.names = split_line(line);
  const std::size_t n = ts.names.size();
  if (n == 0) throw DataError("read_csv: empty header in '" + path + "'");

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != n)
      throw DataError("read_csv: row " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(n));
    std::vector<double> row(n);
    for (std::size_t c = 0; c < n; ++c) {
      try {
        std::size_t used = 0;
        row[c] = std::stod(cells[c], &used);
        if (used != cells[c].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw DataError("read_csv: non-numeric cell '" + cells[c] + "' at row " +
                        std::to_string(line_no) + ", column " + ts.names[c]);
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("read_csv: no data rows in '" + path + "'");

  ts.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(n));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < n; ++c)
      ts.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return ts;
}

void write_csv(const TimeSeries& ts, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_csv: cannot open '" + path + "' for writing");
  const Index n = ts.width();
  for (Index c = 0; c < n; ++c) {
    if (c) out << ',';
    if (c < static_cast<Index>(ts.names.size()))
      out << ts.names[static_cast<std::size_t>(c)];
    else
      out << 'y' << (c + 1);
  }
  out << '\n';
  char buf[64];
  for (Index r = 0; r < ts.length(); ++r) {
    for (Index c = 0; c < n; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", ts.values(r, c));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError("write_csv: write failure on '" + path + "'");
}

StandardizedSeries standardize(const TimeSeries& ts) {
  const Index t = ts.length(), n = ts.width();
  if (t < 2) throw DataError("standardize: need at least two rows");
  StandardizedSeries out;
  out.mean = ts.values.colwise().mean();
  out.scale.resize(n);
  for (Index c = 0; c < n; ++c) {
    const double var =
        (ts.values.col(c).array() - out.mean(c)).square().sum() /
        static_cast<double>(t - 1);
    if (var <= 0.0) {
      const std::string name = c < static_cast<Index>(ts.names.size())
                                   ? ts.names[static_cast<std::size_t>(c)]
                                   : "column " + std::to_string(c + 1);
      throw DataError("standardize: zero-variance column '" + name + "'");
    }
    out.scale(c) = std::sqrt(var);
  }
  out.values.names = ts.names;
  out.values.values =
      (ts.values.rowwise() - out.mean.transpose()).array().rowwise() /
      out.scale.transpose().array();
  return out;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

namespace {

json matrix_to_json(const MatrixXd& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

MatrixXd matrix_from_json(const json& j) {
  const Index rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(data.size()) != rows * cols)
    throw DataError("load_model: matrix payload size mismatch");
  return Eigen::Map<const MatrixXd>(data.data(), rows, cols);
}

json tensor_to_json(const Tensor3d& t) {
  json j;
  j["dims"] = {t.dim(1), t.dim(2), t.dim(3)};
  j["data"] = std::vector<double>(t.data(), t.data() + t.size());
  return j;
}

Tensor3d tensor_from_json(const json& j) {
  const auto dims = j.at("dims").get<std::array<Index, 3>>();
  const auto data = j.at("data").get<std::vector<double>>();
  Tensor3d t(dims[0], dims[1], dims[2]);
  if (static_cast<Index>(data.size()) != t.size())
    throw DataError("load_model: tensor payload size mismatch");
  std::copy(data.begin(), data.end(), t.data());
  return t;
}

constexpr int kSchemaVersion = 1;

std::string checksum_of(const json& model) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a:%016llx",
                static_cast<unsigned long long>(fnv1a64(model.dump())));
  return buf;
}

}  // namespace

void save_model(const FitReport& report, const std::string& path) {
  json model;
  model["estimator"] = report.estimator;
  model["n"] = report.coeff.dim(1);
  model["p"] = report.coeff.dim(3);
  model["ranks"] = report.ranks;
  model["coeff"] = tensor_to_json(report.coeff);
  if (report.decomp) {
    model["core"] = tensor_to_json(report.decomp->core);
    model["u1"] = matrix_to_json(report.decomp->U1);
    model["u2"] = matrix_to_json(report.decomp->U2);
    model["u3"] = matrix_to_json(report.decomp->U3);
  }
  if (report.lambda) model["lambda"] = *report.lambda;
  if (report.sigma_eps.size() > 0) model["sigma_eps"] = matrix_to_json(report.sigma_eps);

  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["model"] = model;
  doc["provenance"] = {{"seed", report.seed}, {"config_hash", report.config_hash}};
  json diag;
  diag["objective_trace"] = report.objective_trace;
  diag["iterations"] = report.iterations;
  diag["converged"] = report.converged;
  diag["elapsed_seconds"] = report.elapsed_seconds;
  for (int i = 0; i < 3; ++i)
    if (report.support[static_cast<std::size_t>(i)].size() > 0)
      diag["support_u" + std::to_string(i + 1)] =
          matrix_to_json(report.support[static_cast<std::size_t>(i)]);
  doc["diagnostics"] = diag;
  doc["checksum"] = checksum_of(model);

  std::ofstream out(path);
  if (!out) throw DataError("save_model: cannot open '" + path + "' for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("save_model: write failure on '" + path + "'");
}

FitReport load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_model: cannot open '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw DataError("load_model: malformed JSON in '" + path + "': " + e.what());
  }
  if (!doc.contains("schema_version") ||
      doc.at("schema_version").get<int>() != kSchemaVersion)
    throw DataError("load_model: unsupported schema version in '" + path + "'");
  if (!doc.contains("model") || !doc.contains("checksum"))
    throw DataError("load_model: missing model or checksum in '" + path + "'");
  const json& model = doc.at("model");
  if (checksum_of(model) != doc.at("checksum").get<std::string>())
    throw DataError("load_model: checksum mismatch in '" + path + "'");

  FitReport report;
  report.estimator = model.at("estimator").get<std::string>();
  report.coeff = tensor_from_json(model.at("coeff"));
  report.ranks = model.at("ranks").get<std::array<Index, 3>>();
  if (model.contains("core")) {
    TuckerDecompd d;
    d.core = tensor_from_json(model.at("core"));
    d.U1 = matrix_from_json(model.at("u1"));
    d.U2 = matrix_from_json(model.at("u2"));
    d.U3 = matrix_from_json(model.at("u3"));
    report.decomp = std::move(d);
  }
  if (model.contains("lambda")) report.lambda = model.at("lambda").get<double>();
  if (model.contains("sigma_eps"))
    report.sigma_eps = matrix_from_json(model.at("sigma_eps"));
  const json& diag = doc.at("diagnostics");
  report.objective_trace = diag.at("objective_trace").get<std::vector<double>>();
  report.iterations = diag.at("iterations").get<int>();
  report.converged = diag.at("converged").get<bool>();
  report.elapsed_seconds = diag.at("elapsed_seconds").get<double>();
  report.seed = doc.at("provenance").at("seed").get<std::uint64_t>();
  report.config_hash = doc.at("provenance").at("config_hash").get<std::string>();
  return report;
}

Config parse_config_text(const std::string& text) {
  Config config;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": empty key");
    config[key] = value;
  }
  return config;
}

Config read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace mlrvar
