#include "mismeasure/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include "mismeasure/numerics.hpp"

namespace mismeasure::cli {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string read_file(const std::string& path, ErrorCode code) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(code, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string format_double(double x, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, x);
  return buf;
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string variant_name(TreatmentScoreVariant v) {
  return v == TreatmentScoreVariant::kPrinted ? "printed" : "standard";
}

// --- config parsing -------------------------------------------------------

std::optional<std::size_t> line_of_key(const std::string& text, const std::string& key) {
  const std::size_t pos = text.find('"' + key + '"');
  if (pos == std::string::npos) return std::nullopt;
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

struct ConfigContext {
  const std::string& text;
  const std::string& source;

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    std::string where = source;
    const std::string leaf = field.substr(field.find_last_of('.') + 1);
    if (const auto line = line_of_key(text, leaf)) where += ":" + std::to_string(*line);
    throw Error(ErrorCode::kConfigParseError, where + ": field '" + field + "': " + what);
  }

  [[noreturn]] void missing(const std::string& field) const {
    throw Error(ErrorCode::kConfigParseError,
                source + ": missing required field '" + field + "'");
  }
};

std::string qualify(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& err) {
    const std::size_t upto = std::min<std::size_t>(err.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
    throw Error(ErrorCode::kConfigParseError,
                source + ":" + std::to_string(line) + ": malformed JSON: " + err.what());
  }
}

void require_object(const json& j, const std::string& field, const ConfigContext& ctx) {
  if (!j.is_object()) ctx.fail(field.empty() ? "<root>" : field, "expected an object");
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& prefix, const ConfigContext& ctx) {
  for (const auto& [key, _] : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return key == a; });
    if (!known) ctx.fail(qualify(prefix, key), "unknown key");
  }
}

std::optional<double> get_number(const json& obj, const char* key, const std::string& prefix,
                                 const ConfigContext& ctx) {
  if (!obj.contains(key)) return std::nullopt;
  const json& v = obj.at(key);
  if (!v.is_number()) ctx.fail(qualify(prefix, key), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) ctx.fail(qualify(prefix, key), "must be finite");
  return x;
}

std::optional<std::uint64_t> get_unsigned(const json& obj, const char* key,
                                          const std::string& prefix, const ConfigContext& ctx) {
  if (!obj.contains(key)) return std::nullopt;
  const json& v = obj.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  ctx.fail(qualify(prefix, key), "expected a non-negative integer");
}

std::optional<Index> get_count(const json& obj, const char* key, const std::string& prefix,
                               const ConfigContext& ctx) {
  const auto v = get_unsigned(obj, key, prefix, ctx);
  if (!v) return std::nullopt;
  return static_cast<Index>(*v);
}

std::optional<bool> get_bool(const json& obj, const char* key, const std::string& prefix,
                             const ConfigContext& ctx) {
  if (!obj.contains(key)) return std::nullopt;
  if (!obj.at(key).is_boolean()) ctx.fail(qualify(prefix, key), "expected true or false");
  return obj.at(key).get<bool>();
}

std::optional<std::string> get_string(const json& obj, const char* key,
                                      const std::string& prefix, const ConfigContext& ctx) {
  if (!obj.contains(key)) return std::nullopt;
  if (!obj.at(key).is_string()) ctx.fail(qualify(prefix, key), "expected a string");
  return obj.at(key).get<std::string>();
}

std::optional<VectorXd> get_vector(const json& obj, const char* key, const std::string& prefix,
                                   const ConfigContext& ctx) {
  if (!obj.contains(key)) return std::nullopt;
  const json& v = obj.at(key);
  if (!v.is_array()) ctx.fail(qualify(prefix, key), "expected an array of numbers");
  VectorXd out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) ctx.fail(qualify(prefix, key), "expected an array of numbers");
    out[static_cast<Index>(i)] = v[i].get<double>();
  }
  return out;
}

std::optional<std::vector<std::string>> get_string_list(const json& obj, const char* key,
                                                        const std::string& prefix,
                                                        const ConfigContext& ctx) {
  if (!obj.contains(key)) return std::nullopt;
  const json& v = obj.at(key);
  if (!v.is_array()) ctx.fail(qualify(prefix, key), "expected an array of strings");
  std::vector<std::string> out;
  for (const json& item : v) {
    if (!item.is_string()) ctx.fail(qualify(prefix, key), "expected an array of strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

DgpConfig parse_dgp(const json& obj, const ConfigContext& ctx) {
  require_object(obj, "dgp", ctx);
  check_keys(obj,
             {"n", "p", "treatment_coefs", "outcome_coefs", "p11", "p10",
              "heterogeneous_misclass"},
             "dgp", ctx);
  DgpConfig dgp = DgpConfig::base();
  if (auto n = get_count(obj, "n", "dgp", ctx)) dgp.n = *n;
  if (auto p = get_count(obj, "p", "dgp", ctx)) {
    dgp.p = *p;
    dgp.treatment_coefs = VectorXd::Constant(dgp.p + 1, 0.3);
    dgp.treatment_coefs[0] = 0.8;
    dgp.outcome_coefs = VectorXd::Ones(dgp.p + 2);
    dgp.outcome_coefs[0] = -3.9;
  }
  if (auto v = get_vector(obj, "treatment_coefs", "dgp", ctx)) dgp.treatment_coefs = *v;
  if (auto v = get_vector(obj, "outcome_coefs", "dgp", ctx)) dgp.outcome_coefs = *v;
  if (auto x = get_number(obj, "p11", "dgp", ctx)) dgp.p11 = *x;
  if (auto x = get_number(obj, "p10", "dgp", ctx)) dgp.p10 = *x;
  if (auto v = get_vector(obj, "heterogeneous_misclass", "dgp", ctx)) {
    if (v->size() != 2) ctx.fail("dgp.heterogeneous_misclass", "expected [intercept, slope]");
    dgp.heterogeneous_misclass = std::make_pair((*v)[0], (*v)[1]);
  }
  return dgp;
}

SelectionConfig parse_selection(const json& obj, const DgpConfig& dgp, const ConfigContext& ctx) {
  require_object(obj, "selection", ctx);
  check_keys(obj,
             {"kind", "target_nv", "alpha0", "calibrate", "misspecify_drop",
              "drop_from_treatment_model"},
             "selection", ctx);
  const std::string kind = get_string(obj, "kind", "selection", ctx).value_or("non_probability");
  const Index target = get_count(obj, "target_nv", "selection", ctx).value_or(850);
  SelectionConfig sel;
  if (kind == "srs") {
    sel = SelectionConfig::srs(target);
  } else if (kind == "non_probability") {
    sel = SelectionConfig::non_probability(target);
    sel.alpha0 = VectorXd::Ones(dgp.p + 2);
    sel.alpha0[0] = 0.0;
    sel.alpha0[1] = 0.5;
    sel.alpha0[dgp.p + 1] = 0.0;
  } else {
    ctx.fail("selection.kind", "expected \"srs\" or \"non_probability\"");
  }
  if (auto v = get_vector(obj, "alpha0", "selection", ctx)) sel.alpha0 = *v;
  if (auto c = get_bool(obj, "calibrate", "selection", ctx)) sel.calibrate = *c;
  if (auto d = get_count(obj, "misspecify_drop", "selection", ctx)) sel.misspecify_drop = *d;
  if (auto d = get_bool(obj, "drop_from_treatment_model", "selection", ctx)) {
    sel.drop_from_treatment_model = *d;
  }
  return sel;
}

std::vector<EstimatorId> parse_estimator_names(const std::vector<std::string>& names,
                                               const std::string& field,
                                               const ConfigContext* ctx) {
  std::vector<EstimatorId> out;
  for (const std::string& name : names) {
    if (name == "all") {
      out.assign(kAllEstimators.begin(), kAllEstimators.end());
      continue;
    }
    const auto id = parse_estimator_id(name);
    if (!id) {
      if (ctx != nullptr) ctx->fail(field, "unknown estimator '" + name + "'");
      throw Error(ErrorCode::kConfigParseError, "unknown estimator '" + name + "'");
    }
    if (std::find(out.begin(), out.end(), *id) == out.end()) out.push_back(*id);
  }
  if (out.empty()) {
    throw Error(ErrorCode::kConfigParseError, "estimator list is empty");
  }
  return out;
}

// Configuration-level validation failures surface as config errors.
template <class Fn>
void validate_as_config(const std::string& source, Fn&& fn) {
  try {
    fn();
  } catch (const Error& err) {
    if (err.code() == ErrorCode::kConfigParseError) throw;
    throw Error(ErrorCode::kConfigParseError, source + ": " + err.what());
  }
}

// --- CSV ------------------------------------------------------------------

double parse_cell(const std::string& cell, const std::string& source, std::size_t line,
                  const std::string& column) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw Error(ErrorCode::kSchemaError, source + ":" + std::to_string(line) + ": column '" +
                                             column + "': '" + cell + "' is not a finite number");
  }
  return value;
}

double parse_binary(const std::string& cell, const std::string& source, std::size_t line,
                    const std::string& column) {
  const double x = parse_cell(cell, source, line, column);
  if (x != 0.0 && x != 1.0) {
    throw Error(ErrorCode::kSchemaError, source + ":" + std::to_string(line) + ": column '" +
                                             column + "' must be 0 or 1");
  }
  return x;
}

std::optional<Index> covariate_index(const std::string& name) {
  if (name.size() < 2 || name[0] != 'x') return std::nullopt;
  Index k = 0;
  const auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
  if (ec != std::errc() || ptr != name.data() + name.size() || k < 1) return std::nullopt;
  return k;
}

// --- report rendering -----------------------------------------------------

void check_finite(const ordered_json& j, const std::string& where) {
  if (j.is_number_float() && !std::isfinite(j.get<double>())) {
    throw Error(ErrorCode::kNonFiniteEvaluation, "non-finite value in report field '" + where + "'");
  }
  if (j.is_structured()) {
    for (const auto& [key, value] : j.items()) check_finite(value, where + "." + key);
  }
}

void check_finite(const RunReport& report) {
  check_finite(report.metadata, "metadata");
  for (const auto& row : report.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (const double* x = std::get_if<double>(&row[c]); x && !std::isfinite(*x)) {
        throw Error(ErrorCode::kNonFiniteEvaluation,
                    "non-finite value in report column '" + report.columns[c].key + "'");
      }
    }
  }
}

ordered_json cell_json(const Cell& cell) {
  return std::visit(
      [](const auto& v) -> ordered_json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return nullptr;
        } else {
          return v;
        }
      },
      cell);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string cell_text(const Cell& cell, bool exact) {
  return std::visit(
      [&](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return exact ? "" : "-";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return exact ? csv_escape(v) : v;
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else {
          return format_double(v, exact ? "%.17g" : "%.4f");
        }
      },
      cell);
}

std::string render_table(const RunReport& report) {
  std::ostringstream out;
  for (const auto& [key, value] : report.metadata.items()) {
    out << key << ": " << (value.is_string() ? value.get<std::string>() : value.dump()) << '\n';
  }
  if (!report.metadata.empty()) out << '\n';

  std::vector<std::vector<std::string>> cells;
  std::vector<std::size_t> width(report.columns.size());
  for (std::size_t c = 0; c < report.columns.size(); ++c) width[c] = report.columns[c].title.size();
  for (const auto& row : report.rows) {
    std::vector<std::string> text;
    for (std::size_t c = 0; c < row.size(); ++c) {
      text.push_back(cell_text(row[c], false));
      width[c] = std::max(width[c], text.back().size());
    }
    cells.push_back(std::move(text));
  }
  const auto emit = [&](const std::vector<std::string>& fields) {
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (c > 0) out << " | ";
      // First column left-aligned, numbers right-aligned.
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << fields[c];
      } else {
        out << std::right << std::setw(static_cast<int>(width[c])) << fields[c];
      }
    }
    out << '\n';
  };
  std::vector<std::string> titles;
  for (const Column& col : report.columns) titles.push_back(col.title);
  emit(titles);
  std::size_t rule = 0;
  for (std::size_t w : width) rule += w;
  rule += 3 * (width.empty() ? 0 : width.size() - 1);
  out << std::string(rule, '-') << '\n';
  for (const auto& row : cells) emit(row);

  if (!report.warnings.empty()) {
    out << "\nwarnings:\n";
    for (const std::string& w : report.warnings) out << "  - " << w << '\n';
  }
  return out.str();
}

std::string render_csv(const RunReport& report) {
  std::ostringstream out;
  for (std::size_t c = 0; c < report.columns.size(); ++c) {
    out << (c ? "," : "") << csv_escape(report.columns[c].key);
  }
  out << '\n';
  for (const auto& row : report.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << cell_text(row[c], true);
    out << '\n';
  }
  return out.str();
}

std::string render_json(const RunReport& report) {
  ordered_json doc = ordered_json::object();
  doc["metadata"] = report.metadata;
  ordered_json rows = ordered_json::array();
  for (const auto& row : report.rows) {
    ordered_json obj = ordered_json::object();
    for (std::size_t c = 0; c < row.size(); ++c) obj[report.columns[c].key] = cell_json(row[c]);
    rows.push_back(std::move(obj));
  }
  doc["rows"] = std::move(rows);
  doc["warnings"] = report.warnings;
  return doc.dump(2) + '\n';
}

MatrixXd design_from_names(const ObservationFrame& frame, const std::vector<std::string>& names,
                           bool allow_t, const std::string& model) {
  MatrixXd design(frame.size(), static_cast<Index>(names.size()) + 1);
  design.col(0).setOnes();
  std::set<std::string> seen;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string& name = names[k];
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::kSchemaError, model + " model lists '" + name + "' twice");
    }
    const Index col = static_cast<Index>(k) + 1;
    if (name == "t") {
      if (!allow_t) {
        throw Error(ErrorCode::kSchemaError, "t cannot enter the " + model + " model");
      }
      design.col(col) = frame.t;
      continue;
    }
    const auto idx = covariate_index(name);
    if (!idx || *idx > frame.covariates()) {
      throw Error(ErrorCode::kSchemaError,
                  model + " model names unknown column '" + name + "'");
    }
    design.col(col) = frame.x.col(*idx - 1);
  }
  return design;
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigParseError:
    case ErrorCode::kUnknownScenario:
    case ErrorCode::kSchemaError:
    case ErrorCode::kInvalidFrame:
      return kExitConfigError;
    default:
      return kExitComputationError;
  }
}

OutputFormat parse_output_format(const std::string& name) {
  if (name == "table") return OutputFormat::kTable;
  if (name == "csv") return OutputFormat::kCsv;
  if (name == "json") return OutputFormat::kJson;
  throw Error(ErrorCode::kConfigParseError, "unknown format '" + name + "' (table, csv, json)");
}

TreatmentScoreVariant parse_score_variant(const std::string& name) {
  if (name == "standard") return TreatmentScoreVariant::kStandard;
  if (name == "printed") return TreatmentScoreVariant::kPrinted;
  throw Error(ErrorCode::kConfigParseError,
              "unknown selection score variant '" + name + "' (standard, printed)");
}

std::vector<EstimatorId> parse_estimator_list(const std::string& comma_list) {
  return parse_estimator_names(split(comma_list, ','), "estimators", nullptr);
}

void RunReport::add_warning(const std::string& warning) {
  if (std::find(warnings.begin(), warnings.end(), warning) == warnings.end()) {
    warnings.push_back(warning);
  }
}

std::string render(const RunReport& report, OutputFormat format) {
  check_finite(report);
  switch (format) {
    case OutputFormat::kCsv:
      return render_csv(report);
    case OutputFormat::kJson:
      return render_json(report);
    case OutputFormat::kTable:
      break;
  }
  return render_table(report);
}

ObservationFrame read_frame_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  const auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!trim(line).empty()) return true;
    }
    return false;
  };
  if (!next_line()) throw Error(ErrorCode::kSchemaError, source + ": empty file");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);

  const std::vector<std::string> header = split(line, ',');
  std::map<std::string, std::size_t> position;
  Index p = 0;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& name = header[c];
    if (!position.emplace(name, c).second) {
      throw Error(ErrorCode::kSchemaError, source + ": duplicate column '" + name + "'");
    }
    if (const auto k = covariate_index(name)) {
      p = std::max(p, *k);
    } else if (name != "t" && name != "ystar" && name != "v" && name != "y") {
      throw Error(ErrorCode::kSchemaError, source + ": unexpected column '" + name + "'");
    }
  }
  for (const char* required : {"t", "ystar", "v", "y"}) {
    if (!position.count(required)) {
      throw Error(ErrorCode::kSchemaError,
                  source + ": missing column '" + std::string(required) + "'");
    }
  }
  for (Index k = 1; k <= p; ++k) {
    if (!position.count("x" + std::to_string(k))) {
      throw Error(ErrorCode::kSchemaError,
                  source + ": missing column 'x" + std::to_string(k) + "'");
    }
  }

  std::vector<double> xs, ts, ystars, vs, ys;
  while (next_line()) {
    const std::vector<std::string> cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::kSchemaError, source + ":" + std::to_string(line_no) + ": expected " +
                                               std::to_string(header.size()) + " fields, found " +
                                               std::to_string(cells.size()));
    }
    for (Index k = 1; k <= p; ++k) {
      const std::string name = "x" + std::to_string(k);
      xs.push_back(parse_cell(cells[position[name]], source, line_no, name));
    }
    ts.push_back(parse_binary(cells[position["t"]], source, line_no, "t"));
    ystars.push_back(parse_binary(cells[position["ystar"]], source, line_no, "ystar"));
    const double v = parse_binary(cells[position["v"]], source, line_no, "v");
    vs.push_back(v);
    const std::string& y = cells[position["y"]];
    if (v == 0.0) {
      if (!y.empty()) {
        throw Error(ErrorCode::kSchemaError, source + ":" + std::to_string(line_no) +
                                                 ": y must be empty where v = 0");
      }
      ys.push_back(kMissing);
    } else {
      if (y.empty()) {
        throw Error(ErrorCode::kSchemaError, source + ":" + std::to_string(line_no) +
                                                 ": y is required where v = 1");
      }
      ys.push_back(parse_binary(y, source, line_no, "y"));
    }
  }
  const Index n = static_cast<Index>(ts.size());
  if (n == 0) throw Error(ErrorCode::kSchemaError, source + ": no data rows");

  ObservationFrame frame;
  frame.x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      xs.data(), n, p);
  frame.t = Eigen::Map<const VectorXd>(ts.data(), n);
  frame.y_star = Eigen::Map<const VectorXd>(ystars.data(), n);
  frame.v = Eigen::Map<const VectorXd>(vs.data(), n);
  frame.y = Eigen::Map<const VectorXd>(ys.data(), n);
  return frame;
}

ObservationFrame read_frame_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kSchemaError, "cannot open '" + path + "'");
  return read_frame_csv(in, path);
}

void write_frame_csv(std::ostream& out, const ObservationFrame& frame) {
  frame.validate();
  for (Index k = 1; k <= frame.covariates(); ++k) out << 'x' << k << ',';
  out << "t,ystar,v,y\n";
  for (Index i = 0; i < frame.size(); ++i) {
    for (Index k = 0; k < frame.covariates(); ++k) out << format_double(frame.x(i, k), "%.17g") << ',';
    out << static_cast<int>(frame.t[i]) << ',' << static_cast<int>(frame.y_star[i]) << ','
        << static_cast<int>(frame.v[i]) << ',';
    if (frame.has_gold(i)) out << static_cast<int>(frame.y[i]);
    out << '\n';
  }
}

ParsedScenario parse_scenario_config(const std::string& text, const std::string& source) {
  const ConfigContext ctx{text, source};
  const json doc = parse_json(text, source);
  require_object(doc, "", ctx);
  check_keys(doc,
             {"name", "dgp", "selection", "iterations", "seed", "estimators", "truth",
              "truth_populations", "b", "w"},
             "", ctx);
  ParsedScenario parsed;
  ScenarioConfig& cfg = parsed.config;
  cfg.name = get_string(doc, "name", "", ctx).value_or(
      std::filesystem::path(source).stem().string());
  if (doc.contains("dgp")) cfg.dgp = parse_dgp(doc.at("dgp"), ctx);
  if (doc.contains("selection")) {
    cfg.selection = parse_selection(doc.at("selection"), cfg.dgp, ctx);
  } else {
    cfg.selection = parse_selection(json::object(), cfg.dgp, ctx);
  }
  const auto iterations = get_count(doc, "iterations", "", ctx);
  if (!iterations) ctx.missing("iterations");
  if (*iterations < 1) ctx.fail("iterations", "must be at least 1");
  cfg.iterations = *iterations;
  if (auto seed = get_unsigned(doc, "seed", "", ctx)) {
    cfg.base_seed = *seed;
    parsed.seed_given = true;
  }
  if (auto names = get_string_list(doc, "estimators", "", ctx)) {
    cfg.estimators = parse_estimator_names(*names, "estimators", &ctx);
  } else {
    cfg.estimators = table_estimators();
  }
  cfg.truth = get_number(doc, "truth", "", ctx);
  if (auto k = get_count(doc, "truth_populations", "", ctx)) cfg.truth_config.populations = *k;
  cfg.b = get_number(doc, "b", "", ctx);
  if (auto w = get_number(doc, "w", "", ctx)) cfg.w = *w;
  validate_as_config(source, [&] { cfg.validate(); });
  return parsed;
}

ParsedTruthConfig parse_truth_config(const std::string& text, const std::string& source) {
  const ConfigContext ctx{text, source};
  const json doc = parse_json(text, source);
  require_object(doc, "", ctx);
  check_keys(doc, {"dgp", "populations", "population_size", "seed"}, "", ctx);
  ParsedTruthConfig parsed;
  if (doc.contains("dgp")) parsed.dgp = parse_dgp(doc.at("dgp"), ctx);
  if (auto k = get_count(doc, "populations", "", ctx)) parsed.truth.populations = *k;
  if (auto m = get_count(doc, "population_size", "", ctx)) parsed.truth.population_size = *m;
  parsed.seed = get_unsigned(doc, "seed", "", ctx);
  validate_as_config(source, [&] { parsed.dgp.validate(); });
  return parsed;
}

ModelSpec parse_model_spec(const std::string& text, const std::string& source) {
  const ConfigContext ctx{text, source};
  const json doc = parse_json(text, source);
  require_object(doc, "", ctx);
  check_keys(doc, {"treatment_covariates", "selection_covariates"}, "", ctx);
  ModelSpec spec;
  spec.treatment = get_string_list(doc, "treatment_covariates", "", ctx).value_or(
      std::vector<std::string>{"*"});
  spec.selection = get_string_list(doc, "selection_covariates", "", ctx).value_or(
      std::vector<std::string>{"*"});
  return spec;
}

std::string model_spec_json(const ModelSpec& spec) {
  ordered_json doc = ordered_json::object();
  doc["treatment_covariates"] = spec.treatment;
  doc["selection_covariates"] = spec.selection;
  return doc.dump(2) + '\n';
}

ModelSpec default_model_spec(const ObservationFrame& frame) {
  ModelSpec spec;
  spec.selection.push_back("t");
  for (Index k = 1; k <= frame.covariates(); ++k) {
    spec.treatment.push_back("x" + std::to_string(k));
    spec.selection.push_back("x" + std::to_string(k));
  }
  return spec;
}

ModelSpec scenario_model_spec(const ScenarioConfig& config) {
  ModelSpec spec;
  const auto drop = config.selection.misspecify_drop;
  const bool srs = config.selection.kind == SelectionKind::kSrs;
  if (!srs) spec.selection.push_back("t");
  for (Index k = 1; k <= config.dgp.p; ++k) {
    const std::string name = "x" + std::to_string(k);
    const bool dropped = drop && *drop == k;
    if (!(dropped && config.selection.drop_from_treatment_model)) spec.treatment.push_back(name);
    if (!srs && !dropped) spec.selection.push_back(name);
  }
  return spec;
}

AnalysisDesigns build_designs(const ObservationFrame& frame, const ModelSpec& spec) {
  const ModelSpec defaults = default_model_spec(frame);
  const auto expand = [](const std::vector<std::string>& names,
                         const std::vector<std::string>& all) {
    return names == std::vector<std::string>{"*"} ? all : names;
  };
  AnalysisDesigns designs;
  designs.treatment =
      design_from_names(frame, expand(spec.treatment, defaults.treatment), false, "treatment");
  designs.selection =
      design_from_names(frame, expand(spec.selection, defaults.selection), true, "selection");
  return designs;
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag,
                           std::optional<std::uint64_t> config_seed) {
  if (flag) return *flag;
  if (config_seed) return *config_seed;
  if (const char* env = std::getenv(kSeedEnvVar); env != nullptr && *env != '\0') {
    std::uint64_t seed = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto [ptr, ec] = std::from_chars(env, end, seed);
    if (ec != std::errc() || ptr != end) {
      throw Error(ErrorCode::kConfigParseError,
                  std::string(kSeedEnvVar) + " must be an unsigned integer, got '" + env + "'");
    }
    return seed;
  }
  return kDefaultSeed;
}

ScenarioConfig resolve_scenario(const std::string& target, const SimulateOptions& options) {
  ScenarioConfig cfg;
  std::optional<std::uint64_t> config_seed;
  if (auto preset = find_scenario(target)) {
    cfg = std::move(*preset);
    cfg.iterations = kDeskIterations;
  } else if (std::filesystem::is_regular_file(target)) {
    ParsedScenario parsed =
        parse_scenario_config(read_file(target, ErrorCode::kConfigParseError), target);
    cfg = std::move(parsed.config);
    if (parsed.seed_given) config_seed = cfg.base_seed;
  } else {
    std::string known;
    for (const ScenarioConfig& c : scenario_catalog()) known += (known.empty() ? "" : ", ") + c.name;
    throw Error(ErrorCode::kUnknownScenario,
                "'" + target + "' is neither a preset nor a config file (presets: " + known + ")");
  }
  if (options.full) {
    cfg.iterations = kFullIterations;
    cfg.truth_config.populations = kFullTruthPopulations;
  }
  if (options.iterations) cfg.iterations = *options.iterations;
  if (options.truth_populations) cfg.truth_config.populations = *options.truth_populations;
  if (options.estimators) cfg.estimators = *options.estimators;
  if (options.truth) cfg.truth = options.truth;
  if (options.b) cfg.b = options.b;
  cfg.variant = options.variant;
  cfg.base_seed = resolve_seed(options.seed, config_seed);
  validate_as_config(target, [&] { cfg.validate(); });
  return cfg;
}

RunReport cmd_simulate(const std::string& target, const SimulateOptions& options) {
  const ScenarioConfig cfg = resolve_scenario(target, options);
  const std::string started = utc_now();
  const ScenarioResult result = run_scenario(cfg, options.workers);

  RunReport report;
  ordered_json& meta = report.metadata;
  meta["version"] = kVersion;
  meta["command"] = "simulate";
  meta["scenario"] = cfg.name;
  meta["seed"] = cfg.base_seed;
  meta["iterations"] = cfg.iterations;
  meta["n"] = cfg.dgp.n;
  meta["target_nv"] = cfg.selection.target_nv;
  meta["selection"] = cfg.selection.kind == SelectionKind::kSrs ? "srs" : "non_probability";
  meta["p11"] = cfg.dgp.p11;
  if (cfg.dgp.heterogeneous_misclass) {
    meta["p10_logit"] = {cfg.dgp.heterogeneous_misclass->first,
                         cfg.dgp.heterogeneous_misclass->second};
  } else {
    meta["p10"] = cfg.dgp.p10;
  }
  if (cfg.selection.misspecify_drop) meta["misspecify_drop"] = *cfg.selection.misspecify_drop;
  meta["truth"] = result.truth;
  if (result.truth_estimate) {
    meta["truth_source"] = "computed";
    meta["truth_populations"] = result.truth_estimate->populations;
    meta["truth_mc_se"] = result.truth_estimate->mc_se;
  } else {
    meta["truth_source"] = "supplied";
  }
  if (result.calibrated_intercept) meta["selection_intercept"] = *result.calibrated_intercept;
  meta["mean_n_validated"] = result.mean_n_validated;
  meta["b"] = cfg.b ? json(*cfg.b) : json("n_V/n");
  meta["w"] = cfg.w;
  meta["selection_score_variant"] = variant_name(cfg.variant);
  meta["failures"] = result.failures;
  meta["failure_reasons"] = result.failure_reasons;
  if (options.timestamps) {
    meta["started_at"] = started;
    meta["finished_at"] = utc_now();
  }

  report.columns = {{"estimator", "Estimator"},
                    {"bias", "Bias"},
                    {"empirical_se", "Empirical SE"},
                    {"mean_sandwich_se", "Mean Sandwich SE"},
                    {"coverage", "Coverage"},
                    {"used", "Used"},
                    {"id", "Id"}};
  for (const EstimatorSummary& row : result.rows) {
    report.rows.push_back({std::string(display_label(row.id)), row.bias, row.empirical_se,
                           row.mean_sandwich_se, row.coverage,
                           static_cast<std::int64_t>(row.used), std::string(to_string(row.id))});
  }
  for (const std::string& w : result.warnings) report.add_warning(w);
  return report;
}

RunReport estimate_report(const ObservationFrame& frame, const ModelSpec& spec,
                          const EstimateOptions& options) {
  frame.validate();
  const AnalysisDesigns designs = build_designs(frame, spec);

  std::vector<EstimatorId> ids;
  if (options.estimators) {
    ids = *options.estimators;
  } else {
    for (EstimatorId id : kAllEstimators) {
      if (id != EstimatorId::kOracle) ids.push_back(id);
    }
  }
  if (std::find(ids.begin(), ids.end(), EstimatorId::kNaive) == ids.end()) {
    ids.insert(ids.begin(), EstimatorId::kNaive);
  }
  const bool complete = frame.n_validated() == frame.size();
  if (!complete && std::find(ids.begin(), ids.end(), EstimatorId::kOracle) != ids.end()) {
    throw Error(ErrorCode::kMissingGoldOutcomes,
                "the oracle estimator needs the gold outcome on every row");
  }

  AnalysisOptions analysis_options;
  analysis_options.estimators = ids;
  analysis_options.variant = options.variant;
  analysis_options.b = options.b;
  analysis_options.w = options.w;
  analysis_options.level = options.level;
  const std::string started = utc_now();
  const AnalysisResult result =
      analyze(frame, designs, analysis_options, complete ? &frame.y : nullptr);

  RunReport report;
  ordered_json& meta = report.metadata;
  meta["version"] = kVersion;
  meta["command"] = "estimate";
  meta["n"] = result.n;
  meta["n_validated"] = result.n_validated;
  const ModelSpec defaults = default_model_spec(frame);
  meta["treatment_covariates"] =
      spec.treatment == std::vector<std::string>{"*"} ? defaults.treatment : spec.treatment;
  meta["selection_covariates"] =
      spec.selection == std::vector<std::string>{"*"} ? defaults.selection : spec.selection;
  if (result.rates) {
    meta["p11"] = result.rates->p11;
    meta["p10"] = result.rates->p10;
  }
  meta["b"] = options.b ? json(*options.b) : json("n_V/n");
  if (result.b_opt) meta["b_opt"] = result.b_opt->b;
  meta["w"] = options.w;
  meta["level"] = options.level;
  meta["selection_score_variant"] = variant_name(options.variant);
  if (options.timestamps) {
    meta["started_at"] = started;
    meta["finished_at"] = utc_now();
  }

  report.columns = {{"estimator", "Estimator"}, {"tau", "Estimate"}, {"se", "SE"},
                    {"ci_low", "CI low"},       {"ci_high", "CI high"}, {"weight", "Weight"},
                    {"id", "Id"}};
  const auto opt_cell = [](const std::optional<double>& x) -> Cell {
    return x ? Cell(*x) : Cell(std::monostate{});
  };
  for (const AteEstimate& est : result.estimates) {
    report.rows.push_back({std::string(display_label(est.id)), est.tau, opt_cell(est.se),
                           opt_cell(est.ci_low), opt_cell(est.ci_high),
                           opt_cell(est.weight_used), std::string(to_string(est.id))});
  }
  for (const std::string& w : result.warnings) report.add_warning(w);
  return report;
}

RunReport cmd_estimate(const std::string& data_path,
                       const std::optional<std::string>& model_spec_path,
                       const EstimateOptions& options) {
  const ObservationFrame frame = read_frame_csv_file(data_path);
  ModelSpec spec{{"*"}, {"*"}};
  if (model_spec_path) {
    spec = parse_model_spec(read_file(*model_spec_path, ErrorCode::kConfigParseError),
                            *model_spec_path);
  }
  return estimate_report(frame, spec, options);
}

RunReport cmd_true_ate(const std::optional<std::string>& config_path,
                       const TrueAteOptions& options) {
  ParsedTruthConfig parsed;
  if (config_path) {
    parsed = parse_truth_config(read_file(*config_path, ErrorCode::kConfigParseError),
                                *config_path);
  }
  if (options.full) parsed.truth.populations = kFullTruthPopulations;
  if (options.populations) parsed.truth.populations = *options.populations;
  if (options.population_size) parsed.truth.population_size = *options.population_size;
  if (parsed.truth.populations < 1 || parsed.truth.population_size < 1) {
    throw Error(ErrorCode::kConfigParseError, "populations and population size must be positive");
  }
  const std::uint64_t seed = resolve_seed(options.seed, parsed.seed);
  const std::string started = utc_now();
  const TruthEstimate truth = true_ate_oracle(parsed.dgp, parsed.truth,
                                              derive_seed(seed, kTruthStream, 0), options.workers);

  RunReport report;
  ordered_json& meta = report.metadata;
  meta["version"] = kVersion;
  meta["command"] = "true-ate";
  meta["seed"] = seed;
  if (options.timestamps) {
    meta["started_at"] = started;
    meta["finished_at"] = utc_now();
  }
  report.columns = {{"truth", "True ATE"},
                    {"mc_se", "MC SE"},
                    {"populations", "Populations"},
                    {"population_size", "Population size"}};
  report.rows.push_back({truth.value, truth.mc_se, static_cast<std::int64_t>(truth.populations),
                         static_cast<std::int64_t>(parsed.truth.population_size)});
  return report;
}

SimulatedSample scenario_sample(const ScenarioConfig& config, Index iteration) {
  config.validate();
  return iteration_sample(config, scenario_intercept(config), iteration);
}

}  // namespace mismeasure::cli
