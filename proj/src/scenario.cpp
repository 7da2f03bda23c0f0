#include "polq/scenario.hpp"

#include "json.hpp"

#include <algorithm>
#include <set>

namespace polq {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + " column " + std::to_string(col);
}

[[noreturn]] void syntax(const std::string& path, const std::string& what) {
  throw Error(Errc::SyntaxError, "at " + (path.empty() ? std::string("/") : path) + ": " + what);
}

void expect_keys(const json& obj, const std::string& path, const std::set<std::string>& required,
                 const std::set<std::string>& optional) {
  if (!obj.is_object()) syntax(path, "expected an object");
  for (const auto& [key, _] : obj.items())
    if (!required.contains(key) && !optional.contains(key))
      throw Error(Errc::UnknownField, "unknown field '" + key + "' at " + (path.empty() ? "/" : path));
  for (const auto& key : required)
    if (!obj.contains(key)) syntax(path, "missing required field '" + key + "'");
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) syntax(path, "expected a number");
  return j.get<double>();
}

std::size_t count(const json& j, const std::string& path) {
  if (!j.is_number_integer() || j.get<long long>() < 0) syntax(path, "expected a non-negative integer");
  return j.get<std::size_t>();
}

VectorXd vector(const json& j, const std::string& path) {
  if (!j.is_array()) syntax(path, "expected an array of numbers");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], path + "/" + std::to_string(i));
  return v;
}

MatrixXd matrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) syntax(path, "expected a non-empty array of rows");
  const std::size_t rows = j.size();
  if (!j[0].is_array()) syntax(path + "/0", "expected a row array");
  const std::size_t cols = j[0].size();
  MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::string rp = path + "/" + std::to_string(r);
    if (!j[r].is_array()) syntax(rp, "expected a row array");
    if (j[r].size() != cols) syntax(rp, "rows have different lengths");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number(j[r][c], rp + "/" + std::to_string(c));
  }
  return m;
}

std::vector<MatrixXd> matrix_series(const json& j, const std::string& path, std::size_t nodes) {
  if (!j.is_array()) syntax(path, "expected one matrix per table node");
  if (j.size() != nodes)
    throw Error(Errc::ShapeMismatch, path + " has " + std::to_string(j.size()) + " samples, expected " +
                                         std::to_string(nodes));
  std::vector<MatrixXd> out;
  for (std::size_t i = 0; i < nodes; ++i) out.push_back(matrix(j[i], path + "/" + std::to_string(i)));
  return out;
}

std::vector<VectorXd> vector_series(const json& j, const std::string& path, std::size_t nodes) {
  if (!j.is_array()) syntax(path, "expected one vector per table node");
  if (j.size() != nodes)
    throw Error(Errc::ShapeMismatch, path + " has " + std::to_string(j.size()) + " samples, expected " +
                                         std::to_string(nodes));
  std::vector<VectorXd> out;
  for (std::size_t i = 0; i < nodes; ++i) out.push_back(vector(j[i], path + "/" + std::to_string(i)));
  return out;
}

const std::set<std::string> kCoeffKeys{"A", "B", "a", "C", "D", "H", "h", "K"};
const std::set<std::string> kCostKeys{"Q", "S", "R", "q", "r"};

CoefficientTable<double> parse_coefficients(const json& j, double T, bool& constant) {
  const std::string path = "/coefficients";
  if (!j.is_object() || j.size() != 1 || !(j.contains("constant") || j.contains("table"))) {
    if (j.is_object())
      for (const auto& [key, _] : j.items())
        if (key != "constant" && key != "table")
          throw Error(Errc::UnknownField, "unknown field '" + key + "' at " + path);
    syntax(path, "expected exactly one of 'constant' or 'table'");
  }
  if (j.contains("constant")) {
    constant = true;
    const auto& c = j["constant"];
    const std::string p = path + "/constant";
    expect_keys(c, p, kCoeffKeys, {});
    CoefficientSample<double> s{matrix(c["A"], p + "/A"), matrix(c["B"], p + "/B"), vector(c["a"], p + "/a"),
                                matrix(c["C"], p + "/C"), matrix(c["D"], p + "/D"), matrix(c["H"], p + "/H"),
                                vector(c["h"], p + "/h"), matrix(c["K"], p + "/K")};
    return CoefficientTable<double>::constant(T, s);
  }
  constant = false;
  const auto& t = j["table"];
  const std::string p = path + "/table";
  auto keys = kCoeffKeys;
  keys.insert("steps");
  expect_keys(t, p, keys, {});
  const std::size_t steps = count(t["steps"], p + "/steps");
  if (steps < 1) throw Error(Errc::EmptyGrid, p + "/steps must be at least 1");
  CoefficientTable<double> table;
  table.grid = TimeGrid<double>(T, steps);
  const std::size_t nodes = steps + 1;
  table.A = matrix_series(t["A"], p + "/A", nodes);
  table.B = matrix_series(t["B"], p + "/B", nodes);
  table.a = vector_series(t["a"], p + "/a", nodes);
  table.C = matrix_series(t["C"], p + "/C", nodes);
  table.D = matrix_series(t["D"], p + "/D", nodes);
  table.H = matrix_series(t["H"], p + "/H", nodes);
  table.h = vector_series(t["h"], p + "/h", nodes);
  table.K = matrix_series(t["K"], p + "/K", nodes);
  return table;
}

CostWeights<double> parse_cost(const json& j, double T, double delta, bool& constant) {
  const std::string path = "/cost";
  if (!j.is_object()) syntax(path, "expected an object");
  const bool has_c = j.contains("constant");
  const bool has_t = j.contains("table");
  expect_keys(j, path, {"G", "g"}, {"constant", "table"});
  if (has_c == has_t) syntax(path, "expected exactly one of 'constant' or 'table'");
  const MatrixXd G = matrix(j["G"], path + "/G");
  const VectorXd g = vector(j["g"], path + "/g");
  if (has_c) {
    constant = true;
    const auto& c = j["constant"];
    const std::string p = path + "/constant";
    expect_keys(c, p, kCostKeys, {});
    CostSample<double> s{matrix(c["Q"], p + "/Q"), matrix(c["S"], p + "/S"), matrix(c["R"], p + "/R"),
                         vector(c["q"], p + "/q"), vector(c["r"], p + "/r")};
    return CostWeights<double>::constant(T, G, g, s, delta);
  }
  constant = false;
  const auto& t = j["table"];
  const std::string p = path + "/table";
  auto keys = kCostKeys;
  keys.insert("steps");
  expect_keys(t, p, keys, {});
  const std::size_t steps = count(t["steps"], p + "/steps");
  if (steps < 1) throw Error(Errc::EmptyGrid, p + "/steps must be at least 1");
  CostWeights<double> w;
  w.G = G;
  w.g = g;
  w.delta = delta;
  w.grid = TimeGrid<double>(T, steps);
  const std::size_t nodes = steps + 1;
  w.Q = matrix_series(t["Q"], p + "/Q", nodes);
  w.S = matrix_series(t["S"], p + "/S", nodes);
  w.R = matrix_series(t["R"], p + "/R", nodes);
  w.q = vector_series(t["q"], p + "/q", nodes);
  w.r = vector_series(t["r"], p + "/r", nodes);
  return w;
}

PolicyKind policy_kind(const json& j, const std::string& path) {
  if (!j.is_string()) syntax(path, "expected a policy name");
  const auto s = j.get<std::string>();
  for (auto k : {PolicyKind::FilterFeedback, PolicyKind::ZeroControl, PolicyKind::OpenLoop,
                 PolicyKind::PerturbedFeedback})
    if (s == to_string(k)) return k;
  syntax(path, "unknown policy '" + s + "'");
}

ojson to_json(const MatrixXd& m) {
  ojson rows = ojson::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ojson row = ojson::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

ojson to_json(const VectorXd& v) {
  ojson arr = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

template <typename Seq>
ojson series_json(const Seq& seq) {
  ojson arr = ojson::array();
  for (const auto& m : seq) arr.push_back(to_json(m));
  return arr;
}

bool same(const std::vector<MatrixXd>& a, const std::vector<MatrixXd>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols() || a[i] != b[i]) return false;
  return true;
}

bool same(const std::vector<VectorXd>& a, const std::vector<VectorXd>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size() || a[i] != b[i]) return false;
  return true;
}

bool same(const MatrixXd& a, const MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

}  // namespace

Scenario parse_scenario_unchecked(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::SyntaxError, line_col(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + e.what());
  }
  expect_keys(doc, "", {"dims", "T", "steps", "x0", "coefficients", "cost"},
              {"format_version", "delta", "tolerances", "policy", "mc", "output"});
  if (doc.contains("format_version") && count(doc["format_version"], "/format_version") != 1)
    syntax("/format_version", "unsupported format version");

  Scenario s;
  const auto& dj = doc["dims"];
  expect_keys(dj, "/dims", {"n", "m", "d", "k"}, {});
  s.model.dims = {count(dj["n"], "/dims/n"), count(dj["m"], "/dims/m"), count(dj["d"], "/dims/d"),
                  count(dj["k"], "/dims/k")};
  const double T = number(doc["T"], "/T");
  if (!(T > 0) || !std::isfinite(T)) syntax("/T", "horizon must be positive and finite");
  const std::size_t steps = count(doc["steps"], "/steps");
  if (steps < 1) throw Error(Errc::EmptyGrid, "/steps must be at least 1");
  s.model.T = T;
  s.grid = TimeGrid<double>(T, steps);
  s.model.x0 = vector(doc["x0"], "/x0");

  const double delta = doc.contains("delta") ? number(doc["delta"], "/delta") : 1e-6;
  s.model.coeffs = parse_coefficients(doc["coefficients"], T, s.constant_coefficients);
  s.model.cost = parse_cost(doc["cost"], T, delta, s.constant_cost);

  if (doc.contains("tolerances")) {
    const auto& tj = doc["tolerances"];
    expect_keys(tj, "/tolerances", {}, {"psd_rel", "sym_tol", "cond_K_max"});
    if (tj.contains("psd_rel")) s.tol.psd_rel = number(tj["psd_rel"], "/tolerances/psd_rel");
    if (tj.contains("sym_tol")) s.tol.sym_tol = number(tj["sym_tol"], "/tolerances/sym_tol");
    if (tj.contains("cond_K_max")) s.tol.cond_K_max = number(tj["cond_K_max"], "/tolerances/cond_K_max");
  }

  if (doc.contains("policy")) {
    const auto& pj = doc["policy"];
    expect_keys(pj, "/policy", {"kind"}, {"offset", "table"});
    s.policy.kind = policy_kind(pj["kind"], "/policy/kind");
    if (pj.contains("offset")) s.policy.offset = vector(pj["offset"], "/policy/offset");
    if (pj.contains("table")) {
      // One m-vector per solver node, stored m x nodes.
      const auto& tj = pj["table"];
      if (!tj.is_array()) syntax("/policy/table", "expected one vector per grid node");
      const auto cols = vector_series(tj, "/policy/table", s.grid.nodes());
      MatrixXd table(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i].size() != table.rows()) syntax("/policy/table", "vectors have different lengths");
        table.col(static_cast<Eigen::Index>(i)) = cols[i];
      }
      s.policy.table = table;
    }
    const bool tabled = s.policy.kind == PolicyKind::OpenLoop || s.policy.kind == PolicyKind::PerturbedFeedback;
    if (tabled && s.policy.offset.has_value() == s.policy.table.has_value())
      syntax("/policy", "open_loop and perturbed_feedback need exactly one of 'offset' or 'table'");
    if (!tabled && (s.policy.offset || s.policy.table))
      syntax("/policy", "this policy takes no offset or table");
  }

  if (doc.contains("mc")) {
    const auto& mj = doc["mc"];
    expect_keys(mj, "/mc", {}, {"n_paths", "seed", "probe_times", "perturbation", "threads"});
    if (mj.contains("n_paths")) s.mc.n_paths = count(mj["n_paths"], "/mc/n_paths");
    if (mj.contains("seed")) {
      if (!mj["seed"].is_number_unsigned() && !mj["seed"].is_number_integer()) syntax("/mc/seed", "expected an integer");
      s.mc.seed = mj["seed"].get<std::uint64_t>();
    }
    if (mj.contains("probe_times")) {
      const auto v = vector(mj["probe_times"], "/mc/probe_times");
      s.mc.probe_times.assign(v.data(), v.data() + v.size());
      for (double t : s.mc.probe_times)
        if (t < 0 || t > T) syntax("/mc/probe_times", "probe time outside [0, T]");
    }
    if (mj.contains("perturbation")) s.mc.perturbation = number(mj["perturbation"], "/mc/perturbation");
    if (mj.contains("threads")) s.mc.threads = static_cast<unsigned>(count(mj["threads"], "/mc/threads"));
  }

  if (doc.contains("output")) {
    const auto& oj = doc["output"];
    expect_keys(oj, "/output", {}, {"directory", "formats"});
    if (oj.contains("directory")) {
      if (!oj["directory"].is_string()) syntax("/output/directory", "expected a string");
      s.output.directory = oj["directory"].get<std::string>();
    }
    if (oj.contains("formats")) {
      if (!oj["formats"].is_array()) syntax("/output/formats", "expected an array of strings");
      s.output.formats.clear();
      for (const auto& f : oj["formats"]) {
        if (!f.is_string() || (f != "json" && f != "csv")) syntax("/output/formats", "formats are 'json' and 'csv'");
        s.output.formats.push_back(f.get<std::string>());
      }
    }
  }

  check_shapes(s.model);
  if (s.policy.offset && static_cast<std::size_t>(s.policy.offset->size()) != s.model.dims.m)
    throw Error(Errc::ShapeMismatch, "/policy/offset must have length m");
  if (s.policy.table && static_cast<std::size_t>(s.policy.table->rows()) != s.model.dims.m)
    throw Error(Errc::ShapeMismatch, "/policy/table vectors must have length m");
  return s;
}

Scenario parse_scenario(const std::string& text) {
  Scenario s = parse_scenario_unchecked(text);
  auto report = validate(s.model, s.tol);
  if (!report.passed()) throw ValidationError(std::move(report));
  return s;
}

std::string serialize_scenario(const Scenario& s) {
  const auto& model = s.model;
  ojson doc;
  doc["format_version"] = 1;
  doc["dims"] = {{"n", model.dims.n}, {"m", model.dims.m}, {"d", model.dims.d}, {"k", model.dims.k}};
  doc["T"] = model.T;
  doc["steps"] = s.grid.steps;
  doc["x0"] = to_json(model.x0);
  const auto& c = model.coeffs;
  if (s.constant_coefficients && c.grid.steps == 1) {
    doc["coefficients"]["constant"] = {{"A", to_json(c.A[0])}, {"B", to_json(c.B[0])}, {"a", to_json(c.a[0])},
                                       {"C", to_json(c.C[0])}, {"D", to_json(c.D[0])}, {"H", to_json(c.H[0])},
                                       {"h", to_json(c.h[0])}, {"K", to_json(c.K[0])}};
  } else {
    doc["coefficients"]["table"] = {{"steps", c.grid.steps}, {"A", series_json(c.A)}, {"B", series_json(c.B)},
                                    {"a", series_json(c.a)},      {"C", series_json(c.C)}, {"D", series_json(c.D)},
                                    {"H", series_json(c.H)},      {"h", series_json(c.h)}, {"K", series_json(c.K)}};
  }
  const auto& w = model.cost;
  doc["cost"]["G"] = to_json(w.G);
  doc["cost"]["g"] = to_json(w.g);
  if (s.constant_cost && w.grid.steps == 1) {
    doc["cost"]["constant"] = {{"Q", to_json(w.Q[0])}, {"S", to_json(w.S[0])}, {"R", to_json(w.R[0])},
                               {"q", to_json(w.q[0])}, {"r", to_json(w.r[0])}};
  } else {
    doc["cost"]["table"] = {{"steps", w.grid.steps}, {"Q", series_json(w.Q)}, {"S", series_json(w.S)},
                            {"R", series_json(w.R)},      {"q", series_json(w.q)}, {"r", series_json(w.r)}};
  }
  doc["delta"] = w.delta;
  doc["tolerances"] = {{"psd_rel", s.tol.psd_rel}, {"sym_tol", s.tol.sym_tol}, {"cond_K_max", s.tol.cond_K_max}};
  ojson policy;
  policy["kind"] = std::string(to_string(s.policy.kind));
  if (s.policy.offset) policy["offset"] = to_json(*s.policy.offset);
  if (s.policy.table) {
    ojson cols = ojson::array();
    for (Eigen::Index i = 0; i < s.policy.table->cols(); ++i) cols.push_back(to_json(VectorXd(s.policy.table->col(i))));
    policy["table"] = std::move(cols);
  }
  doc["policy"] = std::move(policy);
  doc["mc"] = {{"n_paths", s.mc.n_paths},
               {"seed", s.mc.seed},
               {"probe_times", s.mc.probe_times},
               {"perturbation", s.mc.perturbation},
               {"threads", s.mc.threads}};
  doc["output"] = {{"directory", s.output.directory}, {"formats", s.output.formats}};
  return doc.dump(2) + "\n";
}

ControlPolicy<double> make_policy(const Scenario& s) {
  const std::size_t nodes = s.grid.nodes();
  const auto m = static_cast<Eigen::Index>(s.model.dims.m);
  auto table = [&]() -> MatrixXd {
    if (s.policy.table) return *s.policy.table;
    if (s.policy.offset) return s.policy.offset->replicate(1, static_cast<Eigen::Index>(nodes));
    return MatrixXd::Zero(m, static_cast<Eigen::Index>(nodes));
  };
  switch (s.policy.kind) {
    case PolicyKind::FilterFeedback: return ControlPolicy<double>::feedback();
    case PolicyKind::ZeroControl: return ControlPolicy<double>::zero();
    case PolicyKind::OpenLoop: return ControlPolicy<double>::open_loop(table());
    case PolicyKind::PerturbedFeedback: return ControlPolicy<double>::perturbed(table());
  }
  return ControlPolicy<double>::feedback();
}

bool equivalent(const Scenario& a, const Scenario& b) {
  const auto& ma = a.model;
  const auto& mb = b.model;
  const auto& ca = ma.coeffs;
  const auto& cb = mb.coeffs;
  const auto& wa = ma.cost;
  const auto& wb = mb.cost;
  return ma.dims == mb.dims && ma.T == mb.T && a.grid == b.grid && same(ma.x0, mb.x0) && ca.grid == cb.grid &&
         same(ca.A, cb.A) && same(ca.B, cb.B) && same(ca.a, cb.a) && same(ca.C, cb.C) && same(ca.D, cb.D) &&
         same(ca.H, cb.H) && same(ca.h, cb.h) && same(ca.K, cb.K) && same(wa.G, wb.G) && same(wa.g, wb.g) &&
         wa.grid == wb.grid && same(wa.Q, wb.Q) && same(wa.S, wb.S) && same(wa.R, wb.R) && same(wa.q, wb.q) &&
         same(wa.r, wb.r) && wa.delta == wb.delta && a.tol == b.tol && a.policy == b.policy && a.mc == b.mc &&
         a.output == b.output;
}

}  // namespace polq
