#include "crb/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include "crb/error.hpp"

namespace crb::io {

static_assert(std::endian::native == std::endian::little, "draws.bin assumes a little-endian host");

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

int CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

CsvTable parse_csv(std::string_view text, std::string_view source) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  CsvTable t;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false, field_quoted = false, row_has_content = false;
  int line = 1, row_line = 1;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_quoted = false;
  };
  auto end_row = [&] {
    end_field();
    const bool blank = row.size() == 1 && row[0].empty() && !row_has_content;
    if (!blank) {
      if (t.header.empty()) {
        t.header = std::move(row);
      } else {
        if (row.size() != t.header.size())
          throw DataError(std::string(source) + " line " + std::to_string(row_line) + ": expected " +
                          std::to_string(t.header.size()) + " fields, found " + std::to_string(row.size()));
        t.rows.push_back(std::move(row));
        t.line.push_back(row_line);
      }
    }
    row.clear();
    row_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty() || field_quoted)
          throw DataError(std::string(source) + " line " + std::to_string(line) + ": stray quote inside a field");
        in_quotes = field_quoted = row_has_content = true;
        break;
      case ',':
        row_has_content = true;
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        row_line = ++line;
        break;
      default:
        if (field_quoted)
          throw DataError(std::string(source) + " line " + std::to_string(line) + ": text after a closing quote");
        field += c;
        row_has_content = true;
    }
  }
  if (in_quotes) throw DataError(std::string(source) + ": unterminated quoted field");
  if (!field.empty() || !row.empty() || row_has_content) end_row();
  if (t.header.empty()) throw DataError(std::string(source) + ": missing header row");
  std::set<std::string> names;
  for (const auto& h : t.header)
    if (!names.insert(h).second) throw DataError(std::string(source) + ": duplicate column '" + h + "'");
  return t;
}

CsvTable read_csv(const fs::path& path) { return parse_csv(read_file(path), path.string()); }

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string format_double(double x) {
  if (std::isnan(x)) return "NA";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

CsvWriter::CsvWriter(const std::vector<std::string>& header) {
  for (const auto& h : header) field(std::string_view(h));
  end_row();
}

CsvWriter& CsvWriter::field(std::string_view s) {
  if (!first_) out_ += ',';
  out_ += csv_field(s);
  first_ = false;
  return *this;
}

CsvWriter& CsvWriter::field(double x) { return field(std::string_view(format_double(x))); }
CsvWriter& CsvWriter::field(int x) { return field(std::string_view(std::to_string(x))); }
CsvWriter& CsvWriter::field(long long x) { return field(std::string_view(std::to_string(x))); }

void CsvWriter::end_row() {
  out_ += '\n';
  first_ = true;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out.flush()) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// JSON reading with path-qualified errors
// ---------------------------------------------------------------------------

json parse_json(std::string_view text, std::string_view source) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    int line = 1, col = 1;
    const std::size_t upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    if (auto p = what.find("syntax error"); p != std::string::npos) what = what.substr(p);
    throw ConfigError(std::string(source) + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
  }
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ConfigError(path + ": " + msg); }

// Tracks which keys of an object were consumed so leftovers can be rejected.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  const json* get(const std::string& key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string at(const std::string& key) const { return path_ + "." + key; }

  void read(const std::string& key, int& out) {
    if (const json* v = get(key)) out = as_int(*v, at(key));
  }
  void read(const std::string& key, double& out) {
    if (const json* v = get(key)) out = as_double(*v, at(key));
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = get(key)) {
      if (!v->is_boolean()) fail(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = get(key)) out = as_string(*v, at(key));
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = get(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_number_integer() && v->get<long long>() >= 0) {
        out = static_cast<std::uint64_t>(v->get<long long>());
      } else {
        fail(at(key), "expected a non-negative integer");
      }
    }
  }
  void read(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = get(key)) {
      if (!v->is_array()) fail(at(key), "expected an array of strings");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_string((*v)[i], at(key) + "[" + std::to_string(i) + "]"));
    }
  }
  void read(const std::string& key, std::vector<double>& out) {
    if (const json* v = get(key)) {
      if (!v->is_array()) fail(at(key), "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_double((*v)[i], at(key) + "[" + std::to_string(i) + "]"));
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.contains(k)) fail(path_ + "." + k, "unknown key");
  }

  static int as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    const auto x = v.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) fail(path, "integer out of range");
    return static_cast<int>(x);
  }
  static double as_double(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }
  static std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename F>
void each(const json* arr, const std::string& path, F&& f) {
  if (!arr) return;
  if (!arr->is_array()) fail(path, "expected an array");
  for (std::size_t i = 0; i < arr->size(); ++i) f((*arr)[i], path + "[" + std::to_string(i) + "]");
}

template <typename T>
T parse_enum(const std::string& s, const std::string& path, T (*parse)(std::string_view)) {
  try {
    return parse(s);
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
}

StudentT parse_student_t(Obj& parent, const std::string& key, StudentT t) {
  if (const json* v = parent.get(key)) {
    Obj o(*v, parent.at(key));
    o.read("df", t.df);
    o.read("location", t.loc);
    o.read("scale", t.scale);
    o.finish();
    if (!(t.df > 0.0)) fail(parent.at(key) + ".df", "must be positive");
    if (!(t.scale > 0.0)) fail(parent.at(key) + ".scale", "must be positive");
  }
  return t;
}

json student_t_json(const StudentT& t) { return json{{"df", t.df}, {"location", t.loc}, {"scale", t.scale}}; }

DistParam primary_param(Family f) {
  switch (f) {
    case Family::CRatio: return DistParam::Eta;
    case Family::HurdleNB: return DistParam::Mu;
    case Family::Binomial:
    case Family::BetaBinomial: return DistParam::Pi;
  }
  return DistParam::Eta;
}

void check_known_checks(const std::vector<std::string>& list, const std::string& path) {
  static const std::set<std::string> known = {"ecdf", "rootogram", "sd", "by_wave"};
  for (std::size_t i = 0; i < list.size(); ++i)
    if (!known.contains(list[i]))
      fail(path + "[" + std::to_string(i) + "]", "unknown check '" + list[i] + "' (expected ecdf, rootogram, sd, by_wave)");
}

}  // namespace

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  RunConfig c;
  Obj root(j, "config");

  root.read("name", c.name);

  std::string input;
  if (!root.get("input")) fail("config.input", "required key is missing");
  root.read("input", input);
  if (input.empty()) fail("config.input", "must not be empty");
  c.input = fs::path(input).is_absolute() ? fs::path(input) : base_dir / input;

  if (const json* s = root.get("schema")) {
    Obj o(*s, "config.schema");
    o.read("response", c.schema.response);
    o.read("n_days", c.schema.n_days);
    o.read("person_id", c.schema.person_id);
    o.read("wave", c.schema.wave);
    std::set<std::string> seen;
    each(o.get("covariates"), o.at("covariates"), [&](const json& v, const std::string& path) {
      Obj co(v, path);
      CovariateDecl d;
      if (!co.get("name")) fail(path + ".name", "required key is missing");
      co.read("name", d.name);
      if (d.name.empty()) fail(path + ".name", "must not be empty");
      if (!seen.insert(d.name).second) fail(path + ".name", "duplicate covariate '" + d.name + "'");
      co.read("levels", d.levels);
      co.read("reference", d.reference);
      if (const json* rc = co.get("recode")) {
        if (!rc->is_object()) fail(path + ".recode", "expected an object mapping level to level");
        for (const auto& [from, to] : rc->items()) d.recode[from] = Obj::as_string(to, path + ".recode." + from);
      }
      co.finish();
      std::set<std::string> lv(d.levels.begin(), d.levels.end());
      if (lv.size() != d.levels.size()) fail(path + ".levels", "duplicate level");
      if (!d.reference.empty() && !d.levels.empty() && !lv.contains(d.reference))
        fail(path + ".reference", "'" + d.reference + "' is not a declared level");
      if (d.name == c.schema.response || d.name == c.schema.person_id)
        fail(path + ".name", "'" + d.name + "' is the response or person-id column");
      c.schema.covariates.push_back(std::move(d));
    });
    o.finish();
  }
  if (c.schema.n_days < 1) fail("config.schema.n_days", "must be >= 1");
  if (c.schema.response.empty()) fail("config.schema.response", "must not be empty");
  if (c.schema.person_id.empty()) fail("config.schema.person_id", "must not be empty");
  if (c.schema.wave.empty()) fail("config.schema.wave", "must not be empty");

  std::vector<std::string> all_covariates;
  for (const auto& d : c.schema.covariates) all_covariates.push_back(d.name);

  if (const json* m = root.get("model")) {
    Obj o(*m, "config.model");
    std::string fam = "cratio";
    o.read("family", fam);
    c.model.family = parse_enum<Family>(fam, o.at("family"), &parse_family);
    std::set<std::string> seen;
    each(o.get("parameters"), o.at("parameters"), [&](const json& v, const std::string& path) {
      Obj po(v, path);
      ParameterConfig p;
      std::string name;
      if (!po.get("name")) fail(path + ".name", "required key is missing");
      po.read("name", name);
      p.param = parse_enum<DistParam>(name, path + ".name", &parse_dist_param);
      p.link = natural_link(p.param);
      std::string link;
      po.read("link", link);
      if (!link.empty()) p.link = parse_enum<Link>(link, path + ".link", &parse_link);
      if (p.link != natural_link(p.param))
        fail(path + ".link", "'" + name + "' requires the " + std::string(link_name(natural_link(p.param))) + " link");
      p.covariates = all_covariates;
      po.read("covariates", p.covariates);
      for (std::size_t i = 0; i < p.covariates.size(); ++i)
        if (std::find(all_covariates.begin(), all_covariates.end(), p.covariates[i]) == all_covariates.end())
          fail(path + ".covariates[" + std::to_string(i) + "]", "'" + p.covariates[i] + "' is not a declared covariate");
      po.read("random_intercept", p.random_intercept);
      po.finish();
      if (!seen.insert(name).second) fail(path + ".name", "duplicate parameter '" + name + "'");
      c.model.parameters.push_back(std::move(p));
    });
    o.finish();
  }
  if (c.model.parameters.empty()) {
    const auto p = primary_param(c.model.family);
    c.model.parameters.push_back({p, natural_link(p), all_covariates, true});
  }

  if (const json* p = root.get("priors")) {
    Obj o(*p, "config.priors");
    c.priors.threshold = parse_student_t(o, "threshold", c.priors.threshold);
    c.priors.intercept = parse_student_t(o, "intercept", c.priors.intercept);
    c.priors.sd = parse_student_t(o, "sd", c.priors.sd);
    c.priors.aux_scalar = parse_student_t(o, "aux_scalar", c.priors.aux_scalar);
    o.read("horseshoe_global_scale", c.priors.horseshoe_global_scale);
    o.read("horseshoe_local_scale", c.priors.horseshoe_local_scale);
    o.read("lkj_eta", c.priors.lkj_eta);
    o.finish();
    if (!(c.priors.horseshoe_global_scale > 0.0)) fail("config.priors.horseshoe_global_scale", "must be positive");
    if (!(c.priors.horseshoe_local_scale > 0.0)) fail("config.priors.horseshoe_local_scale", "must be positive");
    if (!(c.priors.lkj_eta > 0.0)) fail("config.priors.lkj_eta", "must be positive");
  }

  if (const json* s = root.get("sampler")) {
    Obj o(*s, "config.sampler");
    auto& sc = c.sampler;
    o.read("chains", sc.n_chains);
    o.read("iterations", sc.n_iterations);
    o.read("warmup", sc.n_warmup);
    o.read("thin", sc.thin);
    o.read("target_acceptance", sc.target_acceptance);
    o.read("max_tree_depth", sc.max_tree_depth);
    o.read("fixed_leapfrog_steps", sc.fixed_leapfrog_steps);
    o.read("init_radius", sc.init_radius);
    o.read("threads", sc.n_threads);
    o.finish();
    try {
      sc.validate();
    } catch (const ConfigError& e) {
      fail("config.sampler", e.what());
    }
  }

  std::string output;
  root.read("output", output);
  c.output = output.empty() ? fs::path() : (fs::path(output).is_absolute() ? fs::path(output) : base_dir / output);

  if (const json* ch = root.get("checks")) {
    Obj o(*ch, "config.checks");
    o.read("list", c.checks.list);
    check_known_checks(c.checks.list, "config.checks.list");
    o.read("ecdf_draws", c.checks.ecdf_draws);
    o.read("sd_draws", c.checks.sd_draws);
    o.read("rootogram_draws", c.checks.rootogram_draws);
    o.finish();
    if (c.checks.ecdf_draws < 1) fail("config.checks.ecdf_draws", "must be >= 1");
    if (c.checks.sd_draws < 1) fail("config.checks.sd_draws", "must be >= 1");
    if (c.checks.rootogram_draws < 1) fail("config.checks.rootogram_draws", "must be >= 1");
  }

  root.read("seed", c.seed);
  c.sampler.seed = c.seed;
  root.finish();
  if (c.name.empty()) c.name = std::string(family_name(c.model.family));
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config '" + path.string() + "'");
  }
  return parse_run_config(parse_json(text, path.string()), path.parent_path());
}

json run_config_json(const RunConfig& c) {
  json cov = json::array();
  for (const auto& d : c.schema.covariates) {
    json rc = json::object();
    for (const auto& [k, v] : d.recode) rc[k] = v;
    cov.push_back({{"name", d.name}, {"levels", d.levels}, {"reference", d.reference}, {"recode", rc}});
  }
  json params = json::array();
  for (const auto& p : c.model.parameters)
    params.push_back({{"name", std::string(dist_param_name(p.param))},
                      {"link", std::string(link_name(p.link))},
                      {"covariates", p.covariates},
                      {"random_intercept", p.random_intercept}});
  const auto& s = c.sampler;
  return json{
      {"name", c.name},
      {"input", c.input.generic_string()},
      {"schema",
       {{"response", c.schema.response},
        {"n_days", c.schema.n_days},
        {"person_id", c.schema.person_id},
        {"wave", c.schema.wave},
        {"covariates", cov}}},
      {"model", {{"family", std::string(family_name(c.model.family))}, {"parameters", params}}},
      {"priors",
       {{"threshold", student_t_json(c.priors.threshold)},
        {"intercept", student_t_json(c.priors.intercept)},
        {"sd", student_t_json(c.priors.sd)},
        {"aux_scalar", student_t_json(c.priors.aux_scalar)},
        {"horseshoe_global_scale", c.priors.horseshoe_global_scale},
        {"horseshoe_local_scale", c.priors.horseshoe_local_scale},
        {"lkj_eta", c.priors.lkj_eta}}},
      {"sampler",
       {{"chains", s.n_chains},
        {"iterations", s.n_iterations},
        {"warmup", s.n_warmup},
        {"thin", s.thin},
        {"target_acceptance", s.target_acceptance},
        {"max_tree_depth", s.max_tree_depth},
        {"fixed_leapfrog_steps", s.fixed_leapfrog_steps},
        {"init_radius", s.init_radius}}},
      {"output", c.output.generic_string()},
      {"checks",
       {{"list", c.checks.list},
        {"ecdf_draws", c.checks.ecdf_draws},
        {"sd_draws", c.checks.sd_draws},
        {"rootogram_draws", c.checks.rootogram_draws}}},
      {"seed", c.seed},
  };
}

SimRunConfig parse_sim_config(const json& j, const fs::path& base_dir) {
  SimRunConfig out;
  auto& s = out.sim;
  Obj root(j, "config");
  root.read("n_persons", s.n_persons);
  root.read("n_waves", s.n_waves);
  root.read("n_days", s.n_days);
  root.read("person_sd", s.person_sd);
  root.read("pattern_mixture", s.pattern_mixture);
  root.read("tilt", s.tilt);
  root.read("jitter", s.jitter);
  root.read("dropout", s.dropout);
  root.read("wave_effects", s.wave_effects);
  root.read("seed", s.seed);
  if (const json* cv = root.get("covariates")) {
    each(cv, root.at("covariates"), [&](const json& v, const std::string& path) {
      Obj o(v, path);
      SimCovariate c;
      o.read("name", c.name);
      o.read("levels", c.levels);
      o.read("probs", c.probs);
      o.read("effects", c.effects);
      o.read("varies_by_wave", c.varies_by_wave);
      o.finish();
      if (c.name.empty()) fail(path + ".name", "required key is missing");
      s.covariates.push_back(std::move(c));
    });
  } else {
    s.covariates = default_sim_covariates();
  }
  std::string output;
  root.read("output", output);
  if (!output.empty()) out.output = fs::path(output).is_absolute() ? fs::path(output) : base_dir / output;
  root.finish();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    fail("config", e.what());
  }
  return out;
}

SimRunConfig load_sim_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config '" + path.string() + "'");
  }
  return parse_sim_config(parse_json(text, path.string()), path.parent_path());
}

// ---------------------------------------------------------------------------
// data
// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA"; }

}  // namespace

Ingested read_records(const CsvTable& table, const SchemaConfig& schema, int max_days, std::string_view source) {
  const std::string src(source);
  auto need = [&](const std::string& name) {
    const int c = table.column(name);
    if (c < 0) throw DataError(src + ": missing column '" + name + "'");
    return static_cast<std::size_t>(c);
  };
  const auto c_resp = need(schema.response);
  const auto c_person = need(schema.person_id);
  const auto c_wave = need(schema.wave);
  std::vector<std::pair<std::string, std::size_t>> c_cov;
  for (const auto& d : schema.covariates) c_cov.emplace_back(d.name, need(d.name));

  Ingested out;
  std::vector<int> lines;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = src + " line " + std::to_string(table.line[r]);
    ObservationRecord rec;
    rec.person_id = trim(row[c_person]);
    rec.wave = trim(row[c_wave]);
    if (rec.person_id.empty()) throw DataError(where + ": empty " + schema.person_id);
    if (rec.wave.empty()) throw DataError(where + ": empty " + schema.wave);
    const std::string resp = trim(row[c_resp]);
    bool incomplete = is_missing(resp);
    if (!incomplete) {
      int d = 0;
      const auto [p, ec] = std::from_chars(resp.data(), resp.data() + resp.size(), d);
      if (ec != std::errc() || p != resp.data() + resp.size())
        throw DataError(where + ": response '" + resp + "' is not an integer");
      if (d < 0 || (max_days >= 0 && d > max_days))
        throw DataError(where + ": response " + resp + " outside 0.." +
                        (max_days >= 0 ? std::to_string(max_days) : std::string("inf")));
      rec.days = d;
    }
    for (const auto& [name, col] : c_cov) {
      std::string v = trim(row[col]);
      incomplete = incomplete || is_missing(v);
      rec.covariates[name] = std::move(v);
    }
    if (incomplete) {
      ++out.dropped;
      continue;
    }
    out.records.push_back(std::move(rec));
    lines.push_back(table.line[r]);
  }

  DataSchema ds{schema.covariates};
  apply_recodes(out.records, ds);
  for (std::size_t i = 0; i < out.records.size(); ++i)
    for (const auto& d : schema.covariates) {
      if (d.levels.empty()) continue;
      const auto& v = out.records[i].covariates.at(d.name);
      if (std::find(d.levels.begin(), d.levels.end(), v) == d.levels.end())
        throw DataError(src + " line " + std::to_string(lines[i]) + ": unknown level '" + v + "' for covariate '" +
                        d.name + "'");
    }
  canonical_sort(out.records);
  for (std::size_t i = 1; i < out.records.size(); ++i) {
    const auto& a = out.records[i - 1];
    const auto& b = out.records[i];
    if (a.person_id == b.person_id && a.wave == b.wave)
      throw DataError(src + ": duplicate row for " + schema.person_id + " '" + a.person_id + "', " + schema.wave + " '" +
                      a.wave + "'");
  }
  if (out.records.empty()) throw DataError(src + ": no complete rows");
  return out;
}

std::string records_csv(const std::vector<ObservationRecord>& records, const SchemaConfig& schema) {
  std::vector<std::string> header = {schema.person_id, schema.wave, schema.response};
  std::vector<std::string> covs;
  for (const auto& d : schema.covariates)
    if (d.name != schema.wave) covs.push_back(d.name);
  header.insert(header.end(), covs.begin(), covs.end());
  CsvWriter w(header);
  for (const auto& r : records) {
    w.field(std::string_view(r.person_id)).field(std::string_view(r.wave)).field(r.days);
    for (const auto& c : covs) {
      const auto it = r.covariates.find(c);
      w.field(std::string_view(it == r.covariates.end() ? std::string("NA") : it->second));
    }
    w.end_row();
  }
  return w.str();
}

SchemaConfig sim_schema(const SimPanel& panel, int n_days) {
  SchemaConfig s;
  s.n_days = n_days;
  s.covariates = panel.schema.covariates;
  return s;
}

// ---------------------------------------------------------------------------
// draws
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'R', 'B', 'D', 'R', 'A', 'W', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view& in, const std::string& source) {
  if (in.size() < sizeof(T)) throw DataError(source + ": truncated draws file");
  T v;
  std::memcpy(&v, in.data(), sizeof(T));
  in.remove_prefix(sizeof(T));
  return v;
}

}  // namespace

std::string draws_bin(const PosteriorDraws& d) {
  std::string out;
  const auto n = static_cast<std::uint64_t>(d.n_draws());
  const auto dim = static_cast<std::uint64_t>(d.dim());
  out.reserve(8 + 4 + 16 + 4 + n * 4 + n * dim * 8);
  out.append(kMagic, 8);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, n);
  put<std::uint64_t>(out, dim);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.n_chains()));
  for (int c : d.chain_id) put<std::uint32_t>(out, static_cast<std::uint32_t>(c));
  for (Eigen::Index r = 0; r < d.n_draws(); ++r)
    for (Eigen::Index j = 0; j < d.dim(); ++j) put<double>(out, d.draws(r, j));
  return out;
}

PosteriorDraws parse_draws_bin(std::string_view bytes, std::string_view source) {
  const std::string src(source);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw DataError(src + ": not a draws file");
  bytes.remove_prefix(8);
  const auto version = take<std::uint32_t>(bytes, src);
  if (version != kVersion) throw DataError(src + ": unsupported draws format version " + std::to_string(version));
  const auto n = take<std::uint64_t>(bytes, src);
  const auto dim = take<std::uint64_t>(bytes, src);
  const auto n_chains = take<std::uint32_t>(bytes, src);
  if (bytes.size() != n * 4 + n * dim * 8) throw DataError(src + ": size does not match its header");
  PosteriorDraws d;
  d.chain_id.resize(n);
  for (auto& c : d.chain_id) {
    c = static_cast<int>(take<std::uint32_t>(bytes, src));
    if (c < 0 || static_cast<std::uint32_t>(c) >= n_chains) throw DataError(src + ": chain id out of range");
  }
  d.draws.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index r = 0; r < d.draws.rows(); ++r)
    for (Eigen::Index j = 0; j < d.draws.cols(); ++j) d.draws(r, j) = take<double>(bytes, src);
  d.chains.resize(n_chains);
  for (std::uint32_t c = 0; c < n_chains; ++c) d.chains[c].chain = static_cast<int>(c);
  return d;
}

std::string draws_csv(const PosteriorDraws& d) {
  std::vector<std::string> header = {"draw", "chain"};
  header.insert(header.end(), d.names.begin(), d.names.end());
  CsvWriter w(header);
  for (Eigen::Index r = 0; r < d.n_draws(); ++r) {
    w.field(static_cast<int>(r + 1)).field(d.chain_id[static_cast<std::size_t>(r)] + 1);
    for (Eigen::Index j = 0; j < d.dim(); ++j) w.field(d.draws(r, j));
    w.end_row();
  }
  return w.str();
}

std::string sampler_csv(const PosteriorDraws& d) {
  CsvWriter w({"draw", "chain", "lp__", "accept_stat__", "treedepth__", "divergent__", "energy__"});
  for (std::size_t r = 0; r < d.chain_id.size(); ++r) {
    w.field(static_cast<int>(r + 1)).field(d.chain_id[r] + 1);
    w.field(d.lp[r]).field(d.accept_stat[r]).field(d.tree_depth[r]).field(d.divergent[r]).field(d.energy[r]);
    w.end_row();
  }
  return w.str();
}

}  // namespace crb::io
