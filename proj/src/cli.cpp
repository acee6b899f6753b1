#include "crb/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "crb/diagnostics.hpp"
#include "crb/error.hpp"
#include "crb/loo.hpp"
#include "crb/simulate.hpp"

namespace crb::cli {

namespace {

using io::json;

std::string strf(const char* fmt, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  return buf;
}

std::string opt_str(const std::optional<double>& v, const char* fmt) { return v ? strf(fmt, *v) : std::string("NA"); }

std::string hex64(std::uint64_t v) { return strf("%016llx", static_cast<unsigned long long>(v)); }

// Left-aligned first column, right-aligned rest.
std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (width.size() <= c) width.push_back(0);
      width[c] = std::max(width[c], r[c].size());
    }
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      const std::string pad(width[c] - r[c].size(), ' ');
      if (c == 0) {
        out += r[c] + pad;
      } else {
        out += "  " + pad + r[c];
      }
    }
    out += '\n';
  }
  return out;
}

int parse_threads_env() {
  const char* v = std::getenv(kThreadsEnv);
  if (!v || !*v) return -1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 0 || n > 4096) throw ConfigError(std::string(kThreadsEnv) + ": expected a non-negative integer");
  return static_cast<int>(n);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Rng check_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffU), static_cast<std::uint32_t>(seed >> 32), 0x63686bU};
  return Rng(seq);
}

fs::path require_file(const fs::path& dir, const char* name) {
  const auto p = dir / name;
  if (!fs::is_regular_file(p)) throw DataError("missing fit artifact '" + p.string() + "'");
  return p;
}

// ---------------------------------------------------------------------------
// fit artifacts
// ---------------------------------------------------------------------------

json layout_json(const PreparedModel& pm, const PosteriorDraws& d) {
  json blocks = json::array();
  for (const auto& b : pm.model.layout.blocks())
    blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"length", b.length}});
  return json{
      {"format", "CRBDRAWS"},
      {"version", 1},
      {"family", std::string(family_name(pm.model.family))},
      {"n_days", pm.model.n_days.days()},
      {"n_obs", pm.data.n_obs()},
      {"n_persons", pm.model.n_persons},
      {"fingerprint", hex64(pm.data.fingerprint())},
      {"n_draws", d.n_draws()},
      {"n_chains", d.n_chains()},
      {"dim", d.dim()},
      {"design_columns", pm.model.column_names},
      {"blocks", blocks},
      {"coordinates", pm.model.layout.coordinate_names()},
  };
}

json loo_json(const LooResult& r) {
  return json{
      {"elpd_loo", r.elpd_loo},
      {"se_elpd_loo", r.se_elpd_loo},
      {"p_loo", r.p_loo},
      {"se_p_loo", r.se_p_loo},
      {"looic", r.looic},
      {"se_looic", r.se_looic},
      {"lpd", r.lpd},
      {"n_obs", r.n_obs()},
      {"n_draws", r.n_draws},
      {"few_draws", r.few_draws},
      {"fingerprint", hex64(r.fingerprint)},
      {"pareto_k",
       {{"good", r.count(ParetoK::Good)},
        {"ok", r.count(ParetoK::Ok)},
        {"bad", r.count(ParetoK::Bad)},
        {"undefined", r.count(ParetoK::Undefined)}}},
  };
}

std::string loo_pointwise_csv(const LooResult& r) {
  io::CsvWriter w({"row", "elpd_loo", "p_loo", "pareto_k", "k_class", "r_eff"});
  for (int i = 0; i < r.n_obs(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    w.field(i + 1).field(r.pointwise_elpd[u]).field(r.pointwise_p_loo[u]).field(r.pareto_k[u]);
    w.field(pareto_k_label(r.k_class[u])).field(r.r_eff[u]);
    w.end_row();
  }
  return w.str();
}

double json_num(const json& j, const char* key, const std::string& src) {
  const auto it = j.find(key);
  if (it == j.end()) throw DataError(src + ": missing '" + key + "'");
  if (it->is_null()) return std::nan("");
  if (!it->is_number()) throw DataError(src + ": '" + key + "' is not a number");
  return it->get<double>();
}

double parse_num(const std::string& s, const std::string& where) {
  if (s == "NA") return std::nan("");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw DataError(where + ": '" + s + "' is not a number");
  return v;
}

LooResult load_loo(const fs::path& dir) {
  const auto jpath = require_file(dir, "loo.json");
  const auto cpath = require_file(dir, "loo_pointwise.csv");
  json j;
  try {
    j = io::parse_json(io::read_file(jpath), jpath.string());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  const std::string src = jpath.string();
  LooResult r;
  r.elpd_loo = json_num(j, "elpd_loo", src);
  r.se_elpd_loo = json_num(j, "se_elpd_loo", src);
  r.p_loo = json_num(j, "p_loo", src);
  r.se_p_loo = json_num(j, "se_p_loo", src);
  r.looic = json_num(j, "looic", src);
  r.se_looic = json_num(j, "se_looic", src);
  r.lpd = json_num(j, "lpd", src);
  r.n_draws = static_cast<int>(json_num(j, "n_draws", src));
  r.few_draws = j.value("few_draws", false);
  r.fingerprint = std::stoull(j.value("fingerprint", std::string("0")), nullptr, 16);

  const auto t = io::read_csv(cpath);
  const std::vector<std::string> want = {"row", "elpd_loo", "p_loo", "pareto_k", "k_class", "r_eff"};
  if (t.header != want) throw DataError(cpath.string() + ": unexpected columns");
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string where = cpath.string() + " line " + std::to_string(t.line[i]);
    r.pointwise_elpd.push_back(parse_num(t.rows[i][1], where));
    r.pointwise_p_loo.push_back(parse_num(t.rows[i][2], where));
    const double k = parse_num(t.rows[i][3], where);
    r.pareto_k.push_back(k);
    r.k_class.push_back(classify_k(k));
    r.r_eff.push_back(parse_num(t.rows[i][5], where));
  }
  if (r.n_obs() != static_cast<int>(json_num(j, "n_obs", src)))
    throw DataError(cpath.string() + ": row count disagrees with loo.json");
  return r;
}

// ---------------------------------------------------------------------------
// verbs
// ---------------------------------------------------------------------------

struct FitOptions {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::optional<int> chains;
  std::optional<int> threads;
};

int cmd_fit(const FitOptions& opt, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = io::load_run_config(opt.config);
  if (!opt.output.empty()) cfg.output = opt.output;
  if (cfg.output.empty()) throw ConfigError("config.output: no output directory (set it or pass --output)");
  if (opt.seed) cfg.seed = cfg.sampler.seed = *opt.seed;
  if (opt.chains) cfg.sampler.n_chains = *opt.chains;
  if (opt.threads) {
    cfg.sampler.n_threads = *opt.threads;
  } else if (const int env = parse_threads_env(); env >= 0) {
    cfg.sampler.n_threads = env;
  }
  cfg.sampler.validate();

  const Family fam = cfg.model.family;
  const auto table = io::read_csv(cfg.input);
  auto ing = io::read_records(table, cfg.schema, family_bounded(fam) ? cfg.schema.n_days : -1, cfg.input.string());
  err << "read " << ing.records.size() << " rows from " << cfg.input.string();
  if (ing.dropped > 0) err << " (dropped " << ing.dropped << " incomplete)";
  err << '\n';

  const fs::path outdir = cfg.output;
  auto pm = prepare_model(cfg, std::move(ing.records));
  err << "fitting " << family_name(fam) << ": " << pm.model.layout.dim() << " parameters, " << cfg.sampler.n_chains
      << " chains x " << cfg.sampler.n_iterations << " iterations\n";

  auto draws = run_chains(pm.model, pm.data, cfg.sampler);
  err << strf("sampling finished in %.1f s\n", seconds_since(t0));

  // Stored config is self-contained: it points at the copied data.
  auto stored = pm.config;
  stored.input = "data.csv";
  stored.output = ".";
  io::write_file_atomic(outdir / "config.json", run_config_json(stored).dump(2) + "\n");
  io::write_file_atomic(outdir / "data.csv", io::records_csv(pm.records, pm.config.schema));
  io::write_file_atomic(outdir / "layout.json", layout_json(pm, draws).dump(2) + "\n");
  io::write_file_atomic(outdir / "draws.bin", io::draws_bin(draws));
  io::write_file_atomic(outdir / "draws.csv", io::draws_csv(draws));
  io::write_file_atomic(outdir / "sampler.csv", io::sampler_csv(draws));

  // Convergence on constrained population quantities, plus a sweep of the
  // raw coordinates for the log.
  const auto pop = population_draws(draws, pm.model);
  io::CsvWriter conv({"name", "mean", "sd", "q05", "q50", "q95", "rhat", "ess_bulk", "ess_tail"});
  std::vector<std::vector<std::string>> table_rows = {{"parameter", "mean", "sd", "q05", "q50", "q95", "rhat", "ess_bulk", "ess_tail"}};
  for (int c = 0; c < static_cast<int>(pop.names.size()); ++c) {
    const auto row = convergence_row(pop.names[static_cast<std::size_t>(c)], pop.by_chain(c));
    conv.field(std::string_view(row.name)).field(row.mean).field(row.sd).field(row.q05).field(row.q50).field(row.q95);
    conv.field(row.rhat.value_or(std::nan(""))).field(row.ess_bulk.value_or(std::nan(""))).field(row.ess_tail.value_or(std::nan("")));
    conv.end_row();
    table_rows.push_back({row.name, strf("%.3f", row.mean), strf("%.3f", row.sd), strf("%.3f", row.q05),
                          strf("%.3f", row.q50), strf("%.3f", row.q95), opt_str(row.rhat, "%.3f"),
                          opt_str(row.ess_bulk, "%.0f"), opt_str(row.ess_tail, "%.0f")});
  }
  io::write_file_atomic(outdir / "convergence.csv", conv.str());

  double max_rhat = 0.0, min_bulk = INFINITY, min_tail = INFINITY;
  bool any_rhat = false;
  for (const auto& r : convergence_report(draws)) {
    if (r.rhat) {
      max_rhat = std::max(max_rhat, *r.rhat);
      any_rhat = true;
    }
    if (r.ess_bulk) min_bulk = std::min(min_bulk, *r.ess_bulk);
    if (r.ess_tail) min_tail = std::min(min_tail, *r.ess_tail);
  }

  auto loo = psis_loo(pointwise_loglik(draws, pm.model, pm.data));
  loo.fingerprint = pm.data.fingerprint();
  io::write_file_atomic(outdir / "loo.json", loo_json(loo).dump(2) + "\n");
  io::write_file_atomic(outdir / "loo_pointwise.csv", loo_pointwise_csv(loo));

  std::ostringstream log;
  log << "name: " << cfg.name << '\n';
  log << "family: " << family_name(fam) << '\n';
  log << "rows: " << pm.data.n_obs() << " (dropped " << ing.dropped << " incomplete)\n";
  log << "persons: " << pm.model.n_persons << '\n';
  log << "parameters: " << pm.model.layout.dim() << '\n';
  log << "fingerprint: " << hex64(pm.data.fingerprint()) << '\n';
  log << "sampler: " << cfg.sampler.n_chains << " chains x " << cfg.sampler.n_iterations << " iterations ("
      << cfg.sampler.n_warmup << " warm-up, thin " << cfg.sampler.thin << "), " << draws.n_draws() << " draws retained\n";
  log << "seed: " << cfg.seed << '\n';
  int divergences = 0;
  for (const auto& ch : draws.chains) {
    divergences += ch.divergences;
    log << strf("chain %d: step size %.6g, divergences %d (warm-up %d), tree depth limit hits %d, mean acceptance %.4f, leapfrog steps %llu\n",
                ch.chain + 1, ch.step_size, ch.divergences, ch.warmup_divergences, ch.max_depth_hits,
                ch.mean_accept_stat, static_cast<unsigned long long>(ch.n_leapfrog));
  }
  log << "max rhat (all coordinates): " << (any_rhat ? strf("%.4f", max_rhat) : std::string("NA")) << '\n';
  log << "min ess bulk / tail: " << (std::isfinite(min_bulk) ? strf("%.0f", min_bulk) : std::string("NA")) << " / "
      << (std::isfinite(min_tail) ? strf("%.0f", min_tail) : std::string("NA")) << '\n';
  log << strf("loo: elpd %.3f (%.3f), p_loo %.3f (%.3f), looic %.3f (%.3f)\n", loo.elpd_loo, loo.se_elpd_loo, loo.p_loo,
              loo.se_p_loo, loo.looic, loo.se_looic);
  log << "pareto k: good " << loo.count(ParetoK::Good) << ", ok " << loo.count(ParetoK::Ok) << ", bad "
      << loo.count(ParetoK::Bad) << ", undefined " << loo.count(ParetoK::Undefined) << '\n';
  io::write_file_atomic(outdir / "fit.log", log.str());

  if (divergences > 0) err << "warning: " << divergences << " divergent transitions after warm-up\n";
  if (any_rhat && max_rhat > 1.01) err << strf("warning: max rhat %.4f exceeds 1.01\n", max_rhat);
  if (loo.count(ParetoK::Bad) > 0) err << "warning: " << loo.count(ParetoK::Bad) << " observations with Pareto k >= 0.7\n";
  if (loo.few_draws) err << "warning: fewer than 100 draws for PSIS-LOO\n";
  err << strf("wrote %s in %.1f s\n", outdir.string().c_str(), seconds_since(t0));

  out << render_table(table_rows);
  return kExitOk;
}

struct CheckOptions {
  std::string fit;
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
};

// Observations whose group equals level, with the replicates restricted to them.
struct Subset {
  std::vector<int> observed;
  PredictiveDrawSet rep;
};

Subset subset(const std::vector<int>& observed, const PredictiveDrawSet& rep, const std::vector<std::string>& groups,
              const std::string& level) {
  Subset s;
  s.rep.draw_index = rep.draw_index;
  s.rep.y_rep.resize(rep.y_rep.size());
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (groups[i] != level) continue;
    s.observed.push_back(observed[i]);
    for (std::size_t d = 0; d < rep.y_rep.size(); ++d) s.rep.y_rep[d].push_back(rep.y_rep[d][i]);
  }
  return s;
}

void write_ecdf(io::CsvWriter& w, const EcdfCheck& e, const EcdfCurve& curve, const std::string* group) {
  for (std::size_t d = 0; d < e.draw_index.size(); ++d)
    for (int c = 0; c < e.support.size(); ++c) {
      if (group) w.field(std::string_view(*group));
      w.field(std::string_view(e.support.label(c))).field(curve.observed[static_cast<std::size_t>(c)]);
      w.field(e.draw_index[d] + 1).field(curve.replicates[d][static_cast<std::size_t>(c)]);
      w.end_row();
    }
}

void write_rootogram(io::CsvWriter& w, const std::vector<RootogramRow>& rows, const std::string* group) {
  for (const auto& r : rows) {
    if (group) w.field(std::string_view(*group));
    w.field(std::string_view(r.count)).field(r.sqrt_observed).field(r.sqrt_expected).field(r.lower).field(r.upper);
    w.field(r.residual);
    w.end_row();
  }
}

int cmd_check(const CheckOptions& opt, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto fit = load_fit(opt.fit);
  auto checks = fit.prepared.config.checks;
  auto seed = fit.prepared.config.seed;
  if (!opt.config.empty()) {
    const auto cfg = io::load_run_config(opt.config);
    checks = cfg.checks;
    seed = cfg.seed;
  }
  if (opt.seed) seed = *opt.seed;
  const fs::path outdir = opt.output.empty() ? fit.dir : fs::path(opt.output);
  const auto has = [&](const char* name) {
    return std::find(checks.list.begin(), checks.list.end(), name) != checks.list.end();
  };
  const int available = static_cast<int>(fit.draws.n_draws());
  const auto clamp_draws = [&](int wanted, const char* what) {
    if (wanted > available) {
      err << "warning: " << what << " requests " << wanted << " predictive draws; using all " << available << '\n';
      return available;
    }
    return wanted;
  };

  const auto& model = fit.prepared.model;
  const auto& data = fit.prepared.data;
  const CountSupport support{model.n_days.days(), !family_bounded(model.family)};
  const auto& obs = data.days;
  const auto& waves = data.waves;
  const auto levels = group_levels(waves);
  Rng rng = check_rng(seed);

  json summary = {{"fit", fit.prepared.config.name},
                  {"family", std::string(family_name(model.family))},
                  {"n_obs", data.n_obs()},
                  {"seed", seed},
                  {"checks", checks.list}};
  std::vector<std::vector<std::string>> stdout_rows;

  if (has("ecdf")) {
    const auto rep = posterior_predict(fit.draws, model, data, clamp_draws(checks.ecdf_draws, "ecdf"), rng);
    const auto e = ecdf_check(obs, rep, support);
    io::CsvWriter w({"count", "observed_cdf", "draw_id", "replicate_cdf"});
    write_ecdf(w, e, e.curves.front(), nullptr);
    io::write_file_atomic(outdir / "ecdf.csv", w.str());
    double max_gap = 0.0;
    for (const auto& r : e.curves.front().replicates)
      for (std::size_t c = 0; c < r.size(); ++c) max_gap = std::max(max_gap, std::abs(r[c] - e.curves.front().observed[c]));
    summary["ecdf"] = {{"draws", e.draw_index.size()}, {"max_abs_difference", max_gap}};
    if (has("by_wave")) {
      const auto eg = ecdf_check(obs, rep, support, &waves);
      io::CsvWriter wg({"wave", "count", "observed_cdf", "draw_id", "replicate_cdf"});
      for (const auto& curve : eg.curves) write_ecdf(wg, eg, curve, &curve.group);
      io::write_file_atomic(outdir / "ecdf_by_wave.csv", wg.str());
    }
  }

  if (has("rootogram")) {
    const auto rep = posterior_predict(fit.draws, model, data, clamp_draws(checks.rootogram_draws, "rootogram"), rng);
    const auto rows = rootogram_check(obs, rep, support);
    const std::vector<std::string> header = {"count", "sqrt_observed", "sqrt_expected", "lower", "upper", "residual"};
    io::CsvWriter w(header);
    write_rootogram(w, rows, nullptr);
    io::write_file_atomic(outdir / "rootogram.csv", w.str());
    double abs_sum = 0.0;
    for (const auto& r : rows) abs_sum += std::abs(r.residual);
    summary["rootogram"] = {{"draws", rep.draw_index.size()}, {"sum_abs_residual", abs_sum}};
    stdout_rows.push_back({"count", "sqrt_observed", "sqrt_expected", "lower", "upper", "residual"});
    for (const auto& r : rows)
      stdout_rows.push_back({r.count, strf("%.3f", r.sqrt_observed), strf("%.3f", r.sqrt_expected), strf("%.3f", r.lower),
                             strf("%.3f", r.upper), strf("%.3f", r.residual)});
    if (has("by_wave")) {
      auto hw = header;
      hw.insert(hw.begin(), "wave");
      io::CsvWriter wg(hw);
      for (const auto& lv : levels) {
        const auto s = subset(obs, rep, waves, lv);
        write_rootogram(wg, rootogram_check(s.observed, s.rep, support), &lv);
      }
      io::write_file_atomic(outdir / "rootogram_by_wave.csv", wg.str());
    }
  }

  if (has("sd")) {
    const auto rep = posterior_predict(fit.draws, model, data, clamp_draws(checks.sd_draws, "sd"), rng);
    const auto groups = sd_check(obs, rep, waves);
    io::CsvWriter w({"wave", "n_obs", "observed_sd", "draw_id", "replicate_sd"});
    json sj = json::array();
    if (!stdout_rows.empty()) stdout_rows.push_back({});
    stdout_rows.push_back({"wave", "n_obs", "observed_sd", "replicate_sd_median", "tail_fraction"});
    for (const auto& g : groups) {
      for (std::size_t d = 0; d < g.replicate_sd.size(); ++d) {
        w.field(std::string_view(g.group)).field(g.n_obs).field(g.observed_sd).field(rep.draw_index[d] + 1);
        w.field(g.replicate_sd[d]).end_row();
      }
      auto sorted = g.replicate_sd;
      std::sort(sorted.begin(), sorted.end());
      const double med = sorted.empty() ? std::nan("") : sorted[(sorted.size() - 1) / 2];
      sj.push_back({{"wave", g.group}, {"n_obs", g.n_obs}, {"observed_sd", g.observed_sd}, {"tail_fraction", g.tail_fraction()}});
      stdout_rows.push_back({g.group, std::to_string(g.n_obs), strf("%.3f", g.observed_sd), strf("%.3f", med),
                             strf("%.3f", g.tail_fraction())});
    }
    io::write_file_atomic(outdir / "sd_check.csv", w.str());
    summary["sd"] = {{"draws", rep.draw_index.size()}, {"groups", sj}};
  }

  io::write_file_atomic(outdir / "check.json", summary.dump(2) + "\n");
  err << strf("wrote checks to %s in %.1f s\n", outdir.string().c_str(), seconds_since(t0));
  // Rootogram and SD blocks render as separate tables.
  std::vector<std::vector<std::string>> block;
  for (const auto& r : stdout_rows) {
    if (r.empty()) {
      out << render_table(block) << '\n';
      block.clear();
    } else {
      block.push_back(r);
    }
  }
  if (!block.empty()) out << render_table(block);
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& fits, const std::string& output, std::ostream& out, std::ostream& err) {
  std::vector<std::pair<std::string, LooResult>> results;
  for (const auto& f : fits) {
    const fs::path dir(f);
    const auto cpath = require_file(dir, "config.json");
    const auto cfg = io::load_run_config(cpath);
    results.emplace_back(cfg.name, load_loo(dir));
  }
  const auto rows = compare(results);
  io::CsvWriter w({"model", "p_loo", "se_p_loo", "looic", "se_looic", "elpd_diff", "se_diff", "pareto_k_bad"});
  std::vector<std::vector<std::string>> table = {{"Model", "P-LOO (SE)", "LOO-IC (SE)", "ELPD diff (SE)"}};
  for (const auto& r : rows) {
    const int bad = r.loo.count(ParetoK::Bad);
    w.field(std::string_view(r.model)).field(r.loo.p_loo).field(r.loo.se_p_loo).field(r.loo.looic).field(r.loo.se_looic);
    w.field(r.elpd_diff).field(r.se_diff).field(bad).end_row();
    table.push_back({r.model, strf("%.1f (%.1f)", r.loo.p_loo, r.loo.se_p_loo),
                     strf("%.1f (%.1f)", r.loo.looic, r.loo.se_looic), strf("%.1f (%.1f)", r.elpd_diff, r.se_diff)});
    if (bad > 0) err << "warning: " << r.model << " has " << bad << " observations with Pareto k >= 0.7\n";
  }
  if (!output.empty()) io::write_file_atomic(output, w.str());
  out << render_table(table);
  return kExitOk;
}

int cmd_summarize(const std::string& fit_dir, const std::vector<std::string>& coefs, const std::string& output,
                  std::ostream& out, std::ostream&) {
  const auto fit = load_fit(fit_dir);
  const auto names = coefs.empty() ? coefficient_names(fit.prepared.model) : coefs;
  const auto ors = odds_ratio_summary(fit.draws, fit.prepared.model, names);
  io::CsvWriter w({"coefficient", "median", "q25", "q75", "q05", "q95"});
  std::vector<std::vector<std::string>> table = {{"Coefficient", "OR (90% CI)", "50% CI"}};
  for (const auto& o : ors) {
    w.field(std::string_view(o.name)).field(o.median).field(o.q25).field(o.q75).field(o.q05).field(o.q95).end_row();
    table.push_back({o.name, o.formatted(), strf("(%.2f, %.2f)", o.q25, o.q75)});
  }
  io::write_file_atomic(output.empty() ? fit.dir / "odds_ratios.csv" : fs::path(output), w.str());
  out << render_table(table);
  return kExitOk;
}

int cmd_simulate(const std::string& config, const std::string& output, std::optional<std::uint64_t> seed,
                 std::ostream& out, std::ostream& err) {
  auto sc = io::load_sim_config(config);
  if (!output.empty()) sc.output = output;
  if (sc.output.empty()) throw ConfigError("config.output: no output file (set it or pass --output)");
  if (seed) sc.sim.seed = *seed;
  const auto panel = simulate_panel(sc.sim);
  const auto schema = io::sim_schema(panel, sc.sim.n_days);
  io::write_file_atomic(sc.output, io::records_csv(panel.records, schema));

  json effects = json::object();
  for (std::size_t i = 0; i < panel.truth.effect_names.size(); ++i)
    effects[panel.truth.effect_names[i]] = panel.truth.effect_values[i];
  const json truth = {{"seed", sc.sim.seed},
                      {"n_rows", panel.records.size()},
                      {"person_sd", sc.sim.person_sd},
                      {"tilt", sc.sim.tilt},
                      {"effects", effects},
                      {"pattern", panel.truth.pattern}};
  fs::path tpath = sc.output;
  tpath.replace_extension(".truth.json");
  io::write_file_atomic(tpath, truth.dump(2) + "\n");

  int zeros = 0;
  std::set<std::string> persons;
  for (const auto& r : panel.records) {
    zeros += r.days == 0;
    persons.insert(r.person_id);
  }
  const double n = static_cast<double>(panel.records.size());
  out << render_table({{"rows", "persons", "waves", "zero_share"},
                       {std::to_string(panel.records.size()), std::to_string(persons.size()),
                        std::to_string(sc.sim.n_waves), strf("%.3f", n > 0 ? zeros / n : 0.0)}});
  err << "wrote " << sc.output.string() << " and " << tpath.string() << '\n';
  return kExitOk;
}

template <typename F>
int guarded(std::ostream& err, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const SamplerError& e) {
    err << "sampler error: " << e.what() << '\n';
    return kExitSampler;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// model preparation
// ---------------------------------------------------------------------------

PreparedModel prepare_model(io::RunConfig config, std::vector<ObservationRecord> records) {
  auto& schema = config.schema;
  for (std::size_t i = 0; i < schema.covariates.size(); ++i) {
    auto& d = schema.covariates[i];
    if (d.levels.empty()) {
      std::vector<std::string> seen;
      for (const auto& r : records) seen.push_back(r.covariates.at(d.name));
      d.levels = group_levels(seen);
    }
    if (d.levels.size() < 2)
      throw DataError("covariate '" + d.name + "' takes a single value in the data; drop it from the schema");
    if (d.reference.empty()) {
      d.reference = d.levels.front();
    } else if (std::find(d.levels.begin(), d.levels.end(), d.reference) == d.levels.end()) {
      throw ConfigError("config.schema.covariates[" + std::to_string(i) + "].reference: '" + d.reference +
                        "' is not a level of '" + d.name + "'");
    }
  }

  const DataSchema ds{schema.covariates};
  auto design = build_design(records, ds);

  // Design columns owned by each covariate, in declaration order.
  std::map<std::string, std::vector<int>> cols_of;
  int col = 0;
  for (const auto& d : schema.covariates)
    for (const auto& lv : d.levels)
      if (lv != d.reference_level()) cols_of[d.name].push_back(col++);

  std::vector<LinearPredictorSpec> specs;
  for (const auto& p : config.model.parameters) {
    LinearPredictorSpec s;
    s.param = p.param;
    s.link = p.link;
    s.has_random_intercept = p.random_intercept;
    for (const auto& name : p.covariates) {
      const auto& c = cols_of.at(name);
      s.fixed_effect_columns.insert(s.fixed_effect_columns.end(), c.begin(), c.end());
    }
    specs.push_back(std::move(s));
  }

  PreparedModel pm;
  pm.model = assemble_model(config.model.family, std::move(specs), design, IntervalLength(schema.n_days), config.priors);
  std::vector<int> days;
  std::vector<std::string> waves;
  for (const auto& r : records) {
    days.push_back(r.days);
    waves.push_back(r.wave);
  }
  pm.data = ModelData::prepare(pm.model, std::move(design), std::move(days), std::move(waves));
  pm.config = std::move(config);
  pm.records = std::move(records);
  return pm;
}

LoadedFit load_fit(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("fit directory '" + dir.string() + "' does not exist");
  const auto cpath = require_file(dir, "config.json");
  const auto dpath = require_file(dir, "data.csv");
  const auto lpath = require_file(dir, "layout.json");
  const auto bpath = require_file(dir, "draws.bin");

  auto cfg = io::load_run_config(cpath);
  const auto table = io::read_csv(dpath);
  auto ing = io::read_records(table, cfg.schema, family_bounded(cfg.model.family) ? cfg.schema.n_days : -1,
                              dpath.string());
  LoadedFit f;
  f.dir = dir;
  f.prepared = prepare_model(std::move(cfg), std::move(ing.records));
  f.draws = io::parse_draws_bin(io::read_file(bpath), bpath.string());
  f.draws.names = f.prepared.model.layout.coordinate_names();

  json layout;
  try {
    layout = io::parse_json(io::read_file(lpath), lpath.string());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  const auto dim = static_cast<Eigen::Index>(f.prepared.model.layout.dim());
  if (f.draws.dim() != dim)
    throw DataError(bpath.string() + ": " + std::to_string(f.draws.dim()) + " columns, model has " + std::to_string(dim));
  if (layout.value("fingerprint", std::string()) != hex64(f.prepared.data.fingerprint()))
    throw DataError(lpath.string() + ": data fingerprint does not match data.csv");
  if (layout.value("coordinates", std::vector<std::string>{}) != f.draws.names)
    throw DataError(lpath.string() + ": coordinate names do not match the model");
  return f;
}

// ---------------------------------------------------------------------------
// entry points
// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian models for bounded day counts"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  FitOptions fit_opt;
  std::uint64_t seed_val = 0;
  int chains_val = 0, threads_val = 0;
  auto* fit = app.add_subcommand("fit", "Fit a model and write draws, diagnostics and LOO to a directory");
  fit->add_option("--config", fit_opt.config, "Run configuration (JSON)")->required();
  fit->add_option("--output", fit_opt.output, "Output directory (overrides config.output)");
  auto* fit_seed = fit->add_option("--seed", seed_val, "Random seed (overrides config.seed)");
  auto* fit_chains = fit->add_option("--chains", chains_val, "Number of chains");
  auto* fit_threads = fit->add_option("--threads", threads_val, std::string("Worker threads (default: $") + kThreadsEnv +
                                                                    ", then one per chain)");

  CheckOptions check_opt;
  auto* check = app.add_subcommand("check", "Posterior predictive checks for a fit directory");
  check->add_option("fit", check_opt.fit, "Fit directory")->required();
  check->add_option("--config", check_opt.config, "Run configuration whose checks block and seed are used");
  check->add_option("--output", check_opt.output, "Output directory (default: the fit directory)");
  auto* check_seed = check->add_option("--seed", seed_val, "Random seed for predictive draws");

  std::vector<std::string> compare_fits;
  std::string compare_out;
  auto* cmp = app.add_subcommand("compare", "Compare fits by PSIS-LOO");
  cmp->add_option("fits", compare_fits, "Fit directories")->required();
  cmp->add_option("--output", compare_out, "CSV file for the comparison table");

  std::string sum_fit, sum_out;
  std::vector<std::string> sum_coefs;
  auto* sum = app.add_subcommand("summarize", "Odds-ratio summaries of population-level coefficients");
  sum->add_option("fit", sum_fit, "Fit directory")->required();
  sum->add_option("--coef", sum_coefs, "Coefficient name (repeatable; default: all)");
  sum->add_option("--output", sum_out, "CSV file (default: <fit>/odds_ratios.csv)");

  std::string sim_config, sim_out;
  auto* sim = app.add_subcommand("simulate", "Simulate a weekly-pattern panel as CSV");
  sim->add_option("--config", sim_config, "Simulation configuration (JSON)")->required();
  sim->add_option("--output", sim_out, "Output CSV (overrides config.output)");
  auto* sim_seed = sim->add_option("--seed", seed_val, "Random seed (overrides config.seed)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  return guarded(err, [&] {
    if (fit->parsed()) {
      if (*fit_seed) fit_opt.seed = seed_val;
      if (*fit_chains) fit_opt.chains = chains_val;
      if (*fit_threads) fit_opt.threads = threads_val;
      return cmd_fit(fit_opt, out, err);
    }
    if (check->parsed()) {
      if (*check_seed) check_opt.seed = seed_val;
      return cmd_check(check_opt, out, err);
    }
    if (cmp->parsed()) return cmd_compare(compare_fits, compare_out, out, err);
    if (sum->parsed()) return cmd_summarize(sum_fit, sum_coefs, sum_out, out, err);
    std::optional<std::uint64_t> s;
    if (*sim_seed) s = seed_val;
    return cmd_simulate(sim_config, sim_out, s, out, err);
  });
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace crb::cli
