#include "netsym/cli.hpp"

#include "netsym/checkpoint.hpp"
#include "netsym/collapse.hpp"
#include "netsym/dataset.hpp"
#include "netsym/metrics.hpp"
#include "netsym/minmass.hpp"
#include "netsym/mmd.hpp"
#include "netsym/parallel.hpp"
#include "netsym/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace netsym {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class LogLevel { Error, Warn, Info, Debug };

struct Logger {
  std::ostream* sink = nullptr;
  LogLevel level = LogLevel::Info;

  void log(LogLevel at, const std::string& msg) const {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (at <= level) *sink << "[" << names[static_cast<int>(at)] << "] " << msg << "\n";
  }
  void error(const std::string& m) const { log(LogLevel::Error, m); }
  void warn(const std::string& m) const { log(LogLevel::Warn, m); }
  void info(const std::string& m) const { log(LogLevel::Info, m); }
};

struct Globals {
  std::uint64_t seed = 0;
  int threads = default_threads();
  std::string log_level = "info";
  std::string config;
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  Globals g;
  Logger log;
  std::string command;
  std::vector<std::string> args;  // effective tokens after config merging
};

// ---------------------------------------------------------------- files

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

std::ofstream open_out(const fs::path& path) {
  ensure_parent(path);
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path.string());
  f << std::setprecision(17);
  return f;
}

void write_json(const fs::path& path, const json& j) {
  auto f = open_out(path);
  f << j.dump(2) << "\n";
  if (!f) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, path.string() + ": " + e.what());
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct Table {
  std::vector<std::string> header;
  Matrix values;
};

// Numeric CSV with a header line.
Table read_table(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot read " + path.string());
  Table t;
  std::string line;
  if (!std::getline(f, line)) throw Error(ErrorCode::Format, path.string() + ": empty file");
  for (const auto& h : split(line, ',')) t.header.push_back(trim(h));
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != t.header.size())
      throw Error(ErrorCode::Format, path.string() + ":" + std::to_string(lineno) + ": expected " +
                                         std::to_string(t.header.size()) + " columns");
    std::vector<double> row;
    for (const auto& c : cells) {
      try {
        std::size_t used = 0;
        const std::string v = trim(c);
        row.push_back(std::stod(v, &used));
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw Error(ErrorCode::Format, path.string() + ":" + std::to_string(lineno) + ": not a number '" + c + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) t.values(r, c) = rows[r][c];
  return t;
}

// A "label" column if present, otherwise the first column.
Eigen::VectorXi read_labels(const fs::path& path) {
  const Table t = read_table(path);
  Eigen::Index col = 0;
  for (std::size_t c = 0; c < t.header.size(); ++c)
    if (t.header[c] == "label") col = static_cast<Eigen::Index>(c);
  Eigen::VectorXi labels(t.values.rows());
  for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
    const double v = t.values(i, col);
    if (v != std::floor(v)) throw Error(ErrorCode::Format, path.string() + ": labels must be integers");
    labels[i] = static_cast<int>(v);
  }
  return labels;
}

Matrix read_probs(const fs::path& path) {
  Matrix p = read_table(path).values;
  PredictionBatch{p, {}}.validate();
  return p;
}

// ---------------------------------------------------------------- stamps

json stamp(const Context& ctx, json seeds = json::object()) {
  std::string joined;
  for (const auto& a : ctx.args) joined += a + '\x1f';
  seeds["global"] = ctx.g.seed;
  return json{{"tool", "netsym"},
              {"version", kVersion},
              {"command", ctx.command},
              {"args", ctx.args},
              {"config_hash", hex64(fnv1a(joined))},
              {"seeds", seeds},
              {"threads", ctx.g.threads}};
}

void stamp_dir(const Context& ctx, const fs::path& dir, json seeds = json::object()) {
  write_json(dir / "stamp.json", stamp(ctx, std::move(seeds)));
}

void stamp_file(const Context& ctx, const fs::path& file, json seeds = json::object()) {
  write_json(file.string() + ".stamp.json", stamp(ctx, std::move(seeds)));
}

// Sibling path "<stem><suffix>" next to `file`.
fs::path sibling(const fs::path& file, const std::string& suffix) {
  return file.parent_path() / (file.stem().string() + suffix);
}

// ---------------------------------------------------------------- checkpoints

struct LoadedNet {
  std::string file;
  Network net;
  json metadata;
};

struct LoadedSet {
  std::optional<CheckpointDataset> dataset;
  std::vector<LoadedNet> nets;
};

// A single .nnck file or a checkpoint directory (every entry that exists on disk).
LoadedSet load_inputs(const fs::path& path, int threads, bool accepted_only) {
  LoadedSet s;
  if (fs::is_regular_file(path)) {
    LoadedNet n;
    n.file = path.filename().string();
    n.net = load_checkpoint(path.string(), &n.metadata);
    s.nets.push_back(std::move(n));
    return s;
  }
  if (!fs::is_directory(path)) throw Error(ErrorCode::Io, "no such checkpoint file or directory: " + path.string());
  s.dataset = open_dataset(path.string());
  std::vector<const CheckpointEntry*> keep;
  for (const auto& e : s.dataset->entries)
    if (!e.error && (!accepted_only || e.accepted)) keep.push_back(&e);
  s.nets.resize(keep.size());
  parallel_for(keep.size(), threads, [&](std::size_t i) {
    s.nets[i].file = keep[i]->file;
    s.nets[i].net = load_checkpoint(s.dataset->path(*keep[i]), &s.nets[i].metadata);
  });
  if (s.nets.empty()) throw Error(ErrorCode::InvalidArgument, "no checkpoints in " + path.string());
  return s;
}

std::vector<Network> networks_of(const LoadedSet& s) {
  std::vector<Network> nets;
  for (const auto& n : s.nets) nets.push_back(n.net);
  return nets;
}

json to_json_value(const ScalingSet& s) {
  json j = json::array();
  for (const Vector& v : s.scales) j.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  return j;
}

json to_json_value(const PermutationSet& p) {
  json j = json::array();
  for (const IndexVector& v : p.perms) j.push_back(std::vector<Eigen::Index>(v.data(), v.data() + v.size()));
  return j;
}

// ---------------------------------------------------------------- training options

struct TrainOptions {
  std::string spec;
  std::string data;
  TrainConfig cfg;
  std::string loss = "bce";
};

void add_train_options(CLI::App* sub, TrainOptions& o) {
  sub->add_option("--spec", o.spec, "architecture JSON")->required();
  sub->add_option("--data", o.data, "training CSV")->required();
  sub->add_option("--epochs", o.cfg.epochs)->capture_default_str();
  sub->add_option("--lr", o.cfg.learning_rate, "learning rate")->capture_default_str();
  sub->add_option("--batch", o.cfg.batch_size, "batch size")->capture_default_str();
  sub->add_option("--loss", o.loss, "bce or cross_entropy")->capture_default_str();
  sub->add_option("--weight-decay", o.cfg.weight_decay)->capture_default_str();
  sub->add_option("--momentum", o.cfg.momentum)->capture_default_str();
  sub->add_option("--lr-decay-epochs", o.cfg.lr_decay_epochs, "0 disables step decay")->capture_default_str();
  sub->add_option("--lr-decay-factor", o.cfg.lr_decay_factor)->capture_default_str();
  sub->add_option("--threshold", o.cfg.loss_threshold, "acceptance loss")->capture_default_str();
}

TrainConfig finish_train_config(const Context& ctx, TrainOptions& o) {
  o.cfg.loss = parse_loss(o.loss);
  o.cfg.seed = ctx.g.seed;
  o.cfg.validate();
  return o.cfg;
}

// ---------------------------------------------------------------- commands

struct GenDataOptions {
  std::string task = "two-gaussians";
  int n = 200;
  int grid_steps = 41;
  double grid_range = 5.0;
  std::string out;
};

int cmd_gen_data(Context& ctx, const GenDataOptions& o) {
  Dataset data;
  json info;
  if (o.task == "two-gaussians") {
    const SyntheticTask task = SyntheticTask::two_gaussians(ctx.g.seed, o.n);
    data = gen_task(task);
    info = task;
  } else {
    if (o.grid_steps < 2) throw Error(ErrorCode::InvalidArgument, "--grid-steps must be >= 2");
    data.inputs.resize(static_cast<Eigen::Index>(o.grid_steps) * o.grid_steps, 2);
    for (int a = 0; a < o.grid_steps; ++a)
      for (int b = 0; b < o.grid_steps; ++b) {
        const double step = 2.0 * o.grid_range / (o.grid_steps - 1);
        data.inputs(a * o.grid_steps + b, 0) = -o.grid_range + a * step;
        data.inputs(a * o.grid_steps + b, 1) = -o.grid_range + b * step;
      }
    info = {{"kind", "grid"}, {"steps", o.grid_steps}, {"range", o.grid_range}};
  }
  save_dataset(data, o.out);
  stamp_file(ctx, o.out);
  ctx.log.info("wrote " + std::to_string(data.size()) + " rows to " + o.out);
  ctx.out << info.dump() << "\n";
  return kExitOk;
}

int cmd_train(Context& ctx, TrainOptions& o, const std::string& out) {
  const TrainConfig cfg = finish_train_config(ctx, o);
  const ArchitectureSpec spec = load_spec_file(o.spec);
  const Dataset data = load_dataset(o.data);
  const TrainTrace trace = sgd_train(build_network(spec, cfg.seed), data, cfg);
  const bool accepted = trace.final_loss <= cfg.loss_threshold;
  json meta{{"seed", cfg.seed}, {"final_loss", trace.final_loss}, {"accepted", accepted},
            {"train_config", cfg}};
  ensure_parent(out);
  save_checkpoint(trace.final_net, out, meta);
  stamp_file(ctx, out, {{"init", cfg.seed}, {"batch_order", cfg.seed}});
  ctx.out << json{{"final_loss", trace.final_loss}, {"accepted", accepted}, {"steps", trace.step_losses.size()}}.dump()
          << "\n";
  return kExitOk;
}

int cmd_train_ensemble(Context& ctx, TrainOptions& o, int count, const std::string& out) {
  const TrainConfig cfg = finish_train_config(ctx, o);
  const ArchitectureSpec spec = load_spec_file(o.spec);
  const Dataset data = load_dataset(o.data);
  EnsembleOptions eo;
  eo.threads = ctx.g.threads;
  eo.task = {{"data", o.data}};
  const fs::path data_stamp = o.data + ".stamp.json";
  if (fs::exists(data_stamp)) eo.task["stamp"] = read_json(data_stamp);
  const CheckpointDataset ds = train_posterior_dataset(spec, data, cfg, count, out, eo);
  std::size_t failed = 0;
  for (const auto& e : ds.entries) {
    if (e.error) {
      ++failed;
      ctx.log.warn(e.file + ": " + *e.error);
    }
  }
  stamp_dir(ctx, out, {{"first_checkpoint", cfg.seed}, {"last_checkpoint", cfg.seed + count - 1}});
  ctx.out << json{{"count", count}, {"accepted", ds.accepted_count()}, {"failed", failed}}.dump() << "\n";
  return kExitOk;
}

struct CanonOptions {
  std::string in, out;
  std::string key = "first_param";
  double norm = 1.0;
  bool skip_scaling = false, skip_permutation = false, skip_shift = false;
  double bias_target = 0.0;

  CanonicalizeConfig config() const {
    CanonicalizeConfig c;
    c.key = parse_sort_key(key);
    c.norm = norm;
    c.scaling = !skip_scaling;
    c.permutation = !skip_permutation;
    c.softmax_shift = !skip_shift;
    c.bias_sum_target = bias_target;
    return c;
  }
};

json canon_config_json(const CanonicalizeConfig& c) {
  return {{"key", to_string(c.key)}, {"norm", c.norm}, {"scaling", c.scaling},
          {"permutation", c.permutation}, {"softmax_shift", c.softmax_shift},
          {"bias_sum_target", c.bias_sum_target}};
}

int cmd_canonicalize(Context& ctx, const CanonOptions& o) {
  const CanonicalizeConfig cfg = o.config();
  if (!(cfg.norm > 0.0)) throw Error(ErrorCode::InvalidArgument, "--norm must be positive");
  LoadedSet in = load_inputs(o.in, ctx.g.threads, false);
  const bool single = !in.dataset;
  const fs::path out_dir = single ? fs::path(o.out).parent_path() : fs::path(o.out);
  if (!out_dir.empty()) ensure_dir(out_dir);
  std::vector<std::size_t> warnings(in.nets.size());
  parallel_for(in.nets.size(), ctx.g.threads, [&](std::size_t i) {
    LoadedNet& n = in.nets[i];
    const Canonical c = canonicalize(n.net, cfg);
    json meta = n.metadata;
    meta["canonicalization"] = {{"config", canon_config_json(cfg)},
                                {"scales", to_json_value(c.record.scales)},
                                {"perm", to_json_value(c.record.perm)},
                                {"shift", c.record.shift},
                                {"shift_applied", c.record.shift_applied},
                                {"warnings", c.record.warnings}};
    warnings[i] = c.record.warnings.size();
    save_checkpoint(c.net, single ? o.out : (out_dir / n.file).string(), meta);
  });
  for (std::size_t i = 0; i < in.nets.size(); ++i)
    if (warnings[i]) ctx.log.warn(in.nets[i].file + ": " + std::to_string(warnings[i]) + " zero-norm unit(s) left unscaled");
  if (single) {
    stamp_file(ctx, o.out);
  } else {
    CheckpointDataset ds = *in.dataset;
    ds.dir = out_dir.string();
    write_manifest(ds);
    stamp_dir(ctx, out_dir);
  }
  ctx.out << json{{"canonicalized", in.nets.size()}, {"config", canon_config_json(cfg)}}.dump() << "\n";
  return kExitOk;
}

int cmd_verify(Context& ctx, const std::string& a, const std::string& b, int n, double tol,
               const std::string& out) {
  const Network na = load_checkpoint(a), nb = load_checkpoint(b);
  const EquivalenceReport r = verify_equivalence(na, nb, n, ctx.g.seed, tol);
  const json j{{"a", a}, {"b", b}, {"n_inputs", n}, {"tol", tol}, {"max_abs", r.max_abs},
               {"max_rel", r.max_rel}, {"equivalent", r.pass}};
  if (!out.empty()) {
    write_json(out, j);
    stamp_file(ctx, out);
  }
  ctx.out << j.dump() << "\n";
  if (!r.pass) ctx.log.error("networks differ: max relative deviation " + std::to_string(r.max_rel));
  return r.pass ? kExitOk : kExitNumerical;
}

int cmd_count(Context& ctx, const std::string& spec_path, const std::string& out) {
  const SymmetryCount c = count_symmetries(load_spec_file(spec_path));
  std::ostringstream table;
  table << std::setprecision(10);
  table << "interface,units,sdof,log_permutations\n";
  for (const auto& i : c.interfaces)
    table << i.layer << "," << i.units << "," << i.scaling_dof << "," << i.log_permutations << "\n";
  table << "total,," << c.total_scaling_dof << "," << c.total_log_permutations << "\n";
  if (!out.empty()) {
    auto f = open_out(out);
    f << table.str();
    stamp_file(ctx, out);
  }
  ctx.out << table.str();
  return kExitOk;
}

struct MinmassOptions {
  std::string in, out, report;
  double tol = 1e-8;
  int max_iters = 10000;
};

int cmd_minmass(Context& ctx, const MinmassOptions& o) {
  const LoadedSet in = load_inputs(o.in, ctx.g.threads, false);
  ensure_dir(o.out);
  MinMassConfig cfg;
  cfg.tol = o.tol;
  cfg.max_iters = o.max_iters;
  std::vector<std::optional<MinMassResult>> results(in.nets.size());
  std::vector<std::string> errors(in.nets.size());
  parallel_for(in.nets.size(), ctx.g.threads, [&](std::size_t i) {
    try {
      results[i] = apply_minmass(in.nets[i].net, cfg);
      json meta = in.nets[i].metadata;
      meta["minmass"] = {{"mass_before", results[i]->solution.mass_before},
                         {"mass_after", results[i]->solution.mass_after},
                         {"scales", to_json_value(results[i]->solution.scales)}};
      save_checkpoint(results[i]->net, (fs::path(o.out) / in.nets[i].file).string(), meta);
    } catch (const Error& e) {
      errors[i] = std::string(to_string(e.code())) + ": " + e.what();
    }
  });
  std::vector<int> weight_layers;
  const ArchitectureSpec& spec = in.nets.front().net.spec;
  for (std::size_t l = 0; l < spec.layers.size(); ++l)
    if (spec.layers[l].has_weights()) weight_layers.push_back(static_cast<int>(l));
  const fs::path report = o.report.empty() ? fs::path(o.out) / "masses.csv" : fs::path(o.report);
  auto f = open_out(report);
  f << "file,mass_before,mass_after,iterations,converged,grad_inf_norm";
  for (int l : weight_layers) f << ",max_abs_before_" << l;
  for (int l : weight_layers) f << ",max_abs_after_" << l;
  f << ",error\n";
  std::size_t ok = 0, unconverged = 0;
  for (std::size_t i = 0; i < in.nets.size(); ++i) {
    f << in.nets[i].file;
    if (!results[i]) {
      f << std::string(5 + 2 * weight_layers.size(), ',') << ",\"" << errors[i] << "\"\n";
      ctx.log.warn(in.nets[i].file + ": " + errors[i]);
      continue;
    }
    ++ok;
    const MinMassSolution& s = results[i]->solution;
    unconverged += !s.converged;
    f << "," << s.mass_before << "," << s.mass_after << "," << s.iterations << "," << (s.converged ? 1 : 0)
      << "," << s.grad_inf_norm;
    for (double v : results[i]->max_abs_before) f << "," << v;
    for (double v : results[i]->max_abs_after) f << "," << v;
    f << ",\n";
  }
  f.close();
  stamp_file(ctx, report);
  if (in.dataset) {
    CheckpointDataset ds = *in.dataset;
    ds.dir = o.out;
    std::erase_if(ds.entries, [&](const CheckpointEntry& e) {
      for (std::size_t i = 0; i < in.nets.size(); ++i)
        if (in.nets[i].file == e.file) return !results[i].has_value();
      return true;
    });
    if (!ds.entries.empty()) write_manifest(ds);
  }
  stamp_dir(ctx, o.out);
  if (unconverged) ctx.log.warn(std::to_string(unconverged) + " solve(s) hit the iteration cap");
  ctx.out << json{{"solved", ok}, {"failed", in.nets.size() - ok}, {"unconverged", unconverged},
                  {"report", report.string()}}.dump()
          << "\n";
  return ok ? kExitOk : kExitNumerical;
}

json aggregated_json(const AggregatedMmd& m) {
  json kernels = json::array();
  for (std::size_t k = 0; k < m.kernels.size(); ++k)
    kernels.push_back({{"family", to_string(m.kernels[k].family)}, {"bandwidth", m.kernels[k].bandwidth},
                       {"mmd2", m.mmd2[k]}, {"mmd", m.mmd[k]}, {"negative", static_cast<bool>(m.negative[k])}});
  auto summary = [](const Summary& s) { return json{{"median", s.median}, {"mean", s.mean}, {"max", s.max}}; };
  return {{"kernels", kernels}, {"mmd2", summary(m.squared)}, {"mmd", summary(m.root)}};
}

struct MmdOptions {
  std::string a, b, out;
  bool canonicalize = false;
  std::string estimator = "biased";
  std::string key = "first_param";
  int permutations = 0;
};

int cmd_mmd(Context& ctx, const MmdOptions& o) {
  MmdConfig cfg;
  cfg.estimator = parse_estimator(o.estimator);
  cfg.seed = ctx.g.seed;
  CanonicalizeConfig canon;
  canon.key = parse_sort_key(o.key);
  const auto a = networks_of(load_inputs(o.a, ctx.g.threads, true));
  const auto b = networks_of(load_inputs(o.b, ctx.g.threads, true));
  const LayerwiseMmdReport rep = layerwise_posterior_mmd(a, b, cfg, o.canonicalize, canon, ctx.g.threads);
  json layers = json::array();
  for (const LayerMmd& l : rep.layers) {
    json j = aggregated_json(l.mmd);
    j["name"] = l.name;
    j["parameter_count"] = l.parameter_count;
    layers.push_back(j);
  }
  auto summary = [](const Summary& s) { return json{{"median", s.median}, {"mean", s.mean}, {"max", s.max}}; };
  json report{{"a", o.a},
              {"b", o.b},
              {"n_a", a.size()},
              {"n_b", b.size()},
              {"canonicalized", o.canonicalize},
              {"estimator", to_string(cfg.estimator)},
              {"bank",
               {{"families", {"gaussian", "laplace"}},
                {"multipliers", cfg.multipliers},
                {"bandwidth_rule", "multiplier x pooled median distance (L2 for gaussian, L1 for laplace)"}}},
              {"layers", layers},
              {"weighted", {{"total_parameters", rep.total_parameters},
                            {"mmd2", summary(rep.weighted_squared)},
                            {"mmd", summary(rep.weighted_root)}}}};
  if (o.canonicalize) report["canonicalization"] = canon_config_json(canon);
  if (o.permutations > 0) {
    const PermutationTest t = layerwise_permutation_test(a, b, cfg, o.canonicalize, o.permutations,
                                                         ctx.g.seed, canon, ctx.g.threads);
    report["permutation_test"] = {{"statistic", "parameter-weighted median mmd2"},
                                  {"observed", t.observed},
                                  {"p_value", t.p_value},
                                  {"n_permutations", o.permutations},
                                  {"null_q95", t.null_quantile(0.95)},
                                  {"null_q99", t.null_quantile(0.99)}};
  }
  write_json(o.out, report);
  stamp_file(ctx, o.out, {{"median_subsample", cfg.seed}, {"permutations", ctx.g.seed}});
  ctx.out << json{{"weighted_mmd2_median", rep.weighted_squared.median},
                  {"weighted_mmd_median", rep.weighted_root.median}}.dump()
          << "\n";
  return kExitOk;
}

struct MetricsOptions {
  std::vector<std::string> preds, ood_preds;
  std::string labels, ood_labels;
  std::string checkpoints, data, ood_data;
  int bins = 15;
  std::string out;
};

int cmd_metrics(Context& ctx, const MetricsOptions& o) {
  std::vector<Matrix> id, ood;
  Eigen::VectorXi labels;
  if (!o.checkpoints.empty()) {
    if (!o.preds.empty()) throw Error(ErrorCode::InvalidArgument, "use either --preds or --checkpoints");
    if (o.data.empty()) throw Error(ErrorCode::InvalidArgument, "--checkpoints needs --data");
    const auto nets = networks_of(load_inputs(o.checkpoints, ctx.g.threads, true));
    const Dataset d = load_dataset(o.data);
    id = ensemble_predict(nets, d.inputs).members;
    labels = d.labels;
    if (!o.ood_data.empty()) ood = ensemble_predict(nets, load_dataset(o.ood_data).inputs).members;
  } else {
    if (o.preds.empty()) throw Error(ErrorCode::InvalidArgument, "need --preds or --checkpoints");
    for (const auto& p : o.preds) id.push_back(read_probs(p));
    for (const auto& p : o.ood_preds) ood.push_back(read_probs(p));
    if (!ood.empty() && ood.size() != id.size())
      throw Error(ErrorCode::ShapeMismatch, "--ood-preds needs one file per --preds member");
  }
  if (!o.labels.empty()) labels = read_labels(o.labels);
  if (labels.size() == 0) throw Error(ErrorCode::InvalidArgument, "labels are required (--labels or a labelled --data)");

  const MutualInformation id_mi = mutual_information(id);
  Matrix mean = Matrix::Zero(id.front().rows(), id.front().cols());
  for (const Matrix& m : id) mean += m;
  mean /= static_cast<double>(id.size());
  json report{{"members", id.size()},
              {"n_id", mean.rows()},
              {"Acc", accuracy(mean, labels)},
              {"ECE", ece(mean, labels, o.bins)},
              {"Brier", brier(mean, labels)},
              {"IDMI", id_mi.mean},
              {"ece_bins", o.bins}};
  if (!ood.empty()) {
    const MutualInformation ood_mi = mutual_information(ood);
    Matrix ood_mean = Matrix::Zero(ood.front().rows(), ood.front().cols());
    for (const Matrix& m : ood) ood_mean += m;
    ood_mean /= static_cast<double>(ood.size());
    const bool use_mi = id.size() >= 2;
    auto score = [&](const Matrix& m, const MutualInformation& mi) -> Vector {
      if (use_mi) return mi.per_sample;
      return (1.0 - m.rowwise().maxCoeff().array()).matrix();
    };
    OodScoreSet s;
    s.scores.resize(mean.rows() + ood_mean.rows());
    s.scores << score(mean, id_mi), score(ood_mean, ood_mi);
    s.labels = Eigen::VectorXi::Zero(s.scores.size());
    s.labels.tail(ood_mean.rows()).setOnes();
    if (!o.ood_labels.empty()) {
      s.labels = read_labels(o.ood_labels);
      if (s.labels.size() != s.scores.size())
        throw Error(ErrorCode::ShapeMismatch, "--ood-labels must cover the ID rows followed by the OOD rows");
    }
    report["AUPR"] = aupr(s);
    report["FPR95"] = fpr_at_95_tpr(s);
    report["OODMI"] = ood_mi.mean;
    report["n_ood"] = ood_mean.rows();
    report["ood_score"] = use_mi ? "mutual_information" : "one_minus_max_prob";
  }
  if (!o.out.empty()) {
    write_json(o.out, report);
    stamp_file(ctx, o.out);
  }
  ctx.out << report.dump() << "\n";
  return kExitOk;
}

struct CollapseOptions {
  std::string checkpoints, id, ood, out;
  long long pairs = 1000;
};

int cmd_collapse(Context& ctx, const CollapseOptions& o) {
  const auto nets = networks_of(load_inputs(o.checkpoints, ctx.g.threads, true));
  const Matrix id = load_dataset(o.id).inputs;
  const Matrix ood = o.ood.empty() ? shift_inputs(id) : load_dataset(o.ood).inputs;
  const PairwiseMiReport rep = pairwise_mi(nets, id, ood, o.pairs, ctx.g.seed, ctx.g.threads);
  {
    auto f = open_out(o.out);
    f << "i,j,id_mi,ood_mi\n";
    for (const PairMi& p : rep.pairs) f << p.i << "," << p.j << "," << p.id_mi << "," << p.ood_mi << "\n";
  }
  json summary{{"pairs", rep.pairs.size()},
               {"members", nets.size()},
               {"ood_source", o.ood.empty() ? "id inputs shifted by (+8, -8, ...)" : o.ood},
               {"id_mean", rep.id_mean},
               {"ood_mean", rep.ood_mean},
               {"id_variance", rep.id_variance},
               {"ood_variance", rep.ood_variance},
               {"rho", nullptr},
               {"p_value", nullptr}};
  if (rep.correlation) {
    summary["rho"] = rep.correlation->rho;
    summary["p_value"] = rep.correlation->p_value;
  }
  const fs::path summary_path = sibling(o.out, "_summary.json");
  write_json(summary_path, summary);
  stamp_file(ctx, o.out, {{"pairs", ctx.g.seed}});
  stamp_file(ctx, summary_path, {{"pairs", ctx.g.seed}});
  ctx.out << summary.dump() << "\n";
  return kExitOk;
}

int cmd_track(Context& ctx, TrainOptions& o, const std::string& key, const std::string& out) {
  TrainConfig cfg = finish_train_config(ctx, o);
  cfg.permutation_tracking = parse_sort_key(key);
  const ArchitectureSpec spec = load_spec_file(o.spec);
  const Dataset data = load_dataset(o.data);
  const TrainTrace trace = sgd_train(build_network(spec, cfg.seed), data, cfg);
  const TauSeries tau = track_permutations(trace);
  std::vector<int> layers;
  for (const auto& h : hidden_interfaces(spec))
    if (h.units >= 2) layers.push_back(h.layer);
  {
    auto f = open_out(out);
    f << "step,epoch,mean_tau";
    for (int l : layers) f << ",tau_" << l;
    f << "\n";
    for (std::size_t s = 0; s < tau.mean.size(); ++s) {
      f << s << "," << s / trace.steps_per_epoch << "," << tau.mean[s];
      for (const auto& series : tau.per_interface) f << "," << series[s];
      f << "\n";
    }
  }
  auto epoch_mean = [&](int epoch) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t s = 0; s < tau.mean.size(); ++s)
      if (static_cast<int>(s) / trace.steps_per_epoch == epoch) sum += tau.mean[s], ++n;
    return n ? sum / n : 1.0;
  };
  json summary{{"key", key},
               {"steps", tau.mean.size()},
               {"steps_per_epoch", trace.steps_per_epoch},
               {"first_epoch_mean_tau", epoch_mean(0)},
               {"last_epoch_mean_tau", epoch_mean(cfg.epochs - 1)},
               {"final_loss", trace.final_loss}};
  write_json(sibling(out, "_summary.json"), summary);
  stamp_file(ctx, out, {{"init", cfg.seed}, {"batch_order", cfg.seed}});
  ctx.out << summary.dump() << "\n";
  return kExitOk;
}

int cmd_equivariance(Context& ctx, TrainOptions& o, double tol, std::optional<std::uint64_t> second_seed,
                     const std::string& out) {
  const TrainConfig cfg = finish_train_config(ctx, o);
  const ArchitectureSpec spec = load_spec_file(o.spec);
  const Dataset data = load_dataset(o.data);
  // A non-identity permutation when one exists.
  PermutationSet perm = random_symmetry(spec, ctx.g.seed).perm;
  for (std::uint64_t k = 1; k < 64 && perm.is_identity(); ++k)
    perm = random_symmetry(spec, ctx.g.seed + k).perm;
  const EquivarianceReport r = equivariance_check(spec, data, cfg, perm, ctx.g.seed, second_seed, tol);
  json j{{"max_weight_dev", r.max_weight_dev}, {"tol", tol}, {"pass", r.pass},
         {"perm", to_json_value(perm)}, {"same_batch_order", !second_seed.has_value()}};
  if (!out.empty()) {
    write_json(out, j);
    stamp_file(ctx, out, {{"init", ctx.g.seed}, {"batch_order", second_seed ? *second_seed : ctx.g.seed}});
  }
  ctx.out << j.dump() << "\n";
  if (!r.pass) ctx.log.error("training is not permutation equivariant within tolerance");
  return r.pass ? kExitOk : kExitNumerical;
}

struct MarginalsOptions {
  std::string checkpoints, layer = "", coords = "all", out;
  int bins = 30;
  std::string key = "first_param";
};

Vector tensor_values(const Network& net, const std::string& name) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const LayerParams& P = net.layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    const bool bn = net.spec.layers[l].kind == LayerKind::BatchNorm;
    if (name == prefix + "weight") {
      if (bn) return P.gamma;
      return Eigen::Map<const Vector>(P.weight.data(), P.weight.size());
    }
    if (name == prefix + "bias" && (bn || P.bias.size())) return bn ? P.beta : P.bias;
    if (bn && name == prefix + "running_mean") return P.running_mean;
    if (bn && name == prefix + "running_var") return P.running_var;
  }
  std::string valid;
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    for (const auto& n : tensor_names(net, static_cast<int>(l))) valid += (valid.empty() ? "" : ", ") + n;
  throw Error(ErrorCode::InvalidArgument, "unknown tensor '" + name + "'; valid: " + valid);
}

int cmd_marginals(Context& ctx, const MarginalsOptions& o) {
  if (o.bins < 1) throw Error(ErrorCode::InvalidArgument, "--bins must be >= 1");
  const auto raw = networks_of(load_inputs(o.checkpoints, ctx.g.threads, true));
  const std::string layer =
      o.layer.empty() ? "layers." + std::to_string(raw.front().layers.size() - 1) + ".weight" : o.layer;
  const Eigen::Index size = tensor_values(raw.front(), layer).size();
  std::vector<Eigen::Index> coords;
  if (o.coords == "all") {
    for (Eigen::Index k = 0; k < size; ++k) coords.push_back(k);
  } else {
    for (const auto& c : split(o.coords, ',')) {
      Eigen::Index k = -1;
      try {
        k = std::stol(trim(c));
      } catch (const std::exception&) {
      }
      if (k < 0 || k >= size)
        throw Error(ErrorCode::InvalidArgument, "bad coordinate '" + c + "' for " + layer + "; valid: 0.." +
                                                    std::to_string(size - 1) + " or all");
      coords.push_back(k);
    }
  }
  CanonicalizeConfig canon;
  canon.key = parse_sort_key(o.key);
  std::vector<Network> normalized(raw.size()), canonical(raw.size());
  parallel_for(raw.size(), ctx.g.threads, [&](std::size_t i) {
    normalized[i] = normalize_neurons(raw[i]).net;
    canonical[i] = canonicalize(raw[i], canon).net;
  });
  const std::vector<std::pair<std::string, const std::vector<Network>*>> variants{
      {"raw", &raw}, {"normalized", &normalized}, {"canonical", &canonical}};

  ensure_dir(o.out);
  auto ks = open_out(fs::path(o.out) / "ks.csv");
  ks << "variant,coord_a,coord_b,statistic,p_value\n";
  json summary{{"layer", layer}, {"coords", coords}, {"checkpoints", raw.size()}, {"bins", o.bins},
               {"variants", json::object()}};
  for (const auto& [name, nets] : variants) {
    Matrix values(static_cast<Eigen::Index>(nets->size()), static_cast<Eigen::Index>(coords.size()));
    for (std::size_t i = 0; i < nets->size(); ++i) {
      const Vector v = tensor_values((*nets)[i], layer);
      for (std::size_t c = 0; c < coords.size(); ++c) values(i, c) = v[coords[c]];
    }
    {
      auto f = open_out(fs::path(o.out) / (name + "_values.csv"));
      for (std::size_t c = 0; c < coords.size(); ++c) f << (c ? "," : "") << layer << "[" << coords[c] << "]";
      f << "\n";
      for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) f << (c ? "," : "") << values(i, c);
        f << "\n";
      }
    }
    auto h = open_out(fs::path(o.out) / (name + "_hist.csv"));
    h << "coord,bin,lo,hi,count\n";
    for (std::size_t c = 0; c < coords.size(); ++c) {
      double lo = values.col(c).minCoeff(), hi = values.col(c).maxCoeff();
      if (hi <= lo) lo -= 0.5, hi += 0.5;
      std::vector<long> count(o.bins, 0);
      for (Eigen::Index i = 0; i < values.rows(); ++i) {
        int b = static_cast<int>((values(i, c) - lo) / (hi - lo) * o.bins);
        ++count[std::clamp(b, 0, o.bins - 1)];
      }
      for (int b = 0; b < o.bins; ++b)
        h << coords[c] << "," << b << "," << lo + (hi - lo) * b / o.bins << "," << lo + (hi - lo) * (b + 1) / o.bins
          << "," << count[b] << "\n";
    }
    json pairs = json::array();
    for (std::size_t a = 0; a < coords.size(); ++a)
      for (std::size_t b = a + 1; b < coords.size(); ++b) {
        const Vector ca = values.col(a), cb = values.col(b);
        const KsResult r = ks_two_sample({ca.data(), ca.data() + ca.size()}, {cb.data(), cb.data() + cb.size()});
        ks << name << "," << coords[a] << "," << coords[b] << "," << r.statistic << "," << r.p_value << "\n";
        pairs.push_back({{"coord_a", coords[a]}, {"coord_b", coords[b]}, {"statistic", r.statistic},
                         {"p_value", r.p_value}});
      }
    summary["variants"][name] = {{"ks", pairs}};
  }
  ks.close();
  write_json(fs::path(o.out) / "marginals.json", summary);
  stamp_dir(ctx, o.out);
  ctx.out << summary.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- pipeline

int cmd_pipeline_toy(Context& ctx, const std::string& out, int count) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "--count must be >= 1");
  const fs::path dir(out);
  ensure_dir(dir);
  const std::string seed = std::to_string(ctx.g.seed), threads = std::to_string(ctx.g.threads);
  json stages = json::array();
  int worst = kExitOk;
  bool blocked = false;
  auto run = [&](const std::string& name, std::vector<std::string> args) {
    if (blocked) {
      stages.push_back({{"stage", name}, {"status", "skipped"}});
      return;
    }
    args.insert(args.end(), {"--seed", seed, "--threads", threads, "--log-level", ctx.g.log_level});
    std::ostringstream sink;
    const int code = run_cli(args, sink, ctx.err);
    stages.push_back({{"stage", name}, {"status", code == kExitOk ? "ok" : "failed"}, {"exit_code", code}});
    if (code != kExitOk) {
      ctx.log.error("stage " + name + " failed with exit code " + std::to_string(code));
      worst = std::max(worst, code);
      blocked = true;
    } else {
      ctx.log.info("stage " + name + " done");
    }
  };

  const fs::path spec_path = dir / "spec.json";
  write_json(spec_path, ArchitectureSpec::mlp({2, 2, 1}, OutputActivation::Sigmoid));
  run("gen-data", {"gen-data", "--task", "two-gaussians", "--n", "200", "--out", (dir / "data.csv").string()});
  run("train-ensemble", {"train-ensemble", "--spec", spec_path.string(), "--data", (dir / "data.csv").string(),
                         "--count", std::to_string(count), "--epochs", "10", "--lr", "2", "--batch", "10",
                         "--loss", "bce", "--threshold", "0.1", "--out", (dir / "ensemble").string()});
  run("marginals", {"marginals", "--checkpoints", (dir / "ensemble").string(), "--layer", "layers.1.weight",
                    "--out", (dir / "marginals").string()});
  // The remaining stages only need the spec or the ensemble.
  blocked = false;
  run("count-symmetries", {"count-symmetries", "--spec", spec_path.string(), "--out",
                           (dir / "symmetries.csv").string()});
  blocked = !fs::exists(dir / "ensemble" / kManifestName);
  run("minmass", {"minmass", "--in", (dir / "ensemble").string(), "--out", (dir / "minmass").string()});
  const json summary{{"count", count}, {"stages", stages}};
  write_json(dir / "pipeline.json", summary);
  stamp_dir(ctx, dir);
  ctx.out << summary.dump() << "\n";
  return worst;
}

// ---------------------------------------------------------------- config merging

std::vector<std::string> json_tokens(const json& obj, const std::set<std::string>* only,
                                     const std::set<std::string>* skip) {
  std::vector<std::string> tokens;
  for (const auto& [key, value] : obj.items()) {
    if (value.is_object()) continue;
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (only && !only->count(flag)) continue;
    if (skip && skip->count(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) tokens.push_back("--" + flag);
      continue;
    }
    tokens.push_back("--" + flag);
    if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      tokens.push_back(joined);
    } else {
      tokens.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  return tokens;
}

// Splices a JSON config into the argument list so that explicit flags, which
// come later, win under the take-last policy. Top-level keys only reach
// subcommands that have the option, so one file can serve several commands;
// keys under a "<subcommand>" object are passed unconditionally.
std::vector<std::string> merge_config(const std::vector<std::string>& args, CLI::App& app) {
  std::set<std::string> commands;
  for (const auto* s : app.get_subcommands([](CLI::App*) { return true; })) commands.insert(s->get_name());
  std::vector<std::string> rest;
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config.empty()) return rest;
  const json cfg = read_json(config);
  if (!cfg.is_object()) throw Error(ErrorCode::Format, config + ": config must be a JSON object");
  const std::set<std::string> globals{"seed", "threads", "log-level"};
  auto sub = std::find_if(rest.begin(), rest.end(), [&](const std::string& a) { return commands.count(a) > 0; });
  std::vector<std::string> merged = json_tokens(cfg, &globals, nullptr);
  merged.insert(merged.end(), rest.begin(), sub);
  if (sub == rest.end()) return merged;
  merged.push_back(*sub);
  std::set<std::string> known;
  for (const auto& [key, value] : cfg.items()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (app.get_subcommand(*sub)->get_option_no_throw("--" + flag)) known.insert(flag);
  }
  for (const auto& t : json_tokens(cfg, &known, &globals)) merged.push_back(t);
  if (cfg.contains(*sub) && cfg[*sub].is_object())
    for (const auto& t : json_tokens(cfg[*sub], nullptr, nullptr)) merged.push_back(t);
  merged.insert(merged.end(), sub + 1, rest.end());
  return merged;
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::Numerical:
    case ErrorCode::Degenerate:
      return kExitNumerical;
    default:
      return kExitData;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err, {}, {}, {}, {}};
  ctx.log.sink = &err;

  CLI::App app{"Weight-space symmetry toolkit for neural-network posteriors", "netsym"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  auto* seed_opt = app.add_option("--seed", ctx.g.seed, "global seed (falls back to NETSYM_SEED)");
  app.add_option("--threads", ctx.g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--log-level", ctx.g.log_level)->check(CLI::IsMember({"error", "warn", "info", "debug"}));
  app.add_option("--config", ctx.g.config, "JSON file of option values; explicit flags win");

  auto add = [&](const std::string& name, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    s->fallthrough();
    return s;
  };

  GenDataOptions gen;
  auto* s_gen = add("gen-data", "generate a synthetic dataset or input grid");
  s_gen->add_option("--task", gen.task)->check(CLI::IsMember({"two-gaussians", "grid"}))->capture_default_str();
  s_gen->add_option("--n", gen.n, "points per class")->capture_default_str();
  s_gen->add_option("--grid-steps", gen.grid_steps)->capture_default_str();
  s_gen->add_option("--grid-range", gen.grid_range, "grid covers [-r, r]^2")->capture_default_str();
  s_gen->add_option("--out", gen.out)->required();

  TrainOptions train;
  std::string train_out;
  auto* s_train = add("train", "train one network");
  add_train_options(s_train, train);
  s_train->add_option("--out", train_out, "checkpoint file")->required();

  TrainOptions ens;
  int ens_count = 10;
  std::string ens_out;
  auto* s_ens = add("train-ensemble", "train independent networks into a checkpoint directory");
  add_train_options(s_ens, ens);
  s_ens->add_option("--count", ens_count)->capture_default_str();
  s_ens->add_option("--out", ens_out)->required();

  CanonOptions canon;
  auto* s_canon = add("canonicalize", "map checkpoints to their canonical representatives");
  s_canon->add_option("--in", canon.in, "checkpoint directory or file")->required();
  s_canon->add_option("--out", canon.out)->required();
  s_canon->add_option("--key", canon.key)->check(CLI::IsMember({"first_param", "max_abs"}))->capture_default_str();
  s_canon->add_option("--norm", canon.norm)->capture_default_str();
  s_canon->add_flag("--skip-scaling", canon.skip_scaling);
  s_canon->add_flag("--skip-permutation", canon.skip_permutation);
  s_canon->add_flag("--skip-shift", canon.skip_shift);
  s_canon->add_option("--bias-target", canon.bias_target, "final bias sum after shift removal")->capture_default_str();

  std::string ver_a, ver_b, ver_out;
  int ver_n = 128;
  double ver_tol = 1e-9;
  auto* s_ver = add("verify-equivalence", "compare two networks on random inputs");
  s_ver->add_option("--a", ver_a)->required();
  s_ver->add_option("--b", ver_b)->required();
  s_ver->add_option("--n", ver_n)->capture_default_str();
  s_ver->add_option("--tol", ver_tol)->capture_default_str();
  s_ver->add_option("--out", ver_out);

  std::string count_spec, count_out;
  auto* s_count = add("count-symmetries", "scaling and permutation degrees of freedom per interface");
  s_count->add_option("--spec", count_spec)->required();
  s_count->add_option("--out", count_out);

  MinmassOptions mm;
  auto* s_mm = add("minmass", "rescale checkpoints to their minimum-mass representatives");
  s_mm->add_option("--in", mm.in)->required();
  s_mm->add_option("--out", mm.out)->required();
  s_mm->add_option("--tol", mm.tol)->capture_default_str();
  s_mm->add_option("--max-iters", mm.max_iters)->capture_default_str();
  s_mm->add_option("--report", mm.report, "CSV (default OUT/masses.csv)");

  MmdOptions mo;
  auto* s_mmd = add("mmd", "layer-wise MMD between two checkpoint sets");
  s_mmd->add_option("--a", mo.a)->required();
  s_mmd->add_option("--b", mo.b)->required();
  s_mmd->add_flag("--canonicalize", mo.canonicalize);
  s_mmd->add_option("--estimator", mo.estimator)->check(CLI::IsMember({"biased", "unbiased"}))->capture_default_str();
  s_mmd->add_option("--key", mo.key)->check(CLI::IsMember({"first_param", "max_abs"}))->capture_default_str();
  s_mmd->add_option("--permutations", mo.permutations, "permutation-test draws (0 = off)")->capture_default_str();
  s_mmd->add_option("--out", mo.out)->required();

  MetricsOptions met;
  auto* s_met = add("metrics", "accuracy, calibration and OOD metrics of an ensemble");
  s_met->add_option("--preds", met.preds, "member probability CSVs")->delimiter(',');
  s_met->add_option("--labels", met.labels);
  s_met->add_option("--ood-preds", met.ood_preds)->delimiter(',');
  s_met->add_option("--ood-labels", met.ood_labels, "0/1 labels over ID rows then OOD rows");
  s_met->add_option("--checkpoints", met.checkpoints, "predict with a checkpoint directory instead of --preds");
  s_met->add_option("--data", met.data);
  s_met->add_option("--ood-data", met.ood_data);
  s_met->add_option("--bins", met.bins)->capture_default_str();
  s_met->add_option("--out", met.out);

  CollapseOptions col;
  auto* s_col = add("collapse", "pairwise mutual information between ensemble members");
  s_col->add_option("--checkpoints", col.checkpoints)->required();
  s_col->add_option("--id", col.id)->required();
  s_col->add_option("--ood", col.ood, "default: ID inputs shifted by (+8, -8, ...)");
  s_col->add_option("--pairs", col.pairs)->capture_default_str();
  s_col->add_option("--out", col.out)->required();

  TrainOptions trk;
  std::string trk_key = "max_abs", trk_out;
  auto* s_trk = add("track-permutations", "Kendall tau of the sort permutation along training");
  add_train_options(s_trk, trk);
  s_trk->add_option("--key", trk_key)->check(CLI::IsMember({"first_param", "max_abs"}))->capture_default_str();
  s_trk->add_option("--out", trk_out)->required();

  TrainOptions eqv;
  double eqv_tol = 1e-6;
  std::optional<std::uint64_t> eqv_second;
  std::string eqv_out;
  auto* s_eqv = add("equivariance-check", "train a network and its permuted twin and compare");
  add_train_options(s_eqv, eqv);
  s_eqv->add_option("--tol", eqv_tol)->capture_default_str();
  s_eqv->add_option("--second-seed", eqv_second, "batch-order seed of the permuted run");
  s_eqv->add_option("--out", eqv_out);

  MarginalsOptions mar;
  auto* s_mar = add("marginals", "per-coordinate histograms in raw, normalized and canonical form");
  s_mar->add_option("--checkpoints", mar.checkpoints)->required();
  s_mar->add_option("--layer", mar.layer, "tensor name (default: last weight)");
  s_mar->add_option("--coords", mar.coords, "comma-separated flat indices or all")->capture_default_str();
  s_mar->add_option("--bins", mar.bins)->capture_default_str();
  s_mar->add_option("--key", mar.key)->check(CLI::IsMember({"first_param", "max_abs"}))->capture_default_str();
  s_mar->add_option("--out", mar.out)->required();

  std::string pipe_out;
  int pipe_count = 10;
  auto* s_pipe = add("pipeline-toy", "run the two-gaussian perceptron experiment end to end");
  s_pipe->add_option("--out", pipe_out)->required();
  s_pipe->add_option("--count", pipe_count)->capture_default_str();

  try {
    ctx.args = merge_config(raw_args, app);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    std::vector<std::string> reversed(ctx.args.rbegin(), ctx.args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  if (seed_opt->count() == 0) {
    if (const char* env = std::getenv("NETSYM_SEED")) {
      try {
        std::size_t used = 0;
        ctx.g.seed = std::stoull(env, &used);
        if (used != std::strlen(env)) throw std::invalid_argument(env);
      } catch (const std::exception&) {
        err << "error: NETSYM_SEED is not an unsigned integer\n";
        return kExitUsage;
      }
    }
  }
  static const std::map<std::string, LogLevel> levels{
      {"error", LogLevel::Error}, {"warn", LogLevel::Warn}, {"info", LogLevel::Info}, {"debug", LogLevel::Debug}};
  ctx.log.level = levels.at(ctx.g.log_level);

  CLI::App* sub = app.get_subcommands().front();
  ctx.command = sub->get_name();
  try {
    if (sub == s_gen) return cmd_gen_data(ctx, gen);
    if (sub == s_train) return cmd_train(ctx, train, train_out);
    if (sub == s_ens) return cmd_train_ensemble(ctx, ens, ens_count, ens_out);
    if (sub == s_canon) return cmd_canonicalize(ctx, canon);
    if (sub == s_ver) return cmd_verify(ctx, ver_a, ver_b, ver_n, ver_tol, ver_out);
    if (sub == s_count) return cmd_count(ctx, count_spec, count_out);
    if (sub == s_mm) return cmd_minmass(ctx, mm);
    if (sub == s_mmd) return cmd_mmd(ctx, mo);
    if (sub == s_met) return cmd_metrics(ctx, met);
    if (sub == s_col) return cmd_collapse(ctx, col);
    if (sub == s_trk) return cmd_track(ctx, trk, trk_key, trk_out);
    if (sub == s_eqv) return cmd_equivariance(ctx, eqv, eqv_tol, eqv_second, eqv_out);
    if (sub == s_mar) return cmd_marginals(ctx, mar);
    if (sub == s_pipe) return cmd_pipeline_toy(ctx, pipe_out, pipe_count);
  } catch (const Error& e) {
    ctx.log.error(std::string(to_string(e.code())) + ": " + e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    ctx.log.error(e.what());
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace netsym
