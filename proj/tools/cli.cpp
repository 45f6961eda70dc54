#include "cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "laber/error.hpp"

namespace laber::cli {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why) {
  throw Error(ErrorKind::Config, "key '" + key + "': invalid value '" + value + "' (" + why + ")");
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return "";
  return s.substr(first, s.find_last_not_of(" \t") - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) parts.push_back(trim(part));
  return parts;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) bad_value(key, v, "expected a non-negative integer");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "expected a finite number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "expected true or false");
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  for (const std::string& part : split(v, ',')) out.push_back(parse_u64(key, part));
  return out;
}

Cell parse_cell(const std::string& key, const std::string& v) {
  const std::vector<std::string> xy = split(v, ',');
  if (xy.size() != 2) bad_value(key, v, "expected x,y");
  return Cell{parse_u64(key, xy[0]), parse_u64(key, xy[1])};
}

std::vector<Cell> parse_cells(const std::string& key, const std::string& v) {
  std::vector<Cell> out;
  if (trim(v).empty()) return out;
  for (const std::string& part : split(v, ';')) out.push_back(parse_cell(key, part));
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + std::to_string(v[k]);
  return out;
}

std::string cell_text(Cell c) { return std::to_string(c.x) + "," + std::to_string(c.y); }

std::string cells_text(const std::vector<Cell>& cells) {
  std::string out;
  for (std::size_t k = 0; k < cells.size(); ++k) out += (k ? ";" : "") + cell_text(cells[k]);
  return out;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

std::string loss_text(LossKind k) { return k == LossKind::l2 ? "l2" : k == LossKind::huber ? "huber" : "categorical_ce"; }

// One configurable key: how to read it into a RunConfig and how to echo it.
struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define LABER_SIZE_KEY(NAME, FIELD)                                                              \
  Key { NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_u64(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); } }
#define LABER_REAL_KEY(NAME, FIELD)                                                               \
  Key { NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_real(k, v); }, \
        [](const RunConfig& c) { return format_double(c.FIELD); } }
#define LABER_BOOL_KEY(NAME, FIELD)                                                               \
  Key { NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_bool(k, v); }, \
        [](const RunConfig& c) { return bool_text(c.FIELD); } }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      LABER_SIZE_KEY("run.seed", seed),
      LABER_SIZE_KEY("run.steps", steps),
      Key{"run.out", [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
          [](const RunConfig& c) { return c.out.string(); }},
      Key{"run.format",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v == "csv") c.format = ExportFormat::csv;
            else if (v == "json") c.format = ExportFormat::json;
            else bad_value(k, v, "expected csv or json");
          },
          [](const RunConfig& c) { return std::string(c.format == ExportFormat::csv ? "csv" : "json"); }},

      Key{"env.kind",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v != "chain" && v != "grid") bad_value(k, v, "expected chain or grid");
            c.env.kind = v;
          },
          [](const RunConfig& c) { return c.env.kind; }},
      LABER_SIZE_KEY("env.states", env.states),
      LABER_REAL_KEY("env.slip", env.slip),
      LABER_SIZE_KEY("env.width", env.width),
      LABER_SIZE_KEY("env.height", env.height),
      Key{"env.goal", [](RunConfig& c, const std::string& k, const std::string& v) { c.env.goal = parse_cell(k, v); },
          [](const RunConfig& c) { return cell_text(c.env.goal); }},
      Key{"env.traps", [](RunConfig& c, const std::string& k, const std::string& v) { c.env.traps = parse_cells(k, v); },
          [](const RunConfig& c) { return cells_text(c.env.traps); }},
      Key{"env.start", [](RunConfig& c, const std::string& k, const std::string& v) { c.env.start = parse_cell(k, v); },
          [](const RunConfig& c) { return cell_text(c.env.start); }},

      Key{"agent.sampler",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            try {
              const SamplerTag tag = parse_sampler(v);
              c.agent.sampler = tag.kind;
              if (tag.scaling) c.agent.scaling = *tag.scaling;
            } catch (const Error&) {
              bad_value(k, v, "unknown sampler");
            }
          },
          [](const RunConfig& c) { return c.agent.sampler_tag(); }},
      Key{"agent.scaling",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            try {
              c.agent.scaling = parse_scaling(v);
            } catch (const Error&) {
              bad_value(k, v, "expected mean, lazy or max");
            }
          },
          [](const RunConfig& c) { return to_string(c.agent.scaling); }},
      Key{"agent.priority_source",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v == "surrogate") c.agent.priority_source = PrioritySource::surrogate;
            else if (v == "exact") c.agent.priority_source = PrioritySource::exact_grad_norm;
            else bad_value(k, v, "expected surrogate or exact");
          },
          [](const RunConfig& c) {
            return std::string(c.agent.priority_source == PrioritySource::surrogate ? "surrogate" : "exact");
          }},
      LABER_REAL_KEY("agent.gamma", agent.gamma),
      LABER_REAL_KEY("agent.learning_rate", agent.learning_rate),
      LABER_SIZE_KEY("agent.batch_size", agent.batch_size),
      LABER_SIZE_KEY("agent.m", agent.multiplier),
      LABER_SIZE_KEY("agent.target_update_period", agent.target_update_period),
      Key{"agent.loss",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v == "l2") c.agent.loss = LossKind::l2;
            else if (v == "huber") c.agent.loss = LossKind::huber;
            else bad_value(k, v, "expected l2 or huber");
          },
          [](const RunConfig& c) { return loss_text(c.agent.loss); }},
      LABER_BOOL_KEY("agent.distributional", agent.distributional),
      LABER_SIZE_KEY("agent.atoms", agent.atoms),
      LABER_REAL_KEY("agent.v_min", agent.v_min),
      LABER_REAL_KEY("agent.v_max", agent.v_max),
      Key{"agent.hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.agent.hidden = parse_sizes(k, v); },
          [](const RunConfig& c) { return join_sizes(c.agent.hidden); }},
      LABER_REAL_KEY("agent.per_alpha", agent.per_alpha),
      LABER_REAL_KEY("agent.per_c", agent.per_c),
      LABER_REAL_KEY("agent.ger_alpha", agent.ger_alpha),
      LABER_REAL_KEY("agent.ger_c", agent.ger_c),
      LABER_BOOL_KEY("agent.max_weight_normalization", agent.max_weight_normalization),
      Key{"agent.optimizer",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v == "sgd") c.agent.optimizer = Optimizer::sgd;
            else if (v == "rmsprop") c.agent.optimizer = Optimizer::rmsprop;
            else bad_value(k, v, "expected sgd or rmsprop");
          },
          [](const RunConfig& c) { return std::string(c.agent.optimizer == Optimizer::sgd ? "sgd" : "rmsprop"); }},
      LABER_REAL_KEY("agent.rmsprop_decay", agent.rmsprop_decay),
      LABER_REAL_KEY("agent.rmsprop_epsilon", agent.rmsprop_epsilon),
      LABER_REAL_KEY("agent.epsilon_start", agent.epsilon_start),
      LABER_REAL_KEY("agent.epsilon_end", agent.epsilon_end),
      LABER_SIZE_KEY("agent.epsilon_decay_steps", agent.epsilon_decay_steps),
      LABER_SIZE_KEY("agent.buffer_capacity", agent.buffer_capacity),
      LABER_SIZE_KEY("agent.learning_starts", agent.learning_starts),
      LABER_SIZE_KEY("agent.train_period", agent.train_period),

      LABER_BOOL_KEY("diagnostics.record_tv", agent.record_tv),
      LABER_SIZE_KEY("diagnostics.tv_recording_period", tv.recording_period),
      Key{"diagnostics.tv_bins",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            const std::uint64_t bins = parse_u64(k, v);
            if (bins == 0) bad_value(k, v, "must be >= 1");
            c.tv.bin_edges = TVStudyConfig::defaults(bins).bin_edges;
          },
          [](const RunConfig& c) { return std::to_string(c.tv.bin_edges.size() - 1); }},
      LABER_REAL_KEY("diagnostics.tv_window", tv.window_fraction),
      LABER_REAL_KEY("diagnostics.significance", significance),
  };
  return table;
}

#undef LABER_SIZE_KEY
#undef LABER_REAL_KEY
#undef LABER_BOOL_KEY

const Key* find_key(const std::string& name) {
  for (const Key& k : keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

// Maps a library validation failure onto the config key it concerns.
void validate(const RunConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw Error(ErrorKind::Config, "key '" + key + "': " + why);
  };
  if (c.env.kind == "chain") {
    if (c.env.states < 3) fail("env.states", "chain needs at least 3 states");
    if (!(c.env.slip >= 0.0 && c.env.slip <= 0.5)) fail("env.slip", "must lie in [0, 0.5]");
  } else {
    if (c.env.width == 0) fail("env.width", "must be >= 1");
    if (c.env.height == 0) fail("env.height", "must be >= 1");
    try {
      c.env.make();
    } catch (const Error& e) {
      const std::string what = e.what();
      if (e.kind() == ErrorKind::GoalOnTrap || what.find("trap") != std::string::npos) fail("env.traps", what);
      if (what.find("goal") != std::string::npos) fail("env.goal", what);
      fail("env.start", what);
    }
  }
  const AgentConfig& a = c.agent;
  if (!(a.gamma >= 0.0 && a.gamma < 1.0)) fail("agent.gamma", "must lie in [0, 1)");
  if (!(a.learning_rate >= 0.0)) fail("agent.learning_rate", "must be >= 0");
  if (a.batch_size == 0) fail("agent.batch_size", "must be >= 1");
  if (a.multiplier == 0) fail("agent.m", "must be >= 1");
  if (a.target_update_period == 0) fail("agent.target_update_period", "must be >= 1");
  if (a.distributional && a.atoms < 2) fail("agent.atoms", "must be >= 2");
  if (a.distributional && !(a.v_min < a.v_max)) fail("agent.v_max", "must exceed agent.v_min");
  if (std::find(a.hidden.begin(), a.hidden.end(), 0) != a.hidden.end()) fail("agent.hidden", "widths must be >= 1");
  if (!(a.per_alpha >= 0.0 && a.per_alpha <= 1.0)) fail("agent.per_alpha", "must lie in [0, 1]");
  if (!(a.ger_alpha >= 0.0 && a.ger_alpha <= 1.0)) fail("agent.ger_alpha", "must lie in [0, 1]");
  if (!(a.per_c >= 0.0)) fail("agent.per_c", "must be >= 0");
  if (!(a.ger_c >= 0.0)) fail("agent.ger_c", "must be >= 0");
  if (!(a.rmsprop_decay >= 0.0 && a.rmsprop_decay < 1.0)) fail("agent.rmsprop_decay", "must lie in [0, 1)");
  if (!(a.rmsprop_epsilon > 0.0)) fail("agent.rmsprop_epsilon", "must be > 0");
  if (!(a.epsilon_start >= 0.0 && a.epsilon_start <= 1.0)) fail("agent.epsilon_start", "must lie in [0, 1]");
  if (!(a.epsilon_end >= 0.0 && a.epsilon_end <= 1.0)) fail("agent.epsilon_end", "must lie in [0, 1]");
  if (a.buffer_capacity == 0) fail("agent.buffer_capacity", "must be >= 1");
  if (a.train_period == 0) fail("agent.train_period", "must be >= 1");
  const std::size_t needed = uses_large_batch(a.sampler) ? a.multiplier * a.batch_size : a.batch_size;
  if (needed > a.buffer_capacity) fail("agent.buffer_capacity", "smaller than the (large) batch");
  if (c.tv.recording_period == 0) fail("diagnostics.tv_recording_period", "must be >= 1");
  if (c.tv.bin_edges.size() < 2) fail("diagnostics.tv_bins", "must be >= 1");
  if (!(c.tv.window_fraction > 0.0 && c.tv.window_fraction <= 1.0)) fail("diagnostics.tv_window", "must lie in (0, 1]");
  if (!(c.significance > 0.0 && c.significance < 1.0)) fail("diagnostics.significance", "must lie in (0, 1)");
  a.validate();
}

std::shared_ptr<spdlog::logger> logger() {
  static std::once_flag once;
  static std::shared_ptr<spdlog::logger> log;
  std::call_once(once, [] {
    log = spdlog::stderr_color_mt("laber");
    log->set_pattern("[%l] %v");
    log->set_level(spdlog::level::warn);
    if (const char* level = std::getenv("LABER_LOG")) log->set_level(spdlog::level::from_str(level));
  });
  return log;
}

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) throw Error(ErrorKind::Config, "key 'seeds': expected a..b, got '" + text + "'");
  const std::uint64_t a = parse_u64("seeds", text.substr(0, dots));
  const std::uint64_t b = parse_u64("seeds", text.substr(dots + 2));
  if (b < a) throw Error(ErrorKind::Config, "key 'seeds': empty range '" + text + "'");
  return {a, b};
}

std::string records_name(ExportFormat f) { return f == ExportFormat::csv ? "learning_curve.csv" : "learning_curve.json"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw Error(ErrorKind::IoError, "cannot write " + path.string());
}

struct Timing {
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
};

template <typename F>
Timing time_passes(std::size_t passes, F&& body) {
  std::vector<double> ms;
  body();  // warm-up
  for (std::size_t k = 0; k < passes; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  Timing t;
  for (double v : ms) t.mean_ms += v / static_cast<double>(ms.size());
  for (double v : ms) t.stddev_ms += (v - t.mean_ms) * (v - t.mean_ms);
  t.stddev_ms = ms.size() > 1 ? std::sqrt(t.stddev_ms / static_cast<double>(ms.size() - 1)) : 0.0;
  return t;
}

int cmd_bench(const std::vector<std::size_t>& dims, std::size_t batch, const std::vector<std::size_t>& multipliers,
              std::size_t passes, std::uint64_t seed, std::ostream& out) {
  if (dims.size() < 2) throw Error(ErrorKind::Config, "key 'net': needs at least input and output sizes");
  if (batch == 0) throw Error(ErrorKind::Config, "key 'batch-size': must be >= 1");
  if (passes < 20) throw Error(ErrorKind::Config, "key 'passes': must be >= 20");
  if (multipliers.empty()) throw Error(ErrorKind::Config, "key 'multipliers': must not be empty");
  Rng rng = make_rng(seed, SeedStream::init);
  const Network net = Network::glorot(dims, Activation::relu, Activation::identity, rng);
  const LossSpec loss{LossKind::huber, 0};
  std::normal_distribution<double> normal;
  const std::size_t largest = batch * *std::max_element(multipliers.begin(), multipliers.end());
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(largest), static_cast<Eigen::Index>(dims.front()));
  for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = normal(rng);
  std::vector<Target> targets(largest);
  for (std::size_t i = 0; i < largest; ++i) targets[i] = Target{i % dims.back(), normal(rng), {}};

  out << "agent,multiplier,phase,batch,mean_ms,stddev_ms\n";
  auto row = [&](const char* agent, std::size_t k, const char* phase, std::size_t n, Timing t) {
    out << agent << ',' << k << ',' << phase << ',' << n << ',' << format_double(t.mean_ms) << ','
        << format_double(t.stddev_ms) << '\n';
  };
  for (const char* agent : {"dqn", "laber"}) {
    const bool laber = std::string(agent) == "laber";
    for (std::size_t k : multipliers) {
      if (k == 0) throw Error(ErrorKind::Config, "key 'multipliers': must be >= 1");
      const std::size_t fwd_n = k * batch;
      const std::size_t bwd_n = laber ? batch : k * batch;
      const Eigen::MatrixXd fwd_x = inputs.topRows(static_cast<Eigen::Index>(fwd_n));
      const std::span<const Target> fwd_t(targets.data(), fwd_n);
      const Timing forward_time = time_passes(passes, [&] {
        const ForwardCache cache = forward(net, fwd_x);
        if (laber) surrogate_norm(net, cache, fwd_t, loss);
      });
      const Eigen::MatrixXd bwd_x = inputs.topRows(static_cast<Eigen::Index>(bwd_n));
      const std::span<const Target> bwd_t(targets.data(), bwd_n);
      const ForwardCache cache = forward(net, bwd_x);
      const std::vector<double> coeffs(bwd_n, 1.0 / static_cast<double>(bwd_n));
      const Timing backward_time = time_passes(passes, [&] { weighted_gradient(net, cache, bwd_t, loss, coeffs); });
      row(agent, k, "forward", fwd_n, forward_time);
      row(agent, k, "backward", bwd_n, backward_time);
    }
  }
  return kOk;
}

int cmd_tv_study(const RunConfig& config, std::ostream& out) {
  if (!uses_large_batch(config.agent.sampler)) {
    throw Error(ErrorKind::Config, "key 'agent.sampler': tv-study needs a large-batch sampler");
  }
  std::filesystem::create_directories(config.out);
  Trainer trainer(config.env.make(), config.agent, config.seed);
  const std::vector<DiagRecord> records = trainer.run(config.steps);
  export_records(records, config.out / "tv_records.csv", ExportFormat::csv);
  const TvStudyResult result = tv_study(records, config.tv);

  std::ostringstream hist;
  hist << "window,bin_lo,bin_hi,surrogate,uniform\n";
  bool significant = true;
  out << "window,count,mean_tv_surrogate,mean_tv_uniform,p_value,verdict\n";
  for (const auto& [name, w] : {std::pair<const char*, const TvWindow*>{"all", &result.all},
                                {"first", &result.first}, {"last", &result.last}}) {
    for (std::size_t b = 0; b < w->surrogate.counts.size(); ++b) {
      hist << name << ',' << format_double(w->surrogate.edges[b]) << ',' << format_double(w->surrogate.edges[b + 1])
           << ',' << w->surrogate.counts[b] << ',' << w->uniform.counts[b] << '\n';
    }
    const bool pass = w->count > 0 && w->test.p_value < config.significance;
    significant = significant && pass;
    out << name << ',' << w->count << ',' << format_double(w->mean_surrogate) << ','
        << format_double(w->mean_uniform) << ',' << format_double(w->test.p_value) << ','
        << (pass ? "PASS" : "FAIL") << '\n';
  }
  write_text(config.out / "tv_histograms.csv", hist.str());
  write_text(config.out / "manifest.ini", render_manifest(config));
  return significant ? kOk : kFailure;
}

}  // namespace

std::unique_ptr<Env> EnvSpec::make() const {
  if (kind == "chain") return chain_mdp(states, slip);
  if (kind == "grid") return gridworld(width, height, goal, traps, start);
  throw Error(ErrorKind::Config, "key 'env.kind': unknown environment '" + kind + "'");
}

RunConfig tv_study_defaults() {
  RunConfig c;
  c.env.kind = "grid";
  c.agent.sampler = SamplerKind::laber;
  c.agent.scaling = Scaling::mean;
  c.agent.record_tv = true;
  c.steps = 50'000;
  c.out = "laber-tv";
  return c;
}

RunConfig resolve_config(RunConfig config, const std::optional<std::filesystem::path>& file,
                         const Overrides& overrides) {
  if (file) {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(file->string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw Error(ErrorKind::Config, "config file: " + std::string(e.what()));
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw Error(ErrorKind::Config, "key '" + section + "': keys must live in a section");
      for (const auto& [name, value] : body) {
        const std::string full = section + "." + name;
        const Key* key = find_key(full);
        if (!key) throw Error(ErrorKind::Config, "key '" + full + "': unknown key");
        key->set(config, full, trim(value.data()));
      }
    }
  }
  if (overrides.seed) config.seed = *overrides.seed;
  if (overrides.steps) config.steps = *overrides.steps;
  if (overrides.sampler) find_key("agent.sampler")->set(config, "sampler", *overrides.sampler);
  if (overrides.m) config.agent.multiplier = *overrides.m;
  if (overrides.batch_size) config.agent.batch_size = *overrides.batch_size;
  if (overrides.out) config.out = *overrides.out;
  validate(config);
  return config;
}

std::string render_manifest(const RunConfig& config) {
  std::ostringstream out;
  out << "; resolved configuration; rerun with: laber train --config <this file>\n";
  std::string section;
  for (const Key& key : keys()) {
    const std::string name = key.name;
    const auto dot = name.find('.');
    if (name.substr(0, dot) != section) {
      section = name.substr(0, dot);
      out << (section == "run" ? "" : "\n") << '[' << section << "]\n";
    }
    out << name.substr(dot + 1) << " = " << key.get(config) << '\n';
  }
  return out.str();
}

TrainSummary train(const RunConfig& config, const std::optional<std::filesystem::path>& resume) {
  std::filesystem::create_directories(config.out);
  write_text(config.out / "manifest.ini", render_manifest(config));
  TrainSummary summary;
  if (config.steps == 0 && !resume) return summary;

  logger()->info("train sampler={} seed={} steps={} out={}", config.agent.sampler_tag(), config.seed, config.steps,
                 config.out.string());
  Trainer trainer(config.env.make(), config.agent, config.seed);
  if (resume) trainer.load_checkpoint(*resume);
  const std::vector<DiagRecord> records = trainer.run(config.steps);
  export_records(records, config.out / records_name(config.format), config.format);
  trainer.save_checkpoint(config.out / "checkpoint.bin");

  summary.steps = trainer.env_steps();
  summary.episodes = static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const DiagRecord& r) { return r.episode_return.has_value(); }));
  const std::unique_ptr<Env> env = config.env.make();
  try {
    const QTable oracle = value_iteration(*env, config.agent.gamma, 1e-10);
    summary.matches_oracle = matches_policy(trainer.agent(), *env, oracle);
  } catch (const Error& e) {
    logger()->info("no oracle policy: {}", e.what());
  }
  return summary;
}

std::array<double, 3> variance_study_values() {
  const std::vector<double> g{10.0, 5.0};
  return {variance_term(Distribution::uniform(2), g), variance_term(optimal_distribution(g), g),
          variance_term(Distribution({0.2, 0.8}), g)};
}

int report_variance_study(const std::array<double, 3>& values, std::ostream& out) {
  constexpr std::array<double, 3> exact{62.5, 56.25, 132.8125};
  constexpr std::array<const char*, 3> names{"uniform", "optimal", "td_error"};
  bool ok = true;
  out << "distribution,variance,expected,verdict\n";
  for (std::size_t k = 0; k < 3; ++k) {
    const bool pass = std::abs(values[k] - exact[k]) <= 1e-12;
    ok = ok && pass;
    out << names[k] << ',' << format_double(values[k]) << ',' << format_double(exact[k]) << ','
        << (pass ? "PASS" : "FAIL") << '\n';
  }
  const bool worse = values[2] > values[0];
  ok = ok && worse;
  out << "td_error_exceeds_uniform," << (worse ? "yes" : "no") << ",yes," << (worse ? "PASS" : "FAIL") << '\n';
  return ok ? kOk : kFailure;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Importance-sampled experience replay experiments"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  Overrides ov;
  std::optional<std::string> seeds;
  std::optional<std::string> resume;
  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI configuration file");
    sub->add_option("--seed", ov.seed, "root seed");
    sub->add_option("--steps", ov.steps, "environment steps");
    sub->add_option("--sampler", ov.sampler,
                    "uniform|per|ger|laber-mean|laber-lazy|laber-max|per-laber|ger-laber");
    sub->add_option("--m", ov.m, "large-batch multiplier");
    sub->add_option("--batch-size", ov.batch_size, "mini-batch size");
    sub->add_option("--out", ov.out, "output directory");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "run a training job");
  add_run_flags(train_cmd);
  train_cmd->add_option("--seeds", seeds, "seed range a..b, one output directory per seed");
  train_cmd->add_option("--resume", resume, "checkpoint to continue from");

  CLI::App* variance_cmd = app.add_subcommand("variance-study", "two-sample variance counter-example");
  std::optional<std::string> variance_out;
  variance_cmd->add_option("--out", variance_out, "also write the table to this directory");

  CLI::App* tv_cmd = app.add_subcommand("tv-study", "total variation of surrogate vs uniform sampling");
  add_run_flags(tv_cmd);

  CLI::App* bench_cmd = app.add_subcommand("bench", "forward/backward timing table");
  std::string net_text = "400,128,128,6";
  std::string mult_text = "1,2,4,8";
  std::size_t bench_batch = 32;
  std::size_t passes = 20;
  std::uint64_t bench_seed = 0;
  bench_cmd->add_option("--net", net_text, "layer sizes, input first");
  bench_cmd->add_option("--batch-size", bench_batch, "base batch size B");
  bench_cmd->add_option("--multipliers", mult_text, "batch multipliers");
  bench_cmd->add_option("--passes", passes, "timed passes per cell (>= 20)");
  bench_cmd->add_option("--seed", bench_seed, "initialization seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*variance_cmd) {
      const auto values = variance_study_values();
      std::ostringstream table;
      const int code = report_variance_study(values, table);
      out << table.str();
      if (variance_out) {
        std::filesystem::create_directories(*variance_out);
        write_text(std::filesystem::path(*variance_out) / "variance_study.csv", table.str());
      }
      return code;
    }
    if (*bench_cmd) {
      return cmd_bench(parse_sizes("net", net_text), bench_batch, parse_sizes("multipliers", mult_text), passes,
                       bench_seed, out);
    }
    const std::optional<std::filesystem::path> file =
        config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt;
    if (*tv_cmd) return cmd_tv_study(resolve_config(tv_study_defaults(), file, ov), out);

    const RunConfig base = resolve_config(RunConfig{}, file, ov);
    if (!seeds) {
      const TrainSummary s = train(base, resume ? std::optional<std::filesystem::path>(*resume) : std::nullopt);
      out << "steps=" << s.steps << " episodes=" << s.episodes;
      if (s.matches_oracle) out << " policy_matches_oracle=" << (*s.matches_oracle ? "yes" : "no");
      out << '\n';
      return kOk;
    }
    if (resume) throw Error(ErrorKind::Config, "key 'resume': cannot be combined with --seeds");
    const auto [first, last] = parse_seed_range(*seeds);
    std::vector<RunConfig> jobs;
    for (std::uint64_t s = first; s <= last; ++s) {
      RunConfig job = base;
      job.seed = s;
      job.out = base.out / ("seed_" + std::to_string(s));
      jobs.push_back(std::move(job));
    }
    std::vector<std::optional<TrainSummary>> results(jobs.size());
    std::vector<std::string> errors(jobs.size());
    std::size_t next = 0;
    std::mutex lock;
    auto worker = [&] {
      for (;;) {
        std::size_t k;
        {
          std::lock_guard<std::mutex> guard(lock);
          if (next == jobs.size()) return;
          k = next++;
        }
        try {
          results[k] = train(jobs[k]);
        } catch (const std::exception& e) {
          errors[k] = e.what();
        }
      }
    };
    const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, jobs.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    int code = kOk;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      out << "seed=" << jobs[k].seed;
      if (results[k]) {
        out << " steps=" << results[k]->steps << " episodes=" << results[k]->episodes;
        if (results[k]->matches_oracle) out << " policy_matches_oracle=" << (*results[k]->matches_oracle ? "yes" : "no");
      } else {
        out << " error=" << errors[k];
        code = kFailure;
      }
      out << '\n';
    }
    return code;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::Config ? kUsage : kFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace laber::cli
