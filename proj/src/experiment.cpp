#include "tkgr/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace tkgr {

namespace fs = std::filesystem;

void ExperimentConfig::set_seed(std::uint64_t seed) {
  train.seed = seed;
  if (synthetic) synthetic->seed = seed;
}

void ExperimentConfig::validate() const {
  if (dataset.empty() == !synthetic.has_value()) {
    throw ConfigError("exactly one of dataset and synthetic.* must be given");
  }
  if (!dataset.empty() && !fs::is_regular_file(dataset)) throw ConfigError("dataset not found: " + dataset);
  if (synthetic) synthetic->validate();
  train.validate();
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

}  // namespace

void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto sz = [&] { return parse_number<std::size_t>(key, value); };
  auto dbl = [&] { return parse_number<double>(key, value); };
  auto i64 = [&] { return parse_number<std::int64_t>(key, value); };
  TrainConfig& t = c.train;

  if (key.starts_with("synthetic.")) {
    if (!c.synthetic) c.synthetic.emplace();
    SyntheticSpec& s = *c.synthetic;
    const std::string k = key.substr(10);
    if (k == "entities_per_block") s.entities_per_block = sz();
    else if (k == "blocks") s.blocks = sz();
    else if (k == "relations") s.relations = sz();
    else if (k == "event_rate") s.event_rate = dbl();
    else if (k == "horizon") s.horizon = i64();
    else if (k == "drift_period") s.drift_period = i64();
    else if (k == "arrival_rate") s.arrival_rate = dbl();
    else if (k == "seed") s.seed = parse_number<std::uint64_t>(key, value);
    else if (k == "popularity_skew") s.popularity_skew = dbl();
    else if (k == "repeat_prob") s.repeat_prob = dbl();
    else if (k == "stagger") s.stagger = i64();
    else throw ConfigError("unknown key " + key);
    return;
  }
  if (key == "dataset") c.dataset = value;
  else if (key == "mode") c.mode = parse_mode(value);
  else if (key == "out") c.out_dir = value;
  else if (key == "filter") c.filter = parse_bool(key, value);
  else if (key == "time_aware_filter") c.time_aware_filter = parse_bool(key, value);
  else if (key == "per_direction") c.per_direction = parse_bool(key, value);
  else if (key == "ratios") {
    std::array<double, 4> r{};
    std::stringstream ss(value);
    std::string part;
    std::size_t n = 0;
    while (std::getline(ss, part, ',')) {
      if (n == 4) throw ConfigError("ratios needs exactly 4 values");
      r[n++] = parse_number<double>(key, trim(part));
    }
    if (n != 4) throw ConfigError("ratios needs exactly 4 values");
    c.ratios = r;
  } else if (key == "seed") c.set_seed(parse_number<std::uint64_t>(key, value));
  else if (key == "inner_lr") t.inner_lr = dbl();
  else if (key == "outer_lr") t.outer_lr = dbl();
  else if (key == "margin") t.margin = dbl();
  else if (key == "shots") t.shots = sz();
  else if (key == "intervals") t.intervals = sz();
  else if (key == "budget") t.budget = sz();
  else if (key == "window") t.window = i64();
  else if (key == "dim") t.dim = sz();
  else if (key == "layers") t.layers = sz();
  else if (key == "delta") t.delta = dbl();
  else if (key == "kl_variance") t.kl_variance = dbl();
  else if (key == "negatives") t.negatives = sz();
  else if (key == "epochs") t.epochs = sz();
  else if (key == "batch_size") t.batch_size = sz();
  else if (key == "inner_steps") t.inner_steps = sz();
  else if (key == "optimizer") t.optimizer = parse_optimizer(value);
  else if (key == "pretrain_epochs") t.pretrain_epochs = sz();
  else if (key == "pretrain_lr") t.pretrain_lr = dbl();
  else if (key == "pretrain_batch") t.pretrain_batch = sz();
  else if (key == "task_fraction") t.task_fraction = dbl();
  else if (key == "filter_negatives") t.filter_negatives = parse_bool(key, value);
  else if (key == "history_lag") t.history_lag = i64();
  else throw ConfigError("unknown key " + key);
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig config;
  std::string line;
  std::size_t number = 0;
  std::optional<std::uint64_t> seed;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "seed") {
        seed = parse_number<std::uint64_t>(key, value);
      } else {
        apply_setting(config, key, value);
      }
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(number) + ": " + e.what());
    }
  }
  // Applied last so it also reaches a synthetic spec declared after it.
  if (seed) config.set_seed(*seed);
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  ExperimentConfig config = parse_config(in);
  // Relative dataset paths resolve against the config file's directory.
  if (!config.dataset.empty() && fs::path(config.dataset).is_relative()) {
    const fs::path candidate = fs::path(path).parent_path() / config.dataset;
    if (fs::exists(candidate)) config.dataset = candidate.string();
  }
  return config;
}

TemporalKG load_graph(const ExperimentConfig& config) {
  if (config.synthetic) return generate_synthetic(*config.synthetic).kg;
  return ingest_tsv_file(config.dataset);
}

namespace {

// Entity ids are handed out in order of first appearance, so every period
// owns a contiguous id range. Returns the end of the range of `role` and
// checks the layout.
std::size_t rows_through(const SplitAssignment& split, Role role) {
  std::size_t rows = 0;
  bool passed = false;
  for (std::size_t e = 0; e < split.roles.size(); ++e) {
    const bool inside = split.roles[e] <= role;
    if (inside && passed) throw Error("entity ids are not ordered by first appearance");
    if (!inside) passed = true;
    if (inside) rows = e + 1;
  }
  return rows;
}

std::vector<FewShotTask> tasks_for(const TemporalKG& graph, std::span<const EntityId> entities,
                                   const TrainConfig& train) {
  std::vector<FewShotTask> out;
  for (EntityId e : entities) {
    if (graph.facts_of(e).size() <= train.shots) continue;
    out.push_back(build_task(graph, e, train.shots, train.intervals));
  }
  return out;
}

}  // namespace

PreparedData prepare_data(TemporalKG kg, const ExperimentConfig& config) {
  PreparedData data;
  data.kg = std::move(kg);
  data.split = chronological_split(data.kg, config.ratios);
  const auto [t1, t2, t3] = data.split.boundaries;
  data.background_rows = rows_through(data.split, Role::kBackground);
  data.train_rows = rows_through(data.split, Role::kMetaTrain);
  rows_through(data.split, Role::kMetaValid);

  // Meta-train tasks only see facts up to t2, so their queries never reach
  // into the validation or test periods.
  std::vector<EntityId> train_entities = data.split.entities_with(Role::kMetaTrain);
  if (config.train.task_fraction < 1.0) {
    std::mt19937_64 rng(config.train.seed ^ 0x7461'736b'0000'0003ULL);
    std::shuffle(train_entities.begin(), train_entities.end(), rng);
    const auto keep = static_cast<std::size_t>(
        std::ceil(config.train.task_fraction * static_cast<double>(train_entities.size())));
    train_entities.resize(std::min(keep, train_entities.size()));
    std::sort(train_entities.begin(), train_entities.end());
  }
  data.train_tasks = tasks_for(data.kg.until(t2), train_entities, config.train);
  data.test_tasks = tasks_for(data.kg, data.split.entities_with(Role::kMetaTest), config.train);
  data.valid_entities = data.split.entities_with(Role::kMetaValid).size();

  // Fact indices of until(t2) coincide with those of the full graph because
  // it keeps a time-sorted prefix.
  std::unordered_set<std::size_t> hidden;
  for (const auto* tasks : {&data.train_tasks, &data.test_tasks}) {
    for (const FewShotTask& task : *tasks) hidden.insert(task.query_facts.begin(), task.query_facts.end());
  }
  // Query facts of validation entities stay hidden as well.
  for (EntityId e : data.split.entities_with(Role::kMetaValid)) {
    const auto facts = data.kg.facts_of(e);
    if (facts.size() > config.train.shots) hidden.insert(facts.begin() + static_cast<std::ptrdiff_t>(config.train.shots), facts.end());
  }
  data.context = data.kg.filtered([&](std::size_t i) { return !hidden.contains(i); });
  for (const Quadruple& q : data.context.quadruples()) {
    if (q.time <= t1) data.background_facts.push_back(q);
  }
  (void)t3;
  return data;
}

PretrainResult pretrain_stage(const PreparedData& data, const EventSource& graph, const ExperimentConfig& config) {
  if (data.background_facts.empty()) throw ArgumentError("no background facts to pretrain on");
  NeighborCache neighbors(graph, config.train.budget, config.train.window);
  ModelParams init = init_params(data.background_rows, data.kg.num_relations(), config.train.dim, config.train.seed);
  return pretrain_background(neighbors, std::move(init), data.background_facts, config.train);
}

TrainedModel meta_stage(const PreparedData& data, const EventSource& graph, const PretrainResult& pretrained,
                        const ExperimentConfig& config, MetaObserver* observer) {
  NeighborCache neighbors(graph, config.train.budget, config.train.window);
  ModelParams phi0 = pretrained.params;
  extend_entity_table(phi0, data.train_rows, data.kg, config.train.shots);
  MetaState state = meta_train(neighbors, data.train_tasks, std::move(phi0), config.train, config.mode, observer);
  TrainedModel out;
  out.params = std::move(state.phi);
  out.pretrain_losses = pretrained.epoch_losses;
  out.log = std::move(state.log);
  return out;
}

std::vector<RankedQuery> evaluate(const PreparedData& data, const EventSource& graph, const ModelParams& params,
                                  const ExperimentConfig& config) {
  if (data.test_tasks.empty()) throw TaskError("no meta-test entity has more than K facts");
  NeighborCache neighbors(graph, config.train.budget, config.train.window);
  ModelParams phi = params;
  extend_entity_table(phi, data.kg.num_entities(), data.kg, config.train.shots);
  std::optional<FilterIndex> filter;
  if (config.filter) filter.emplace(data.kg.quadruples(), config.time_aware_filter);

  std::vector<RankedQuery> ranked;
  for (const FewShotTask& task : data.test_tasks) {
    // Seeded per entity so results do not depend on evaluation order.
    std::mt19937_64 rng(config.train.seed ^ (0x9e37'79b9'7f4a'7c15ULL * (static_cast<std::uint64_t>(task.entity) + 1)));
    const ModelParams adapted = meta_test_adapt(phi, neighbors, task.entity, task.support, config.train, rng);
    ValueEncoder encoder(graph, adapted, config.train.encoder(), &neighbors);
    for (std::size_t m = 0; m < task.query_intervals.size(); ++m) {
      for (const Quadruple& q : task.query_intervals[m]) {
        for (Side side : {Side::kObject, Side::kSubject}) {
          RankedQuery r = rank_query(encoder, adapted, q, side, filter ? &*filter : nullptr, config.train.history_lag);
          r.interval = m + 1;
          ranked.push_back(r);
        }
      }
    }
  }
  return ranked;
}

namespace {

template <typename F>
auto staged(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void write_file(const fs::path& path, const std::string& content, std::vector<fs::path>& written) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  written.push_back(path);
  out << content;
  if (!out) throw Error("write failed for " + path.string());
}

std::string dump_metrics(const MetricsReport& report) { return metrics_to_json(report).dump(2) + "\n"; }

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  staged("config", [&] { config.validate(); });
  TemporalKG kg = staged("load", [&] { return load_graph(config); });
  const PreparedData data = staged("split", [&] { return prepare_data(std::move(kg), config); });
  const PretrainResult pretrained = staged("pretrain", [&] { return pretrain_stage(data, data.context, config); });

  ExperimentResult result;
  result.model = staged("meta-train", [&] { return meta_stage(data, data.context, pretrained, config); });
  result.train_tasks = data.train_tasks.size();
  result.test_tasks = data.test_tasks.size();
  result.mean_drift = mean_drift(result.model.log);

  staged("evaluate", [&] {
    const auto ranked = evaluate(data, data.context, result.model.params, config);
    result.metrics = aggregate_metrics(ranked);
    if (config.per_direction) {
      std::vector<RankedQuery> subj, obj;
      for (const RankedQuery& r : ranked) (r.masked == Side::kSubject ? subj : obj).push_back(r);
      if (!subj.empty()) result.subject_metrics = aggregate_metrics(subj);
      if (!obj.empty()) result.object_metrics = aggregate_metrics(obj);
    }
  });

  if (config.out_dir.empty()) return result;
  std::vector<fs::path> written;
  try {
    const fs::path dir(config.out_dir);
    fs::create_directories(dir);
    write_file(dir / "metrics.json", dump_metrics(result.metrics), written);
    write_file(dir / "metrics.csv",
               "mode,seed," + metrics_csv_header() + "\n" + mode_name(config.mode) + "," +
                   std::to_string(config.train.seed) + "," + metrics_csv_row(result.metrics) + "\n",
               written);
    if (config.per_direction) {
      write_file(dir / "metrics_subject.json", dump_metrics(result.subject_metrics), written);
      write_file(dir / "metrics_object.json", dump_metrics(result.object_metrics), written);
    }
    std::ostringstream log;
    write_train_log(result.model.log, log);
    write_file(dir / "train_log.jsonl", log.str(), written);
    std::ostringstream ckpt;
    write_checkpoint(result.model.params, ckpt);
    write_file(dir / "checkpoint.json", ckpt.str(), written);
    std::ostringstream split;
    write_split_manifest(data.kg, data.split, split);
    write_file(dir / "split.txt", split.str(), written);
  } catch (const std::exception& e) {
    std::error_code ignored;
    for (const fs::path& p : written) fs::remove(p, ignored);
    throw StageError("write", e.what());
  }
  return result;
}

std::vector<AblationRow> AblationTable::of(Mode mode) const {
  std::vector<AblationRow> out;
  for (const AblationRow& r : rows) {
    if (r.mode == mode) out.push_back(r);
  }
  return out;
}

double AblationTable::mean_mrr(Mode mode) const {
  const auto selected = of(mode);
  if (selected.empty()) return 0.0;
  double total = 0.0;
  for (const AblationRow& r : selected) total += r.metrics.mrr;
  return total / static_cast<double>(selected.size());
}

namespace {

constexpr std::array<Mode, 4> kAblationModes = {Mode::kFinetuneOnly, Mode::kStaticMaml, Mode::kNoRegularizer,
                                                Mode::kFull};

}  // namespace

std::string AblationTable::to_csv() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "mode,seed,mrr,hits1,hits3,hits10,query_count,random_mrr,drift";
  for (std::size_t m = 1; m <= intervals; ++m) out << ",mrr_interval" << m;
  out << '\n';
  auto interval_mrr = [&](const MetricsReport& r, std::size_t m) {
    const auto it = r.per_interval.find(m);
    return it == r.per_interval.end() ? 0.0 : it->second.mrr;
  };
  for (const AblationRow& r : rows) {
    out << mode_name(r.mode) << ',' << r.seed << ',' << r.metrics.mrr << ',' << r.metrics.hits1 << ','
        << r.metrics.hits3 << ',' << r.metrics.hits10 << ',' << r.metrics.query_count << ',' << r.metrics.random_mrr
        << ',' << r.mean_drift;
    for (std::size_t m = 1; m <= intervals; ++m) out << ',' << interval_mrr(r.metrics, m);
    out << '\n';
  }
  for (Mode mode : kAblationModes) {
    const auto selected = of(mode);
    if (selected.empty()) continue;
    const auto n = static_cast<double>(selected.size());
    double mrr = 0, h1 = 0, h3 = 0, h10 = 0, rnd = 0, drift = 0;
    std::size_t queries = 0;
    std::vector<double> per(intervals + 1, 0.0);
    for (const AblationRow& r : selected) {
      mrr += r.metrics.mrr / n;
      h1 += r.metrics.hits1 / n;
      h3 += r.metrics.hits3 / n;
      h10 += r.metrics.hits10 / n;
      rnd += r.metrics.random_mrr / n;
      drift += r.mean_drift / n;
      queries += r.metrics.query_count;
      for (std::size_t m = 1; m <= intervals; ++m) per[m] += interval_mrr(r.metrics, m) / n;
    }
    out << mode_name(mode) << ",mean," << mrr << ',' << h1 << ',' << h3 << ',' << h10 << ','
        << queries / selected.size() << ',' << rnd << ',' << drift;
    for (std::size_t m = 1; m <= intervals; ++m) out << ',' << per[m];
    out << '\n';
  }
  return out.str();
}

AblationTable run_ablation_suite(const ExperimentConfig& config, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  AblationTable table;
  table.intervals = config.train.intervals;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig cfg = config;
    cfg.set_seed(seed);
    staged("config", [&] { cfg.validate(); });
    TemporalKG kg = staged("load", [&] { return load_graph(cfg); });
    const PreparedData data = staged("split", [&] { return prepare_data(std::move(kg), cfg); });
    const PretrainResult pretrained = staged("pretrain", [&] { return pretrain_stage(data, data.context, cfg); });
    for (Mode mode : kAblationModes) {
      cfg.mode = mode;
      const TrainedModel model = staged("meta-train", [&] { return meta_stage(data, data.context, pretrained, cfg); });
      AblationRow row;
      row.mode = mode;
      row.seed = seed;
      row.mean_drift = mean_drift(model.log);
      row.metrics = staged("evaluate", [&] {
        const auto ranked = evaluate(data, data.context, model.params, cfg);
        return aggregate_metrics(ranked);
      });
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

MetricsReport run_cross_shot(const ExperimentConfig& config, std::size_t train_shots, std::size_t test_shots) {
  ExperimentConfig train_cfg = config;
  train_cfg.train.shots = train_shots;
  ExperimentConfig test_cfg = config;
  test_cfg.train.shots = test_shots;
  staged("config", [&] {
    train_cfg.validate();
    test_cfg.validate();
  });
  const TemporalKG kg = staged("load", [&] { return load_graph(config); });
  const PreparedData train_data = staged("split", [&] { return prepare_data(kg, train_cfg); });
  const PreparedData test_data = staged("split", [&] { return prepare_data(kg, test_cfg); });
  const PretrainResult pretrained =
      staged("pretrain", [&] { return pretrain_stage(train_data, train_data.context, train_cfg); });
  const TrainedModel model =
      staged("meta-train", [&] { return meta_stage(train_data, train_data.context, pretrained, train_cfg); });
  return staged("evaluate", [&] {
    const auto ranked = evaluate(test_data, test_data.context, model.params, test_cfg);
    return aggregate_metrics(ranked);
  });
}

}  // namespace tkgr
