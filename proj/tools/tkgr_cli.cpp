// Command-line front end for the experiment pipeline.
//
//   tkgr ingest --input facts.tsv
//   tkgr split --config exp.cfg --out dir
//   tkgr synth --config exp.cfg --out dir
//   tkgr train --config exp.cfg [--mode full] [--seed 3] --out dir
//   tkgr adapt --config exp.cfg --checkpoint ckpt.json --entity NAME --out dir
//   tkgr eval --config exp.cfg --checkpoint ckpt.json --out dir
//   tkgr ablate --config exp.cfg --seeds 5 --out dir
//   tkgr cross-shot --config exp.cfg --train-shots 1 --test-shots 3 --out dir

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tkgr/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--config", c.config, "Experiment config (key = value lines)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed for data generation and training");
  cmd->add_option("--mode", c.mode, "full | static_maml | no_regularizer | finetune_only");
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
}

tkgr::ExperimentConfig resolve(const Common& c) {
  tkgr::ExperimentConfig cfg = tkgr::load_config(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  if (!c.mode.empty()) cfg.mode = tkgr::parse_mode(c.mode);
  if (!c.out.empty()) cfg.out_dir = c.out;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw tkgr::Error("cannot write " + path.string());
  out << text;
}

void print_metrics(const tkgr::MetricsReport& m) {
  std::cout << "MRR " << m.mrr << "  H@1 " << m.hits1 << "  H@3 " << m.hits3 << "  H@10 " << m.hits10 << "  ("
            << m.query_count << " queries, uniform MRR " << m.random_mrr << ")\n";
  for (const auto& [interval, im] : m.per_interval) {
    std::cout << "  interval " << interval << ": MRR " << im.mrr << "  H@10 " << im.hits10 << "  (" << im.query_count
              << ")\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot temporal knowledge graph reasoning"};
  app.require_subcommand(1);

  std::string ingest_input, ingest_out;
  auto* ingest = app.add_subcommand("ingest", "Read a TSV quadruple file and report its statistics");
  ingest->add_option("--input", ingest_input, "Quadruple TSV")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", ingest_out, "Write the normalized TSV to this directory");

  Common split_opts, synth_opts, train_opts, adapt_opts, eval_opts, ablate_opts, cross_opts;
  auto* split = app.add_subcommand("split", "Write the chronological split manifest");
  add_common(split, split_opts, true);
  auto* synth = app.add_subcommand("synth", "Write the synthetic graph as TSV");
  add_common(synth, synth_opts, true);
  auto* train = app.add_subcommand("train", "Pretrain, meta-train, evaluate and write all artifacts");
  add_common(train, train_opts, true);

  std::string adapt_ckpt, adapt_entity;
  auto* adapt = app.add_subcommand("adapt", "Adapt a checkpoint to one entity from its first K facts");
  add_common(adapt, adapt_opts, true);
  adapt->add_option("--checkpoint", adapt_ckpt)->required()->check(CLI::ExistingFile);
  adapt->add_option("--entity", adapt_entity, "Entity name")->required();

  std::string eval_ckpt;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the meta-test entities");
  add_common(eval, eval_opts, false);
  eval->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);

  std::size_t seeds = 5;
  auto* ablate = app.add_subcommand("ablate", "Run all four modes over several seeds");
  add_common(ablate, ablate_opts, true);
  ablate->add_option("--seeds", seeds, "Number of seeds, starting at --seed (default 0)")->check(CLI::PositiveNumber);

  std::size_t train_shots = 1, test_shots = 3;
  auto* cross = app.add_subcommand("cross-shot", "Meta-train with one shot count, adapt with another");
  add_common(cross, cross_opts, false);
  cross->add_option("--train-shots", train_shots, "K during meta-training")->check(CLI::PositiveNumber);
  cross->add_option("--test-shots", test_shots, "K at meta-test adaptation")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      const tkgr::TemporalKG kg = tkgr::ingest_tsv_file(ingest_input);
      std::cout << "entities " << kg.num_entities() << "\nrelations " << kg.num_relations() << "\nquadruples "
                << kg.num_quadruples() << '\n';
      if (!kg.empty()) std::cout << "time span " << kg.min_time() << " .. " << kg.max_time() << '\n';
      if (!ingest_out.empty()) {
        std::ostringstream text;
        tkgr::write_tsv(kg, text);
        write_text(fs::path(ingest_out) / "quadruples.tsv", text.str());
      }
    } else if (*split) {
      const auto cfg = resolve(split_opts);
      const tkgr::TemporalKG kg = tkgr::load_graph(cfg);
      const auto assignment = tkgr::chronological_split(kg, cfg.ratios);
      std::ostringstream text;
      tkgr::write_split_manifest(kg, assignment, text);
      write_text(fs::path(cfg.out_dir) / "split.txt", text.str());
      for (auto role : {tkgr::Role::kBackground, tkgr::Role::kMetaTrain, tkgr::Role::kMetaValid, tkgr::Role::kMetaTest}) {
        std::cout << tkgr::role_name(role) << ' ' << assignment.entities_with(role).size() << '\n';
      }
    } else if (*synth) {
      const auto cfg = resolve(synth_opts);
      if (!cfg.synthetic) throw tkgr::ConfigError("config has no synthetic.* settings");
      const auto graph = tkgr::generate_synthetic(*cfg.synthetic);
      std::ostringstream text;
      tkgr::write_tsv(graph.kg, text);
      write_text(fs::path(cfg.out_dir) / "synthetic.tsv", text.str());
      std::cout << "entities " << graph.kg.num_entities() << "\nquadruples " << graph.kg.num_quadruples()
                << "\nrule violations " << tkgr::audit_rules(graph, *cfg.synthetic) << '\n';
    } else if (*train) {
      const auto cfg = resolve(train_opts);
      const auto start = std::chrono::steady_clock::now();
      const auto result = tkgr::run_experiment(cfg);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "mode " << tkgr::mode_name(cfg.mode) << ", " << result.train_tasks << " training tasks, "
                << result.test_tasks << " test entities, " << secs << " s\n";
      print_metrics(result.metrics);
    } else if (*adapt) {
      const auto cfg = resolve(adapt_opts);
      const auto data = tkgr::prepare_data(tkgr::load_graph(cfg), cfg);
      const auto id = data.kg.entities().find(adapt_entity);
      if (!id) throw tkgr::ArgumentError("unknown entity " + adapt_entity);
      std::vector<tkgr::Quadruple> support;
      for (std::size_t f : data.kg.facts_of(*id)) {
        if (support.size() == cfg.train.shots) break;
        support.push_back(data.kg.quadruple(f));
      }
      tkgr::NeighborCache neighbors(data.context, cfg.train.budget, cfg.train.window);
      std::mt19937_64 rng(cfg.train.seed);
      const auto adapted =
          tkgr::meta_test_adapt(tkgr::load_checkpoint(adapt_ckpt), neighbors, *id, support, cfg.train, rng);
      fs::create_directories(cfg.out_dir);
      tkgr::save_checkpoint(adapted, (fs::path(cfg.out_dir) / "checkpoint.json").string());
      std::cout << "adapted on " << support.size() << " facts\n";
    } else if (*eval) {
      const auto cfg = resolve(eval_opts);
      const auto data = tkgr::prepare_data(tkgr::load_graph(cfg), cfg);
      const auto ranked = tkgr::evaluate(data, data.context, tkgr::load_checkpoint(eval_ckpt), cfg);
      const auto metrics = tkgr::aggregate_metrics(ranked);
      print_metrics(metrics);
      if (!cfg.out_dir.empty()) {
        write_text(fs::path(cfg.out_dir) / "metrics.json", tkgr::metrics_to_json(metrics).dump(2) + "\n");
      }
    } else if (*ablate) {
      auto cfg = resolve(ablate_opts);
      std::vector<std::uint64_t> seed_list(seeds);
      std::iota(seed_list.begin(), seed_list.end(), ablate_opts.seed.value_or(0));
      const auto table = tkgr::run_ablation_suite(cfg, seed_list);
      const std::string csv = table.to_csv();
      write_text(fs::path(cfg.out_dir) / "ablation.csv", csv);
      std::cout << csv;
    } else if (*cross) {
      const auto cfg = resolve(cross_opts);
      const auto metrics = tkgr::run_cross_shot(cfg, train_shots, test_shots);
      std::cout << "train K=" << train_shots << ", test K=" << test_shots << '\n';
      print_metrics(metrics);
      if (!cfg.out_dir.empty()) {
        write_text(fs::path(cfg.out_dir) / "metrics.json", tkgr::metrics_to_json(metrics).dump(2) + "\n");
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
