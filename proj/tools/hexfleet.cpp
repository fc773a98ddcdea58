#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "hexfleet/config.hpp"
#include "hexfleet/errors.hpp"
#include "hexfleet/gradsuite.hpp"
#include "hexfleet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hexfleet;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "flat key = value config file");
  cmd->add_option("--seed", c.seed, "run seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  fs::create_directories(c.out);
  return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// A trajectory CSV when given, otherwise a freshly generated corpus.
TrajectorySet corpus_from(const std::string& data, const RunConfig& cfg) {
  if (!data.empty()) return load_trajectories(data);
  spdlog::info("no --data given; generating a corpus with seed {}", cfg.seed);
  auto recs = pipeline::generate_corpus(cfg, cfg.seed);
  return group_by_vehicle(recs);
}

void write_metrics(const fs::path& path, const sim::Metrics& m) {
  std::ofstream out(path);
  out << "error_km,decisions,empty_loaded_rate,order_acceptance_rate,orders\n";
  out << fmt::format("{:.8g},{},{:.8g},{:.8g},{}\n", m.error_km, m.decisions, m.empty_loaded_rate,
                     m.order_acceptance_rate, m.orders);
}

class StayDispatcher : public sim::Dispatcher {
 public:
  std::map<std::size_t, Action> decide(const sim::World&) override { return {}; }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hexfleet: multiview hex-grid vehicle dispatching"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  Common gen, pre, train, eval, simulate, ratio, alpha, views, grad;
  std::string data, stage = "both", checkpoint, dispatcher = "ground_truth", ratios, alphas;
  bool random_control = false;
  int reps = 3;

  auto* c_gen = app.add_subcommand("gen-data", "simulate a ground-truth corpus and write trajectories.csv");
  add_common(c_gen, gen);

  auto* c_pre = app.add_subcommand("pretrain", "stage 1: GCN init, behavior pretraining, fare calibration");
  add_common(c_pre, pre);
  c_pre->add_option("--data", data, "trajectory CSV (default: generate)");

  auto* c_train = app.add_subcommand("train", "stage 2, or both stages");
  add_common(c_train, train);
  c_train->add_option("--data", data, "trajectory CSV (default: generate)");
  c_train->add_option("--stage", stage, "both | policy")->check(CLI::IsMember({"both", "policy"}));

  auto* c_eval = app.add_subcommand("eval", "run a checkpoint on a simulated city");
  add_common(c_eval, eval);
  c_eval->add_option("--checkpoint", checkpoint, "model checkpoint (default: <out>/model.ckpt)");
  c_eval->add_flag("--random", random_control, "evaluate an untrained model instead");
  c_eval->add_option("--data", data, "corpus for the untrained model's normalizer (default: generate)");

  auto* c_sim = app.add_subcommand("simulate", "policy-free baseline run");
  add_common(c_sim, simulate);
  c_sim->add_option("--dispatcher", dispatcher, "ground_truth | random | stay")
      ->check(CLI::IsMember({"ground_truth", "random", "stay"}));

  auto* c_ratio = app.add_subcommand("sweep-ratio", "ground-truth runs over car:order ratios");
  add_common(c_ratio, ratio);
  c_ratio->add_option("--ratios", ratios, "comma list such as 1:10,1:1,10:1");

  auto* c_alpha = app.add_subcommand("sweep-alpha", "retrain stage 2 per alpha and report Error");
  add_common(c_alpha, alpha);
  c_alpha->add_option("--data", data, "trajectory CSV (default: generate)");
  c_alpha->add_option("--alphas", alphas, "comma list (default 0, 0.1, ..., 1)");

  auto* c_views = app.add_subcommand("sweep-views", "single-view vs multiview ablation on paired seeds");
  add_common(c_views, views);
  c_views->add_option("--data", data, "trajectory CSV (default: generate)");

  auto* c_grad = app.add_subcommand("grad-check", "finite-difference gradient suite");
  add_common(c_grad, grad);
  c_grad->add_option("--reps", reps, "random shapes per block")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*c_gen) {
      auto cfg = resolve(gen);
      fs::path out = gen.out;
      auto recs = pipeline::generate_corpus(cfg, cfg.seed);
      save_trajectories((out / "trajectories.csv").string(), recs);
      auto graph = hex::MultiviewGraph::build(cfg.city_config().bbox, cfg.diameters_km);
      std::vector<std::string> files{"trajectories.csv"};
      for (auto level : hex::kViewLevels) {
        auto name = fmt::format("grid_{}.txt", hex::to_string(level));
        hex::save_grid(out / name, graph.view(level));
        files.push_back(name);
      }
      pipeline::write_manifest(out, "gen-data", cfg, {{"seed", cfg.seed}}, files);
      spdlog::info("wrote {} records to {}", recs.size(), (out / "trajectories.csv").string());
    } else if (*c_pre || *c_train) {
      const Common& com = *c_pre ? pre : train;
      auto cfg = resolve(com);
      auto st = *c_pre ? pipeline::Stage::pretrain : (stage == "policy" ? pipeline::Stage::policy : pipeline::Stage::both);
      auto corpus = corpus_from(data, cfg);
      auto result = pipeline::run_training(cfg, corpus, st, com.out);
      std::vector<std::string> files;
      if (st != pipeline::Stage::policy) files = {"stage1.ckpt", "behavior_metrics.csv"};
      if (st != pipeline::Stage::pretrain) {
        files.push_back("model.ckpt");
        files.push_back("metrics.csv");
      }
      pipeline::write_manifest(com.out, *c_pre ? "pretrain" : "train", cfg, {{"seed", cfg.seed}}, files);
      spdlog::info("checkpoint {}", result.checkpoint.string());
    } else if (*c_eval) {
      auto cfg = resolve(eval);
      fs::path out = eval.out;
      pipeline::Model model;
      if (random_control) {
        auto corpus = pipeline::prepare_corpus(corpus_from(data, cfg), cfg);
        model = pipeline::random_model(corpus, cfg);
      } else {
        fs::path ckpt = checkpoint.empty() ? out / "model.ckpt" : fs::path(checkpoint);
        model = pipeline::model_from_tensors(ad::load_checkpoint(ckpt), cfg);
      }
      auto world = sim::World::generate(cfg.city_config(), cfg.seed);
      auto r = pipeline::run_inference(model, world, cfg.seed + 1);
      pipeline::write_tick_log(out / "eval_ticks.csv", r.ticks);
      write_metrics(out / "eval_metrics.csv", r.metrics);
      pipeline::write_manifest(out, random_control ? "eval --random" : "eval", cfg,
                               {{"seed", cfg.seed}, {"world", cfg.seed}, {"reference", cfg.seed + 1}},
                               {"eval_ticks.csv", "eval_metrics.csv"});
      fmt::print("error_km={:.4f} decisions={} empty_loaded_rate={:.4f} acceptance_rate={:.4f}\n",
                 r.metrics.error_km, r.metrics.decisions, r.metrics.empty_loaded_rate,
                 r.metrics.order_acceptance_rate);
    } else if (*c_sim) {
      auto cfg = resolve(simulate);
      fs::path out = simulate.out;
      auto world = sim::World::generate(cfg.city_config(), cfg.seed);
      std::unique_ptr<sim::Dispatcher> d;
      if (dispatcher == "ground_truth") d = std::make_unique<sim::GroundTruthDriver>(cfg.seed + 1);
      if (dispatcher == "random") d = std::make_unique<sim::RandomDispatcher>(cfg.seed + 1);
      if (dispatcher == "stay") d = std::make_unique<StayDispatcher>();
      std::vector<sim::TickRow> ticks;
      sim::EpisodeOptions opt;
      opt.on_tick = [&](const sim::World&, const sim::TickRow& row) { ticks.push_back(row); };
      auto m = sim::run_episode(world, *d, opt);
      pipeline::write_tick_log(out / "ticks.csv", ticks);
      write_metrics(out / "metrics.csv", m);
      save_trajectories((out / "trajectories.csv").string(), world.records());
      pipeline::write_manifest(out, "simulate --dispatcher " + dispatcher, cfg,
                               {{"seed", cfg.seed}, {"dispatcher", cfg.seed + 1}},
                               {"ticks.csv", "metrics.csv", "trajectories.csv"});
      fmt::print("empty_loaded_rate={:.4f} acceptance_rate={:.4f} orders={}\n", m.empty_loaded_rate,
                 m.order_acceptance_rate, m.orders);
    } else if (*c_ratio) {
      auto cfg = resolve(ratio);
      auto list = ratios.empty() ? sim::default_ratios() : split_list(ratios);
      auto rows = sim::ratio_sweep(cfg.city_config(), list, cfg.seed);
      fs::path out = ratio.out;
      std::ofstream f(out / "ratio_sweep.csv");
      f << "ratio,vehicles,orders,empty_loaded_rate,acceptance_rate\n";
      std::vector<double> r, e, a;
      for (const auto& row : rows) {
        f << fmt::format("{},{},{},{:.8g},{:.8g}\n", row.ratio, row.vehicles, row.orders, row.empty_loaded_rate,
                         row.order_acceptance_rate);
        r.push_back(sim::parse_ratio(row.ratio));
        e.push_back(row.empty_loaded_rate);
        a.push_back(row.order_acceptance_rate);
      }
      pipeline::write_manifest(out, "sweep-ratio", cfg, {{"seed", cfg.seed}, {"driver", cfg.seed + 1}},
                               {"ratio_sweep.csv"});
      if (rows.size() >= 2) {
        fmt::print("spearman(ratio, empty_loaded_rate)={:.3f} spearman(ratio, acceptance_rate)={:.3f}\n",
                   sim::spearman(r, e), sim::spearman(r, a));
      }
    } else if (*c_alpha) {
      auto cfg = resolve(alpha);
      std::vector<double> list;
      for (const auto& s : split_list(alphas)) list.push_back(std::stod(s));
      if (list.empty()) list = pipeline::default_alphas();
      auto corpus = pipeline::prepare_corpus(corpus_from(data, cfg), cfg);
      auto s1 = pipeline::run_stage1(corpus, cfg);
      auto episodes = pipeline::build_episodes(corpus, s1.params, cfg);
      auto rows = pipeline::alpha_sweep(episodes, s1.params, cfg, list);
      fs::path out = alpha.out;
      std::ofstream f(out / "alpha_sweep.csv");
      f << "alpha,val_error_km,test_error_km\n";
      for (const auto& row : rows) f << fmt::format("{:.2f},{:.8g},{:.8g}\n", row.alpha, row.val_error_km, row.test_error_km);
      pipeline::write_manifest(out, "sweep-alpha", cfg, {{"seed", cfg.seed}}, {"alpha_sweep.csv"});
    } else if (*c_views) {
      auto cfg = resolve(views);
      auto rows = pipeline::view_ablation(corpus_from(data, cfg), cfg);
      fs::path out = views.out;
      std::ofstream f(out / "view_ablation.csv");
      f << "views,rep,seed,test_error_km\n";
      for (const auto& row : rows) f << fmt::format("\"{}\",{},{},{:.8g}\n", row.views, row.rep, row.seed, row.test_error_km);
      pipeline::write_manifest(out, "sweep-views", cfg, {{"seed", cfg.seed}}, {"view_ablation.csv"});
    } else if (*c_grad) {
      auto cfg = resolve(grad);
      auto rows = run_gradient_suite(cfg.seed, reps);
      fs::path out = grad.out;
      std::ofstream f(out / "grad_check.csv");
      f << "block,checks,max_relative_error,passed\n";
      bool ok = true;
      for (const auto& r : rows) {
        f << fmt::format("{},{},{:.3e},{}\n", r.block, r.checks, r.max_relative_error, r.passed ? 1 : 0);
        fmt::print("{:<20} {:>3} checks  max rel err {:.2e}  {}\n", r.block, r.checks, r.max_relative_error,
                   r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
      }
      pipeline::write_manifest(out, "grad-check", cfg, {{"seed", cfg.seed}}, {"grad_check.csv"});
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
