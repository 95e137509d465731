#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctxbias/cli/commands.hpp"
#include "ctxbias/error.hpp"

namespace {

enum Exit { ok = 0, usage = 1, data_error = 2, divergence = 3 };

}  // namespace

int main(int argc, char** argv) {
  using namespace ctxbias;
  CLI::App app{"Contextual-bias experiments: data, training, evaluation and figures"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--set", overrides, "override a config key, e.g. training.common.epochs=5");
  };

  auto* prepare = app.add_subcommand("prepare-data", "generate or ingest datasets");
  add_config(prepare);

  auto* pairs = app.add_subcommand("find-pairs", "identify biased pairs with the standard model");
  add_config(pairs);

  cli::TrainRequest train_req;
  std::string stage1, resume;
  auto* train = app.add_subcommand("train", "train a model with one method");
  add_config(train);
  train->add_option("-m,--method", train_req.method, "method name")->required();
  train->add_option("--stage1", stage1, "stage-1 checkpoint (default checkpoints/standard.ckpt)");
  train->add_option("--resume", resume, "continue from a saved checkpoint");
  train->add_option("--stop-after", train_req.stop_after_epoch, "stop after this epoch");

  std::vector<std::string> eval_methods;
  auto* evaluate = app.add_subcommand("evaluate", "write evaluation reports for trained models");
  add_config(evaluate);
  evaluate->add_option("-m,--method", eval_methods, "methods (default: all checkpoints)");

  auto* ablate = app.add_subcommand("ablate", "sweep lambda2 and x_o size");
  add_config(ablate);

  cli::CamRequest cam_req;
  auto* cam = app.add_subcommand("cam-export", "write CAM overlays for images");
  add_config(cam);
  cam->add_option("-m,--method", cam_req.method, "method whose checkpoint to use")->required();
  cam->add_option("--id", cam_req.ids, "image ids")->required();
  cam->add_option("--category", cam_req.categories, "category names or indices")->required();

  std::vector<std::string> runs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "compare runs: bar charts and markdown table");
  report->add_option("runs", runs, "run directories")->required();
  report->add_option("-o,--out", report_out, "output directory (default: first run)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : usage;
  }

  try {
    if (report->parsed()) {
      std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
      cli::cmd_report(dirs, report_out.empty() ? dirs.front() : std::filesystem::path(report_out), std::cout);
      return ok;
    }
    const auto cfg = cli::load_config(config_path, overrides);
    if (prepare->parsed()) {
      cli::cmd_prepare_data(cfg, std::cout);
    } else if (pairs->parsed()) {
      cli::cmd_find_pairs(cfg, std::cout);
    } else if (train->parsed()) {
      if (!stage1.empty()) train_req.stage1 = stage1;
      if (!resume.empty()) train_req.resume = resume;
      cli::cmd_train(cfg, train_req, std::cout);
    } else if (evaluate->parsed()) {
      cli::cmd_evaluate(cfg, eval_methods, std::cout);
    } else if (ablate->parsed()) {
      cli::cmd_ablate(cfg, std::cout);
    } else if (cam->parsed()) {
      cli::cmd_cam_export(cfg, cam_req, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return usage;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return divergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return data_error;
  }
  return ok;
}
