#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "unidad/cli.hpp"

namespace {

void add_config_flags(CLI::App* cmd, unidad::CliOptions& o) {
  cmd->add_option("--config", o.config_path, "flat key=value config file");
  cmd->add_option("--benchmark", o.benchmark, "benchmark name (close|distant)");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--out", o.out, "output root (default $UDAD_OUT_ROOT or ./runs)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale diffusion distillation and few-shot adaptation lab"};
  app.require_subcommand(1);
  unidad::CliOptions o;

  CLI::App* pretrain = app.add_subcommand("pretrain-source", "train and save a source teacher");
  add_config_flags(pretrain, o);

  CLI::App* run = app.add_subcommand("run", "run one pipeline end to end");
  add_config_flags(run, o);
  run->add_option("--pipeline", o.pipeline,
                  "pipeline (unidad|ft|dmd2|ft_then_dmd2|dmd2_then_ft)");
  run->add_option("--teacher", o.teacher_path, "source teacher checkpoint");
  run->add_option("--checkpoint", o.checkpoint, "trainer checkpoint to resume from");

  CLI::App* sweep = app.add_subcommand("sweep", "run a pinned value sweep along one axis");
  add_config_flags(sweep, o);
  sweep->add_option("--pipeline", o.pipeline, "pipeline for every sweep run");
  sweep->add_option("--teacher", o.teacher_path, "source teacher checkpoint");
  sweep->add_option("--axis", o.axis, "a|nfe|k|gan|heads")->required();

  CLI::App* eval = app.add_subcommand("eval", "sample a checkpoint and print its metrics");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--samples", o.samples, "generation count (default: eval_samples)");

  CLI::App* plot = app.add_subcommand("plot", "scatter fresh generations from a checkpoint");
  plot->add_option("--checkpoint", o.checkpoint, "checkpoint to sample")->required();
  plot->add_option("--samples", o.samples, "generation count (default: eval_samples)");
  plot->add_option("--out", o.out, "output SVG path (default: <checkpoint>-plot.svg)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) return unidad::cmd_pretrain_source(o);
    if (run->parsed()) return unidad::cmd_run(o);
    if (sweep->parsed()) return unidad::cmd_sweep(o);
    if (eval->parsed()) return unidad::cmd_eval(o);
    if (plot->parsed()) return unidad::cmd_plot(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
