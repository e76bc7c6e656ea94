// reglab: registration laboratory command-line tool.
#include <CLI11.hpp>

#include "reglab/cli.hpp"

namespace {

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += std::string(i ? " " : "") + argv[i];
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reglab: synthesis-driven image registration laboratory"};
  app.require_subcommand(1);
  const std::string command = join_args(argc, argv);

  reglab::cli::SynthOpts so;
  so.command = command;
  auto* synth = app.add_subcommand("synth", "generate a phantom label map and image");
  synth->add_option("--seed", so.seed);
  synth->add_option("--dims", so.dims, "grid extents (two values)")->expected(2);
  synth->add_option("--labels", so.labels, "number of target labels");
  synth->add_option("--distractors", so.distractors);
  synth->add_option("--out-labels", so.out_labels);
  synth->add_option("--out-image", so.out_image);
  synth->add_option("--preview", so.preview, "optional PGM preview path");
  synth->add_option("--config", so.config, "synthesis config JSON");

  reglab::cli::TrainOpts to;
  to.command = command;
  auto* train = app.add_subcommand("train", "train a registration model");
  train->add_option("--arch", to.arch,
                    "detector | encoder | decomposer | unet | unet-hyper")
      ->required();
  train->add_option("--config", to.config, "training config JSON");
  train->add_option("--out-dir", to.out_dir)->required();
  train->add_option("--resume", to.resume, "checkpoint to resume from");

  reglab::cli::RegisterOpts ro;
  ro.command = command;
  auto* reg = app.add_subcommand("register", "register a moving image to a fixed image");
  reg->add_option("--moving", ro.moving)->required();
  reg->add_option("--fixed", ro.fixed)->required();
  reg->add_option("--model", ro.model)->required();
  reg->add_option("--lambda", ro.lambda, "regularization trade-off in [0,1]");
  reg->add_option("--out-transform", ro.out_transform);
  reg->add_option("--out-warp", ro.out_warp);
  reg->add_option("--out-moved", ro.out_moved);
  reg->add_option("--mode", ro.mode, "midspace | moved");
  reg->add_flag("--affine-only", ro.affine_only, "skip the deformable stage");

  reglab::cli::MetricsOpts mo;
  mo.command = command;
  auto* met = app.add_subcommand("metrics", "evaluate registration quality");
  met->add_option("--moved-labels", mo.moved_labels);
  met->add_option("--fixed-labels", mo.fixed_labels);
  met->add_option("--moved-image", mo.moved_image);
  met->add_option("--fixed-image", mo.fixed_image);
  met->add_option("--warp", mo.warp, "displacement field MVOL");
  met->add_option("--mask", mo.mask);
  met->add_option("--out", mo.out, "report JSON path")->required();

  reglab::cli::SweepOpts wo;
  wo.command = command;
  auto* sweep = app.add_subcommand("sweep", "gamma or lambda sweep over trained models");
  sweep->add_option("--kind", wo.kind, "gamma | lambda")->required();
  sweep->add_option("--model", wo.models, "model checkpoint (repeatable)")->required();
  sweep->add_option("--grid", wo.grid, "sweep values")->required();
  sweep->add_option("--pairs", wo.pairs, "evaluation pairs per value");
  sweep->add_option("--seed", wo.seed);
  sweep->add_option("--dims", wo.dims, "evaluation grid extent");
  sweep->add_option("--out", wo.out, "output CSV")->required();
  sweep->add_option("--svg", wo.svg, "optional SVG plot path");

  reglab::cli::DecomposeOpts dop;
  dop.command = command;
  auto* dec = app.add_subcommand("decompose", "decompose affine transform files to CSV");
  dec->add_option("--transforms", dop.transforms, "path or glob (name may contain *)")
      ->required();
  dec->add_option("--out", dop.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage errors
  }

  if (synth->parsed()) return reglab::cli::cmd_synth(so);
  if (train->parsed()) return reglab::cli::cmd_train(to);
  if (reg->parsed()) return reglab::cli::cmd_register(ro);
  if (met->parsed()) return reglab::cli::cmd_metrics(mo);
  if (sweep->parsed()) return reglab::cli::cmd_sweep(wo);
  if (dec->parsed()) return reglab::cli::cmd_decompose(dop);
  return 2;
}
