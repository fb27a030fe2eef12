// SPDX-License-Identifier: Apache-2.0
//
// Generates a small synthetic identity dataset (colored-blob "faces") for
// exercising the pipeline end to end without real face data.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "support/toy_data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic identity dataset generator"};
  std::string out = "toyset";
  toy::ToyOptions opt;
  std::size_t holdout = 0;
  app.add_option("--out", out, "output directory");
  app.add_option("--subjects", opt.subjects, "number of subjects");
  app.add_option("--images-per-subject", opt.images_per_subject, "images per subject");
  app.add_option("--size", opt.hw, "square image size");
  app.add_option("--seed", opt.seed, "generator seed");
  app.add_option("--holdout-per-subject", holdout,
                 "also write train/holdout manifests with this many images held out");
  CLI11_PARSE(app, argc, argv);

  const auto manifest = toy::write_toy_dataset(out, opt, holdout);
  std::printf("%s\n", manifest.string().c_str());
  if (holdout > 0) {
    std::printf("%s\n", (std::filesystem::path(out) / "train_manifest.tsv").string().c_str());
    std::printf("%s\n", (std::filesystem::path(out) / "holdout_manifest.tsv").string().c_str());
  }
  return 0;
}
