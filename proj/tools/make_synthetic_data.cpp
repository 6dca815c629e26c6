// Writes a small procedural corpus: content images (smooth shapes on
// gradients), one high-frequency style image, and a small training config
// (desk_config.json) whose paths are relative to the output directory.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "stsc/image.hpp"
#include "stsc/rng.hpp"
#include "stsc/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a procedural content/style corpus"};
  std::string out = "data";
  std::size_t count = 8;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  app.add_option("--out", out, "output directory (content/ and style.png are created inside)");
  app.add_option("--count", count, "number of content images")->check(CLI::PositiveNumber);
  app.add_option("--size", size, "side length in pixels")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "random seed");
  CLI11_PARSE(app, argc, argv);

  try {
    const std::filesystem::path root(out);
    std::filesystem::create_directories(root / "content");
    stsc::Xorshift64Star rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "content_%03zu.png", i);
      stsc::save_image(stsc::synthetic_content<double>(size, rng), root / "content" / name);
    }
    stsc::save_image(stsc::synthetic_style<double>(size), root / "style.png");
    const nlohmann::json config = {{"image_size", size},
                                   {"batch_size", 2},
                                   {"epochs", 2},
                                   {"learning_rate", 1e-3},
                                   {"seed", seed},
                                   {"content_dir", "content"},
                                   {"style_image_path", "style.png"},
                                   {"checkpoint_out", "model.stsc"},
                                   {"log_out", "train_log.jsonl"},
                                   {"architecture", {{"widths", {8, 16, 32}}, {"residual_blocks", 5}}}};
    std::ofstream(root / "desk_config.json") << config.dump(2) << "\n";
    std::cout << "wrote " << count << " content images, style.png and desk_config.json to " << root.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
