// Writes the synthetic 6-class texture dataset used by the tests and the
// quick-start in the README.
#include <iostream>

#include <CLI11.hpp>

#include "gdn/fixture.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic colored-texture dataset", "make_fixture"};
  std::string out;
  gdn::FixtureConfig cfg;
  app.add_option("--out", out, "Dataset root to create")->required();
  app.add_option("--per-class", cfg.images_per_class, "Images per class");
  app.add_option("--side", cfg.side, "Image side in pixels");
  app.add_option("--seed", cfg.seed, "Generator seed");
  app.add_option("--duplicates", cfg.duplicates, "Byte-identical copies added to class 0");
  CLI11_PARSE(app, argc, argv);
  const auto n = gdn::write_texture_fixture(out, cfg);
  std::cout << "wrote " << n << " images to " << out << '\n';
  return 0;
}
