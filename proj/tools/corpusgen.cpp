// Emits the deterministic synthetic corpus used by the experiment recipes.
#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "inat/data_io.hpp"
#include "inat/textgen.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic corpus generator"};
  std::string out_path;
  uint64_t seed = 1;
  uint64_t bytes = 1024 * 1024;
  app.add_option("--out", out_path)->required();
  app.add_option("--seed", seed);
  app.add_option("--bytes", bytes);
  CLI11_PARSE(app, argc, argv);
  try {
    inat::write_file(out_path, inat::generate_text(seed, bytes));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
