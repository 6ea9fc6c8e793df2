#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "handmotion/error.hpp"
#include "handmotion/fixture.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic pipeline corpus"};
  std::string out;
  std::uint64_t seed = 7;
  app.add_option("--out", out)->required();
  app.add_option("--seed", seed);
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);
  try {
    hm::fixture::write_corpus(out, seed);
  } catch (const std::exception& e) {
    std::cerr << e.what() << std::endl;
    return 3;
  }
  return 0;
}
