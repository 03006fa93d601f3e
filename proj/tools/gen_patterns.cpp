// Regenerates the frozen cSWAP measurement patterns.
#include "sqem/mb.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

int main(int argc, char** argv) {
  CLI::App app{"Write the cSWAP measurement patterns"};
  std::string dir = SQEM_DATA_DIR;
  app.add_option("--dir", dir, "output directory");
  CLI11_PARSE(app, argc, argv);
  for (auto v : {sqem::CswapVariant::A, sqem::CswapVariant::B}) {
    auto p = sqem::generate_cswap_pattern(v);
    std::string path = fmt::format("{}/{}.pattern", dir, p.name);
    sqem::save_pattern(p, path);
    fmt::print("{}: {} vertices, {} edges\n", path, p.graph.n, p.graph.edges.size());
  }
  return 0;
}
