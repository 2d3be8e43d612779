// Regenerates the bundled demo truth images.
//   make_demo_cards <out_dir> [width height]
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "csileak/iq_core.hpp"
#include "csileak/test_cards.hpp"

int main(int argc, char** argv) {
  if (argc != 2 && argc != 4) {
    std::cerr << "usage: make_demo_cards <out_dir> [width height]\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  const int w = argc == 4 ? std::atoi(argv[2]) : 64;
  const int h = argc == 4 ? std::atoi(argv[3]) : 64;
  std::filesystem::create_directories(dir);
  csileak::write_image(csileak::cards::print_card(w, h), dir / "print.pgm");
  csileak::write_image(csileak::cards::vein_card(w, h), dir / "vein.pgm");
  return 0;
}
