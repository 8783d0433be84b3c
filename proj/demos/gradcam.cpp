// Grad-CAM on a random desk-scale encoder with one planted patch.
// Prints the 4x4 map and which patch it points at.

#include <cstdio>

#include "dshadow/numerics/oracle.hpp"

int main(int argc, char** argv) {
  using namespace dshadow::numerics;
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 11;
  const auto t = oracle::planted_trial(seed);
  const auto cam = grad_cam(t.enc, t.head, t.ps, 0);
  const auto drops = oracle::occlusion_drops(t.enc, t.head, t.ps, 0);

  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) std::printf(" %5.2f", cam.map(r * 4 + c));
    std::printf("\n");
  }
  std::printf("planted %d  grad-cam argmax %td  occlusion argmax %td\n", t.planted, argmax(cam.map), argmax(drops));
}
