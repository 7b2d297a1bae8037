#pragma once

#include "uhn/archspec.hpp"

// Published reference targets used by the count reports and tests.

namespace uhn::ref {

inline ModelSpec mlp_mnist() { return make_mlp(784, {128, 128}, 10); }

inline ModelSpec cnn8_mnist() { return make_cnn({1, 2, 2, 2}, {16, 16, 32, 64}, 1, 10); }

inline ModelSpec cnn_cifar(int layers_per_stage) {
  return make_cnn({1, layers_per_stage, layers_per_stage, layers_per_stage}, {16, 16, 32, 64}, 3, 10);
}
inline ModelSpec cnn20_cifar() { return cnn_cifar(6); }

inline ModelSpec gcn_cora() { return make_gcn(1433, 64, 7); }
inline ModelSpec gcn_citeseer() { return make_gcn(3703, 64, 6); }
inline ModelSpec gcn_pubmed() { return make_gcn(500, 64, 3); }

inline ModelSpec gat_cora() { return make_gat(1433, 8, 8, 1, 7); }
inline ModelSpec gat_citeseer() { return make_gat(3703, 8, 8, 1, 6); }
inline ModelSpec gat_pubmed() { return make_gat(500, 8, 8, 8, 3); }

inline ModelSpec transformer2l_agnews() {
  return make_transformer(5000, 64, 128, 2, {2, 2}, 2, 4, 0.2);
}
inline ModelSpec transformer1l_imdb() {
  return make_transformer(5000, 64, 512, 1, {2}, 2, 2, 0.4);
}

inline ModelSpec kan_g5() { return make_kan({2, 5, 1}, 5, 3); }
inline ModelSpec kan_g5_vec4() { return make_kan({2, 5, 4}, 5, 3); }
inline ModelSpec kan_g10() { return make_kan({2, 5, 1}, 10, 3); }

}  // namespace uhn::ref
