// One gradient-check case per differentiable graph kernel (test-only).
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"

namespace sslst::testing {

struct KernelCase {
  std::string name;
  std::function<std::vector<Tensor<double>>(Rng&)> make_inputs;
  std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)> body;
};

inline std::vector<KernelCase> kernel_cases() {
  using G = Graph<double>;
  using Ids = std::vector<NodeId>;
  std::vector<KernelCase> c;
  c.push_back({"affine",
               [](Rng& r) {
                 return std::vector{random_tensor({2, 3, 4}, r), random_tensor({4, 5}, r),
                                    random_tensor({5}, r)};
               },
               [](G& g, const Ids& x) { return g.affine(x[0], x[1], x[2]); }});
  c.push_back({"matmul",
               [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; },
               [](G& g, const Ids& x) { return g.matmul(x[0], x[1]); }});
  c.push_back({"matmul_trans_b",
               [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({5, 4}, r)}; },
               [](G& g, const Ids& x) { return g.matmul(x[0], x[1], true); }});
  c.push_back({"batch_matmul",
               [](Rng& r) { return std::vector{random_tensor({2, 3, 4}, r), random_tensor({2, 4, 2}, r)}; },
               [](G& g, const Ids& x) { return g.batch_matmul(x[0], x[1]); }});
  c.push_back({"batch_matmul_trans_b",
               [](Rng& r) { return std::vector{random_tensor({2, 3, 4}, r), random_tensor({2, 5, 4}, r)}; },
               [](G& g, const Ids& x) { return g.batch_matmul(x[0], x[1], true); }});
  c.push_back({"conv1d",
               [](Rng& r) {
                 return std::vector{random_tensor({2, 11, 3}, r), random_tensor({4, 3, 2}, r),
                                    random_tensor({2}, r)};
               },
               [](G& g, const Ids& x) { return g.conv1d(x[0], x[1], x[2], 2, 3); }});
  c.push_back({"conv2d",
               [](Rng& r) {
                 return std::vector{random_tensor({2, 5, 6, 2}, r), random_tensor({3, 3, 2, 3}, r),
                                    random_tensor({3}, r)};
               },
               [](G& g, const Ids& x) { return g.conv2d(x[0], x[1], x[2], 2, 2, 1, 1); }});
  c.push_back({"tanh", [](Rng& r) { return std::vector{random_tensor({3, 4}, r)}; },
               [](G& g, const Ids& x) { return g.tanh(x[0]); }});
  c.push_back({"sigmoid", [](Rng& r) { return std::vector{random_tensor({3, 4}, r, 2.0)}; },
               [](G& g, const Ids& x) { return g.sigmoid(x[0]); }});
  c.push_back({"relu", [](Rng& r) { return std::vector{random_away_from_zero({3, 4}, r)}; },
               [](G& g, const Ids& x) { return g.relu(x[0]); }});
  c.push_back({"softmax", [](Rng& r) { return std::vector{random_tensor({3, 5}, r)}; },
               [](G& g, const Ids& x) { return g.softmax(x[0]); }});
  c.push_back({"log_softmax", [](Rng& r) { return std::vector{random_tensor({3, 5}, r)}; },
               [](G& g, const Ids& x) { return g.log_softmax(x[0]); }});
  c.push_back({"masked_softmax", [](Rng& r) { return std::vector{random_tensor({3, 5}, r)}; },
               [](G& g, const Ids& x) {
                 std::vector<double> m{1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 0, 0, 0, 0, 1};
                 return g.masked_softmax(x[0], m);
               }});
  c.push_back({"add",
               [](Rng& r) { return std::vector{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; },
               [](G& g, const Ids& x) { return g.add(x[0], x[1]); }});
  c.push_back({"mul",
               [](Rng& r) { return std::vector{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; },
               [](G& g, const Ids& x) { return g.mul(x[0], x[1]); }});
  c.push_back({"scale", [](Rng& r) { return std::vector{random_tensor({2, 3}, r)}; },
               [](G& g, const Ids& x) { return g.scale(x[0], -1.7); }});
  c.push_back({"add_broadcast_mid",
               [](Rng& r) { return std::vector{random_tensor({2, 3, 4}, r), random_tensor({2, 4}, r)}; },
               [](G& g, const Ids& x) { return g.add_broadcast(x[0], x[1], 1); }});
  c.push_back({"add_broadcast_lead",
               [](Rng& r) { return std::vector{random_tensor({2, 3, 4}, r), random_tensor({3, 4}, r)}; },
               [](G& g, const Ids& x) { return g.add_broadcast(x[0], x[1], 0); }});
  c.push_back({"mask_rows", [](Rng& r) { return std::vector{random_tensor({2, 3, 2}, r)}; },
               [](G& g, const Ids& x) { return g.mask_rows(x[0], {1, 0, 1, 1, 0, 1}); }});
  c.push_back({"concat",
               [](Rng& r) { return std::vector{random_tensor({2, 3, 2}, r), random_tensor({2, 1, 2}, r)}; },
               [](G& g, const Ids& x) { return g.concat({x[0], x[1]}, 1); }});
  c.push_back({"slice", [](Rng& r) { return std::vector{random_tensor({2, 5, 3}, r)}; },
               [](G& g, const Ids& x) { return g.slice(x[0], 1, 1, 4); }});
  c.push_back({"reshape", [](Rng& r) { return std::vector{random_tensor({2, 6}, r)}; },
               [](G& g, const Ids& x) { return g.tanh(g.reshape(x[0], {3, 4})); }});
  c.push_back({"permute0213", [](Rng& r) { return std::vector{random_tensor({2, 3, 2, 2}, r)}; },
               [](G& g, const Ids& x) { return g.permute0213(x[0]); }});
  c.push_back({"select", [](Rng& r) { return std::vector{random_tensor({2, 4, 3}, r)}; },
               [](G& g, const Ids& x) { return g.select(x[0], 2); }});
  c.push_back({"stack",
               [](Rng& r) { return std::vector{random_tensor({2, 4}, r), random_tensor({2, 4}, r)}; },
               [](G& g, const Ids& x) { return g.stack({x[0], x[1], x[0]}, 3); }});
  c.push_back({"lstm_step",
               [](Rng& r) {
                 return std::vector{random_tensor({3, 2, 8}, r), random_tensor({3, 4}, r),
                                    random_tensor({2, 8}, r, 0.5)};
               },
               [](G& g, const Ids& x) {
                 NodeId s1 = g.lstm_step(x[0], 0, x[1], x[2]);
                 return g.lstm_step(x[0], 1, s1, x[2], {1, 0, 1});
               }});
  c.push_back({"layer_norm",
               [](Rng& r) {
                 return std::vector{random_tensor({3, 5}, r), random_tensor({5}, r), random_tensor({5}, r)};
               },
               [](G& g, const Ids& x) { return g.layer_norm(x[0], x[1], x[2]); }});
  c.push_back({"embedding", [](Rng& r) { return std::vector{random_tensor({4, 3}, r)}; },
               [](G& g, const Ids& x) { return g.embedding(x[0], {2, 0, 2, 3}, {2, 2}); }});
  c.push_back({"gather_rows", [](Rng& r) { return std::vector{random_tensor({2, 3, 2}, r)}; },
               [](G& g, const Ids& x) { return g.gather_rows(x[0], {5, 1, 1}); }});
  c.push_back({"cross_entropy", [](Rng& r) { return std::vector{random_tensor({4, 5}, r)}; },
               [](G& g, const Ids& x) { return g.cross_entropy(x[0], {1, -1, 4, 0}); }});
  c.push_back({"logistic_loss", [](Rng& r) { return std::vector{random_tensor({2, 3}, r, 2.0)}; },
               [](G& g, const Ids& x) { return g.logistic_loss(x[0], {1, 0, 0, 1, 0, 0}, 6.0); }});
  c.push_back({"row_dot_gather",
               [](Rng& r) { return std::vector{random_tensor({2, 3}, r), random_tensor({4, 3}, r)}; },
               [](G& g, const Ids& x) { return g.row_dot_gather(x[0], x[1], {0, 3, 1, 2, 2, 0}, 3); }});
  c.push_back({"sum", [](Rng& r) { return std::vector{random_tensor({2, 3}, r)}; },
               [](G& g, const Ids& x) { return g.sum(g.tanh(x[0])); }});
  c.push_back({"mean", [](Rng& r) { return std::vector{random_tensor({2, 3}, r)}; },
               [](G& g, const Ids& x) { return g.mean(g.tanh(x[0])); }});
  return c;
}

}  // namespace sslst::testing
