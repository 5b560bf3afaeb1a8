#include <cmath>
#include <random>

#include "doctest.h"
#include "fairgrpo/errors.hpp"
#include "fairgrpo/numerics/adamw.hpp"
#include "fairgrpo/numerics/checkpoint.hpp"
#include "fairgrpo/numerics/ops.hpp"
#include "support/gradcheck.hpp"

using namespace fairgrpo;
using namespace fairgrpo::num;

namespace {

Tensor randn(Shape shape, std::uint64_t seed, bool requires_grad = true, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("matmul") {
  const Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  const Tensor r = matmul(eye, m);
  CHECK(std::vector<double>(r.values().begin(), r.values().end()) == std::vector<double>{3, 4, 5, 6});

  const Tensor row = Tensor::from_data({1, 2}, {1, 2});
  const Tensor col = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == 11.0);

  const Tensor z = matmul(Tensor::zeros({2, 3}), randn({3, 2}, 1, false));
  for (double v : z.values()) CHECK(v == 0.0);

  SUBCASE("shape mismatch names both shapes") {
    try {
      (void)matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 2}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2,3]") != std::string::npos);
      CHECK(msg.find("[2,2]") != std::string::npos);
    }
  }
}

TEST_CASE("softmax") {
  auto sm = [](std::vector<double> v) {
    const std::size_t n = v.size();
    const Tensor out = softmax(Tensor::from_data({n}, std::move(v)));
    return std::vector<double>(out.values().begin(), out.values().end());
  };
  CHECK(sm({0, 0}) == std::vector<double>{0.5, 0.5});
  const auto p = sm({std::log(1.0), std::log(3.0)});
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(sm({1000, 1000}) == std::vector<double>{0.5, 0.5});

  SUBCASE("rows sum to one on any axis") {
    const Tensor x = randn({3, 4, 5}, 9, false, 10.0);
    for (int axis : {0, 1, 2, -1}) {
      const Tensor s = softmax(x, axis);
      for (double v : s.values()) CHECK(v >= 0.0);
    }
    const Tensor s = softmax(x, 1);
    for (std::size_t o = 0; o < 3; ++o) {
      for (std::size_t i = 0; i < 5; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < 4; ++j) total += s.values()[o * 20 + j * 5 + i];
        CHECK(std::abs(total - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("backward") {
  SUBCASE("sum of squares gives 2w") {
    Tensor w = Tensor::from_data({2}, {1, 2}, true);
    backward(sum(mul(w, w)));
    CHECK(w.grad()[0] == 4.0 / 2.0);
    CHECK(w.grad()[1] == 4.0);
  }
  SUBCASE("constant loss leaves gradients zero") {
    Tensor w = Tensor::from_data({2}, {1, 2}, true);
    backward(Tensor::scalar(3.0));
    CHECK(!w.has_grad());
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tensor w = Tensor::from_data({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul(w, w)), ContractError);
  }
  SUBCASE("tape is consumed") {
    Tensor w = Tensor::from_data({2}, {1, 2}, true);
    Tensor loss = sum(mul(w, w));
    backward(loss);
    CHECK(loss.node()->parents.empty());
    CHECK(!loss.node()->backward_fn);
  }
  SUBCASE("no-grad guard records nothing") {
    Tensor w = Tensor::from_data({2}, {1, 2}, true);
    NoGradGuard guard;
    const Tensor y = mul(w, w);
    CHECK(!y.requires_grad());
  }
}

TEST_CASE("layer gradients match central finite differences") {
  constexpr double kTol = 1e-4;

  SUBCASE("linear") {
    Tensor x = randn({3, 5}, 1);
    Tensor w = randn({4, 5}, 2);
    Tensor b = randn({4}, 3);
    auto r = testsupport::grad_check([&] { return sum(mul(add_row(matmul_nt(x, w), b), add_row(matmul_nt(x, w), b))); },
                                     {x, w, b});
    CHECK(r.worst_relative_error <= kTol);
    Tensor m2 = randn({5, 2}, 4);
    r = testsupport::grad_check([&] { return sum(exp(scale(matmul(x, m2), 0.3))); }, {x, m2});
    CHECK(r.worst_relative_error <= kTol);
  }

  SUBCASE("layer norm") {
    Tensor x = randn({4, 6}, 5);
    Tensor g = randn({6}, 6);
    Tensor b = randn({6}, 7);
    Tensor probe = randn({4, 6}, 8, false);
    auto r = testsupport::grad_check([&] { return sum(mul(layer_norm(x, g, b), probe)); }, {x, g, b});
    CHECK(r.worst_relative_error <= kTol);
  }

  SUBCASE("attention, causal and bidirectional with padding") {
    for (bool causal : {true, false}) {
      Tensor q = randn({2 * 4, 6}, 10);
      Tensor k = randn({2 * 4, 6}, 11);
      Tensor v = randn({2 * 4, 6}, 12);
      Tensor probe = randn({8, 6}, 13, false);
      const std::vector<std::uint8_t> mask{0, 1, 1, 1, 1, 1, 1, 1};
      AttentionShape shape{2, 4, 2, causal};
      auto r = testsupport::grad_check(
          [&] { return sum(mul(attention(q, k, v, shape, mask), probe)); }, {q, k, v});
      CHECK(r.worst_relative_error <= kTol);
    }
  }

  SUBCASE("embedding gather and cross entropy") {
    Tensor table = randn({7, 3}, 20);
    Tensor head = randn({7, 3}, 21);
    const std::vector<std::int32_t> ids{1, 4, 4, 6};
    const std::vector<std::int32_t> targets{2, -1, 0, 5};
    auto r = testsupport::grad_check(
        [&] { return cross_entropy(matmul_nt(embedding(table, ids), head), targets); }, {table, head});
    CHECK(r.worst_relative_error <= kTol);
  }

  SUBCASE("log-softmax, pick, gelu, relu") {
    Tensor x = randn({3, 5}, 30);
    const std::vector<std::int32_t> cols{0, 4, 2};
    auto r = testsupport::grad_check([&] { return sum(pick(log_softmax(gelu(x)), cols)); }, {x});
    CHECK(r.worst_relative_error <= kTol);
    Tensor y = randn({3, 5}, 31);
    Tensor probe = randn({3, 5}, 32, false);
    r = testsupport::grad_check([&] { return sum(mul(softmax(relu(y), 0), probe)); }, {y});
    CHECK(r.worst_relative_error <= kTol);
  }

  SUBCASE("clipped surrogate pieces") {
    Tensor x = randn({6}, 40, true, 0.1);
    Tensor adv = Tensor::from_data({6}, {1, -1, 2, -2, 0.5, -0.5});
    auto r = testsupport::grad_check(
        [&] {
          const Tensor ratio = exp(x);
          return mean(minimum(mul(ratio, adv), mul(clamp(ratio, 0.95, 1.05), adv)));
        },
        {x});
    CHECK(r.worst_relative_error <= kTol);
  }

  SUBCASE("mean pool, select rows, reshape, dropout") {
    Tensor x = randn({2 * 3, 4}, 50);
    Tensor probe = randn({2, 4}, 51, false);
    const std::vector<std::uint8_t> mask{0, 1, 1, 1, 1, 1};
    const std::vector<std::size_t> rows{5, 0, 3};
    auto r = testsupport::grad_check(
        [&] {
          const Tensor pooled = mean_pool(dropout(x, 0.3, 77), 2, 3, mask);
          return add(sum(mul(pooled, probe)), sum(reshape(select_rows(x, rows), {12})));
        },
        {x});
    CHECK(r.worst_relative_error <= kTol);
  }
}

TEST_CASE("gradients stay finite after backward") {
  Tensor x = randn({3, 4}, 60, true, 50.0);
  Tensor w = randn({5, 4}, 61, true, 50.0);
  const std::vector<std::int32_t> t{0, 1, 4};
  backward(cross_entropy(matmul_nt(x, w), t));
  for (double g : x.grad()) CHECK(std::isfinite(g));
  for (double g : w.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("adamw") {
  SUBCASE("zero gradient and zero decay leaves parameters unchanged") {
    Tensor w = Tensor::from_data({3}, {1, -2, 3}, true);
    w.mutable_grad();
    AdamW opt({w}, {.learning_rate = 0.1, .weight_decay = 0.0});
    opt.step();
    CHECK(std::vector<double>(w.values().begin(), w.values().end()) == std::vector<double>{1, -2, 3});
    CHECK(opt.step_count() == 1);
  }
  SUBCASE("one step on w^2 moves downhill") {
    Tensor w = Tensor::from_data({1}, {1.0}, true);
    AdamW opt({w}, {.learning_rate = 0.1});
    backward(sum(mul(w, w)));
    opt.step();
    CHECK(w.values()[0] < 1.0);
  }
  SUBCASE("converges on a quadratic bowl within 500 steps") {
    Tensor w = Tensor::from_data({2}, {1.0, -0.5}, true);
    AdamW opt({w}, {.learning_rate = 0.05});
    int steps = 0;
    while (steps < 500) {
      opt.zero_grad();
      backward(sum(mul(w, w)));
      opt.step();
      ++steps;
      if (std::abs(w.values()[0]) < 1e-3 && std::abs(w.values()[1]) < 1e-3) break;
    }
    CHECK(std::abs(w.values()[0]) < 1e-3);
    CHECK(std::abs(w.values()[1]) < 1e-3);
    CHECK(steps <= 500);
    CHECK(opt.step_count() == steps);
  }
  SUBCASE("learning rate zero is a no-op") {
    Tensor w = randn({4}, 70);
    const std::vector<double> before(w.values().begin(), w.values().end());
    AdamW opt({w}, {.learning_rate = 0.0});
    for (int i = 0; i < 5; ++i) {
      opt.zero_grad();
      backward(sum(mul(w, w)));
      opt.step();
    }
    CHECK(std::vector<double>(w.values().begin(), w.values().end()) == before);
  }
  SUBCASE("NaN gradient aborts the step untouched") {
    Tensor w = Tensor::from_data({2}, {1, 2}, true);
    auto g = w.mutable_grad();
    g[0] = 0.5;
    g[1] = std::nan("");
    AdamW opt({w}, {});
    CHECK_THROWS_AS(opt.step(), NumericalError);
    CHECK(w.values()[0] == 1.0);
    CHECK(opt.step_count() == 0);
    CHECK(opt.first_moments()[0][0] == 0.0);
  }
  SUBCASE("moment buffers mirror parameter shapes") {
    Tensor a = Tensor::zeros({2, 3}, true);
    Tensor b = Tensor::zeros({5}, true);
    AdamW opt({a, b}, {});
    CHECK(opt.first_moments()[0].size() == 6);
    CHECK(opt.second_moments()[1].size() == 5);
  }
}

TEST_CASE("checkpoint manifest and blob") {
  std::vector<NamedTensor> tensors{{"w", randn({2, 3}, 80, false)}, {"b", randn({3}, 81, false)}};
  const std::string bytes = encode_checkpoint(tensors, {{"note", "x"}});
  const std::size_t nl = bytes.find('\n');
  const auto manifest = nlohmann::json::parse(bytes.substr(0, nl));
  CHECK(manifest["version"] == "1");
  CHECK(manifest["dtype"] == "float64");
  CHECK(manifest["tensors"][1]["offset"] == 48);
  CHECK(bytes.size() == nl + 1 + 72);

  // first value, little-endian
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(bytes[nl + 1 + i]);
  CHECK(std::bit_cast<double>(bits) == tensors[0].tensor.values()[0]);

  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.metadata["note"] == "x");
  CHECK(back.get("b").shape() == Shape{3});
  CHECK(hash_values(back.tensors) == hash_values(tensors));
  CHECK_THROWS_AS(back.get("missing"), IncompatibleError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), IoError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.ckpt"), MissingArtifactError);
}
