#include "mst/gradcheck_suite.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>

#include "mst/grad_check.hpp"
#include "mst/loss.hpp"
#include "mst/ops.hpp"

namespace mst {

namespace {

using T = double;
using Tn = Tensor<double>;

struct Harness {
  RngState rng;

  Tn random(const Shape& shape, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(shape_numel(shape));
    for (T& x : v) x = lo + (hi - lo) * rng.uniform();
    return Tn::leaf(shape, std::move(v));
  }
  Tn constant(const Shape& shape) {
    std::vector<T> v(shape_numel(shape));
    for (T& x : v) x = -1.0 + 2.0 * rng.uniform();
    return Tn(shape, std::move(v));
  }
  // Random linear functional of the op output, so no output direction is
  // annihilated (sum(softmax) would have zero gradient).
  // The weights are drawn once per variant so the loss stays a pure function.
  Tn project(const Tn& y) {
    if (y.numel() == 1) return reshape(y, {});
    if (!projection || projection->shape() != y.shape()) projection = constant(y.shape());
    return sum(mul(y, *projection));
  }
  std::optional<Tn> projection;
};

using Case = std::function<GradCheckResult(Harness&, std::size_t variant)>;

GradCheckResult check(std::vector<Parameter<T>> params, const std::function<Tn()>& f, std::size_t max_per_param = 64) {
  GradCheckOptions opt;
  opt.max_per_param = max_per_param;
  return grad_check(f, params, opt);
}

// Softmax is invariant to adding the same score to a whole row, so the key
// projection bias and the shared scene-score bias have exactly zero
// gradients; a ratio of rounding noise says nothing there. Both the analytic
// gradient and the central differences must vanish instead.
struct ZeroGradResult {
  double max_analytic = 0.0;
  double max_numeric = 0.0;
  std::size_t coordinates = 0;
  bool passed() const { return max_analytic <= 1e-12 && max_numeric <= 1e-8; }
};

ZeroGradResult zero_grad_check(const std::function<Tn()>& f, std::vector<Parameter<T>> params,
                               std::size_t max_per_param = 64) {
  ZeroGradResult r;
  for (auto& p : params) p.value.zero_grad();
  f().backward();
  const double h = 1e-5;
  for (auto& p : params) {
    const std::vector<T> g(p.value.grad().begin(), p.value.grad().end());
    auto values = p.value.mutable_data();
    for (std::size_t i = 0; i < values.size() && i < max_per_param; ++i) {
      const T saved = values[i];
      values[i] = saved + h;
      const double up = f().item();
      values[i] = saved - h;
      const double down = f().item();
      values[i] = saved;
      r.max_analytic = std::max(r.max_analytic, g.empty() ? 0.0 : std::abs(g[i]));
      r.max_numeric = std::max(r.max_numeric, std::abs((up - down) / (2 * h)));
      ++r.coordinates;
    }
    p.value.zero_grad();
  }
  return r;
}

bool is_shift_invariant(const std::string& name) { return name.ends_with(".bk") || name == "classifier.bias"; }

std::vector<Parameter<T>> named(std::initializer_list<Tn> ts) {
  std::vector<Parameter<T>> out;
  std::size_t i = 0;
  for (const auto& t : ts) out.push_back({"in" + std::to_string(i++), t});
  return out;
}

template <typename Fn>
Case binary_case(Fn op, bool positive_rhs) {
  return [op, positive_rhs](Harness& h, std::size_t v) {
    const Shape shapes[3][2] = {{{5}, {5}}, {{3, 4}, {4}}, {{2, 3, 4}, {}}};
    Tn a = h.random(shapes[v][0]);
    Tn b = positive_rhs ? h.random(shapes[v][1], 0.5, 2.0) : h.random(shapes[v][1]);
    Tn w = h.constant(shapes[v][0]);
    return check(named({a, b}), [&] { return sum(mul(op(a, b), w)); });
  };
}

template <typename Fn>
Case unary_case(Fn op, double lo, double hi) {
  return [op, lo, hi](Harness& h, std::size_t v) {
    const Shape shapes[3] = {{7}, {3, 5}, {2, 2, 3}};
    Tn a = h.random(shapes[v], lo, hi);
    Tn w = h.constant(shapes[v]);
    return check(named({a}), [&] { return sum(mul(op(a), w)); });
  };
}

AttentionParams<T> random_attention(Harness& h, std::size_t c) {
  return {h.random({c, c}, -0.5, 0.5), h.random({c}), h.random({c, c}, -0.5, 0.5), h.random({c}),
          h.random({c, c}, -0.5, 0.5), h.random({c}), h.random({c, c}, -0.5, 0.5), h.random({c})};
}

std::vector<std::pair<std::string, Case>> op_cases() {
  std::vector<std::pair<std::string, Case>> cases;
  cases.emplace_back("add", binary_case([](const Tn& a, const Tn& b) { return add(a, b); }, false));
  cases.emplace_back("sub", binary_case([](const Tn& a, const Tn& b) { return sub(a, b); }, false));
  cases.emplace_back("mul", binary_case([](const Tn& a, const Tn& b) { return mul(a, b); }, false));
  cases.emplace_back("div", binary_case([](const Tn& a, const Tn& b) { return div(a, b); }, true));
  cases.emplace_back("scale", unary_case([](const Tn& a) { return scale(a, 1.7); }, -1.0, 1.0));
  cases.emplace_back("exp", unary_case([](const Tn& a) { return exp(a); }, -1.0, 1.0));
  cases.emplace_back("sqrt", unary_case([](const Tn& a) { return sqrt(a); }, 0.5, 2.0));
  cases.emplace_back("gelu", unary_case([](const Tn& a) { return gelu(a); }, -3.0, 3.0));
  cases.emplace_back("matmul", [](Harness& h, std::size_t v) {
    const std::size_t dims[3][3] = {{1, 2, 1}, {3, 4, 5}, {6, 2, 3}};
    Tn a = h.random({dims[v][0], dims[v][1]});
    Tn b = h.random({dims[v][1], dims[v][2]});
    Tn w = h.constant({dims[v][0], dims[v][2]});
    return check(named({a, b}), [&] { return sum(mul(matmul(a, b), w)); });
  });
  cases.emplace_back("linear", [](Harness& h, std::size_t v) {
    const std::size_t dims[3][3] = {{1, 3, 2}, {4, 5, 3}, {2, 6, 6}};
    Tn x = h.random({dims[v][0], dims[v][1]});
    Tn w = h.random({dims[v][1], dims[v][2]});
    Tn b = h.random({dims[v][2]});
    return check(named({x, w, b}), [&] { return h.project(linear(x, w, b)); });
  });
  cases.emplace_back("transpose", [](Harness& h, std::size_t v) {
    const Shape shapes[3] = {{1, 4}, {3, 2}, {5, 5}};
    Tn a = h.random(shapes[v]);
    Tn w = h.constant({shapes[v][1], shapes[v][0]});
    return check(named({a}), [&] { return sum(mul(transpose(a), w)); });
  });
  cases.emplace_back("reshape", [](Harness& h, std::size_t v) {
    const Shape from[3] = {{6}, {2, 6}, {2, 3, 4}};
    const Shape to[3] = {{2, 3}, {3, 4}, {4, 6}};
    Tn a = h.random(from[v]);
    Tn w = h.constant(to[v]);
    return check(named({a}), [&] { return sum(mul(reshape(a, to[v]), w)); });
  });
  cases.emplace_back("concat", [](Harness& h, std::size_t v) {
    const std::size_t axis = v == 0 ? 0 : v;
    Shape s1 = v == 0 ? Shape{3} : v == 1 ? Shape{2, 3} : Shape{2, 2, 3};
    Shape s2 = s1;
    s2[axis] += 1;
    Tn a = h.random(s1), b = h.random(s2);
    Tn w = h.constant(concat<T>({a, b}, axis).shape());
    return check(named({a, b}), [&] { return sum(mul(concat<T>({a, b}, axis), w)); });
  });
  cases.emplace_back("slice", [](Harness& h, std::size_t v) {
    const Shape shapes[3] = {{6}, {4, 5}, {3, 4, 2}};
    const std::size_t axis[3] = {0, 1, 1};
    Tn a = h.random(shapes[v]);
    auto f = [&] { return slice(a, axis[v], 1, 2); };
    Tn w = h.constant(f().shape());
    return check(named({a}), [&] { return sum(mul(f(), w)); });
  });
  for (const bool average : {false, true}) {
    cases.emplace_back(average ? "mean" : "sum", [average](Harness& h, std::size_t v) {
      const Shape shapes[3] = {{7}, {3, 5}, {2, 2, 3}};
      Tn a = h.random(shapes[v]);
      // Squared so the gradient depends on the value.
      return check(named({a}), [&] {
        const Tn r = average ? mean(a) : sum(a);
        return mul(r, r);
      });
    });
  }
  cases.emplace_back("l2_norm", [](Harness& h, std::size_t v) {
    const Shape shapes[3] = {{3}, {4, 3}, {2, 2, 5}};
    Tn a = h.random(shapes[v]);
    auto f = [&] { return l2_norm(a); };
    return check(named({a}), [&] { return h.project(f()); });
  });
  for (const bool log : {false, true}) {
    cases.emplace_back(log ? "log_softmax" : "softmax", [log](Harness& h, std::size_t v) {
      const Shape shapes[3] = {{5}, {3, 4}, {2, 3, 4}};
      const std::size_t axis[3] = {0, 1, 1};
      Tn a = h.random(shapes[v], -2.0, 2.0);
      Tn w = h.constant(shapes[v]);
      return check(named({a}), [&] { return sum(mul(log ? log_softmax(a, axis[v]) : softmax(a, axis[v]), w)); });
    });
  }
  cases.emplace_back("layer_norm", [](Harness& h, std::size_t v) {
    const Shape shapes[3] = {{4}, {3, 5}, {2, 2, 6}};
    Tn x = h.random(shapes[v], -2.0, 2.0);
    Tn g = h.random({shapes[v].back()}, 0.5, 1.5);
    Tn b = h.random({shapes[v].back()});
    Tn w = h.constant(shapes[v]);
    return check(named({x, g, b}), [&] { return sum(mul(layer_norm(x, g, b), w)); });
  });
  cases.emplace_back("dropout", [](Harness& h, std::size_t v) {
    const Shape shapes[3] = {{16}, {4, 8}, {2, 3, 5}};
    Tn a = h.random(shapes[v]);
    Tn w = h.constant(shapes[v]);
    const RngState base{17 + v, 0};
    return check(named({a}), [&] {
      RngState r = base;  // identical mask on every evaluation
      return sum(mul(dropout(a, 0.3, r, true), w));
    });
  });
  cases.emplace_back("conv2d", [](Harness& h, std::size_t v) {
    struct Geo {
      std::size_t hw, cin, cout, k, stride, pad;
    };
    const Geo g[3] = {{5, 2, 3, 3, 1, 1}, {6, 3, 2, 3, 2, 1}, {4, 4, 5, 1, 1, 0}};
    Tn x = h.random({g[v].hw, g[v].hw, g[v].cin});
    Tn w = h.random({g[v].k, g[v].k, g[v].cin, g[v].cout});
    Tn b = h.random({g[v].cout});
    return check(named({x, w, b}), [&] { return h.project(conv2d(x, w, b, g[v].stride, g[v].pad)); });
  });
  cases.emplace_back("max_pool2d", [](Harness& h, std::size_t v) {
    const std::size_t hw[3] = {4, 5, 6};
    const std::size_t k[3] = {2, 3, 2};
    const std::size_t s[3] = {2, 1, 2};
    Tn x = h.random({hw[v], hw[v], 2});
    return check(named({x}), [&] { return h.project(max_pool2d(x, k[v], s[v])); });
  });
  cases.emplace_back("multi_head_attention", [](Harness& h, std::size_t v) {
    const std::size_t lq[3] = {1, 3, 4}, lk[3] = {1, 5, 4}, c[3] = {4, 6, 8}, heads[3] = {1, 2, 4};
    Tn q = h.random({lq[v], c[v]}), k = h.random({lk[v], c[v]}), val = h.random({lk[v], c[v]});
    AttentionParams<T> p = random_attention(h, c[v]);
    std::vector<Parameter<T>> params{{"q", q},   {"k", k},   {"v", val},  {"wq", p.wq}, {"bq", p.bq},
                                     {"wk", p.wk}, {"wv", p.wv}, {"bv", p.bv}, {"wo", p.wo}, {"bo", p.bo}};
    return check(params, [&] { return h.project(multi_head_attention(q, k, val, heads[v], p).out); });
  });
  cases.emplace_back("positional_encoding", [](Harness& h, std::size_t v) {
    const std::size_t ha[3] = {1, 2, 3}, wa[3] = {2, 2, 4}, half[3] = {1, 2, 3};
    Tn eu = h.random({wa[v], half[v]}), ev = h.random({ha[v], half[v]});
    return check(named({eu, ev}), [&] { return h.project(positional_encoding(ha[v], wa[v], eu, ev)); });
  });
  cases.emplace_back("diamond_graph", [](Harness& h, std::size_t v) {
    // Shared subexpression reached along several paths.
    const Shape shapes[3] = {{3}, {2, 4}, {3, 3}};
    Tn p = h.random(shapes[v]);
    return check(named({p}), [&] {
      const Tn e = exp(scale(p, 0.5));
      return h.project(add(mul(e, e), mul(e, p)));
    });
  });
  cases.emplace_back("position_loss", [](Harness& h, std::size_t) {
    Tn x = h.random({3}, -2.0, 2.0);
    Tn x0 = h.constant({3});
    return check(named({x}), [&] { return position_loss(x, x0); });
  });
  cases.emplace_back("orientation_loss", [](Harness& h, std::size_t) {
    Tn q = h.random({4}, 0.2, 1.0);
    const Tn q0({4}, {0.5, 0.5, -0.5, 0.5});
    return check(named({q}), [&] { return orientation_loss(q, q0); });
  });
  cases.emplace_back("pose_loss", [](Harness& h, std::size_t) {
    Tn lx = h.random({}, 0.1, 2.0), lq = h.random({}, 0.1, 2.0);
    LossParams<T> p{h.random({}, -1.0, 1.0), h.random({}, -3.5, -2.5)};
    return check(named({lx, lq, p.s_x, p.s_q}), [&] { return pose_loss(lx, lq, p); });
  });
  cases.emplace_back("nll_scene", [](Harness& h, std::size_t v) {
    const std::size_t n = 2 + v;
    Tn logits = h.random({n}, -2.0, 2.0);
    return check(named({logits}), [&] { return nll_scene(log_softmax(logits, 0), v % n); });
  });
  return cases;
}

}  // namespace

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.c_d = 16;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.head_hidden = 32;
  c.n_scenes = 3;
  c.input_hw = 32;
  c.backbone_channels = {4, 8, 8, 12};
  return c;
}

std::vector<OpCheckReport> run_gradcheck_suite(std::uint64_t seed, std::ostream* report) {
  std::vector<OpCheckReport> out;
  auto emit = [&](const OpCheckReport& r) {
    if (report) {
      char line[256];
      std::snprintf(line, sizeof line, "%-22s %13.3e %6zu %-6s %s\n", r.op.c_str(), r.max_rel_error, r.coordinates,
                    r.passed ? "PASS" : "FAIL", r.worst.c_str());
      *report << line;
    }
    out.push_back(r);
  };
  if (report) *report << "op                     max_rel_error coords status worst\n";

  Harness h{RngState{seed, 0}};
  for (const auto& [name, run] : op_cases()) {
    OpCheckReport r{name, 0.0, 0, true, {}};
    const std::size_t variants = name.find("_loss") != std::string::npos ? 1 : 3;
    for (std::size_t v = 0; v < variants; ++v) {
      h.projection.reset();
      const GradCheckResult g = run(h, v);
      if (r.worst.empty() || g.max_rel_error > r.max_rel_error) r.worst = g.worst;
      r.max_rel_error = std::max(r.max_rel_error, g.max_rel_error);
      r.coordinates += g.coordinates;
    }
    r.passed = r.max_rel_error < kGradCheckTolerance;
    emit(r);
  }

  {
    ZeroGradResult worst;
    for (std::size_t v = 0; v < 3; ++v) {
      const std::size_t lq = 2 + v, lk = 3 + v, c = 4 * (v + 1), heads = v + 1;
      Tn q = h.random({lq, c}), k = h.random({lk, c}), val = h.random({lk, c});
      AttentionParams<T> p = random_attention(h, c);
      h.projection.reset();
      const ZeroGradResult z =
          zero_grad_check([&] { return h.project(multi_head_attention(q, k, val, heads, p).out); }, {{"bk", p.bk}});
      worst.max_analytic = std::max(worst.max_analytic, z.max_analytic);
      worst.max_numeric = std::max(worst.max_numeric, z.max_numeric);
      worst.coordinates += z.coordinates;
    }
    emit({"shift_invariant(mha)", std::max(worst.max_analytic, worst.max_numeric), worst.coordinates, worst.passed(),
          "zero gradient"});
  }

  // End to end: mean multi-scene loss of a small model over two samples,
  // training mode with a replayed dropout stream.
  const ModelConfig cfg = gradcheck_model_config();
  Model<T> model(cfg, seed);
  // Evaluated away from the initialization, where attention is nearly
  // uniform and most gradients are too small to resolve numerically.
  for (auto& p : model.parameters()) {
    for (T& v : p.value.mutable_data()) v += 0.3 * (h.rng.uniform() - 0.5);
  }
  LossParams<T> loss_params = LossParams<T>::make(0.0, 0.0);
  struct Sample {
    Tn image;
    std::size_t scene;
    Pose pose;
  };
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < 2; ++i) {
    Tn img = h.constant({cfg.input_hw, cfg.input_hw, 3});
    Pose pose;
    pose.position = {h.rng.uniform() * 2 - 1, h.rng.uniform() * 2 - 1, h.rng.uniform() * 2 - 1};
    pose.orientation = canonical(Quaternion{h.rng.normal(), h.rng.normal(), h.rng.normal(), h.rng.normal()});
    samples.push_back({img, i % cfg.n_scenes, pose});
  }
  const RngState dropout_base{seed ^ 0xd00dULL, 0};
  auto loss = [&] {
    RngState r = dropout_base;
    const ForwardContext ctx{true, &r};
    std::vector<Tn> terms;
    for (const auto& s : samples) {
      terms.push_back(reshape(multiscene_loss(model.forward(s.image, s.scene, ctx), s.pose, s.scene, loss_params), {1}));
    }
    return mean(concat(terms, 0));
  };
  std::vector<Parameter<T>> params, invariant;
  for (const auto& p : model.parameters()) (is_shift_invariant(p.name) ? invariant : params).push_back(p);
  for (auto& p : loss_params.parameters()) params.push_back(p);
  // A loss of a few units is resolved to about 1e-10 in the differences, so
  // sub-1e-6 gradients are compared on that absolute scale.
  GradCheckOptions opt;
  opt.max_per_param = 8;
  opt.sample_seed = seed;
  opt.floor = 1e-6;
  opt.relative_floor = true;
  const GradCheckResult g = grad_check(loss, params, opt);
  emit({"multiscene_loss(model)", g.max_rel_error, g.coordinates, g.max_rel_error < kGradCheckTolerance, g.worst});

  const ZeroGradResult z = zero_grad_check(loss, invariant, 4);
  emit({"shift_invariant(model)", std::max(z.max_analytic, z.max_numeric), z.coordinates, z.passed(), "zero gradient"});
  return out;
}

}  // namespace mst
