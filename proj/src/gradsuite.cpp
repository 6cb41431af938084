#include "cirnet/gradsuite.hpp"

#include <cmath>
#include <functional>
#include <memory>

#include "cirnet/attention.hpp"
#include "cirnet/autodiff.hpp"
#include "cirnet/fusion.hpp"
#include "cirnet/model.hpp"
#include "cirnet/nn_ops.hpp"
#include "cirnet/tensor.hpp"

namespace cirnet::gradsuite {

namespace {

constexpr double kStep = 1e-5;
// Reject fixtures whose smallest relu margin or argmax gap sits close enough
// to the probe step that a finite difference could straddle the kink.
constexpr double kMarginFloor = 2e-4;
constexpr int kAttempts = 8;

// Builds the checked function's graph from the input variable. Everything
// else the graph needs (weights, partner tensors) comes from the fixture
// seed, so repeated calls are pure.
using Body = std::function<ad::Var(ad::Tape&, ad::Var, uint64_t)>;

struct Built {
  Tensor x0;
  std::function<double(const Tensor&)> value;
  std::function<Tensor(const Tensor&)> grad;
  double relu_margin = 0.0;
  double chmax_gap = 0.0;
};

uint64_t mix_seed(uint64_t a, uint64_t b) {
  Rng r(a ^ (b * 0x9E3779B97F4A7C15ull));
  return r.next_u64();
}

Built build_body_case(Shape in_shape, double lo, double hi, const Body& body, uint64_t fseed) {
  Rng xr(mix_seed(fseed, 0x11));
  Built out;
  out.x0 = Tensor::uniform(in_shape, xr, lo, hi);

  ad::Tape probe;
  ad::Var in = probe.leaf(out.x0, true);
  ad::Var y = body(probe, in, fseed);
  Tensor w = Tensor::uniform(probe.value(y).shape(), xr, -1.0, 1.0);
  out.relu_margin = probe.min_relu_margin();
  out.chmax_gap = probe.min_channelmax_gap();

  out.value = [body, w, fseed](const Tensor& x) {
    ad::Tape t;
    ad::Var xv = t.leaf(x, false);
    ad::Var s = ad::sum(t, ad::mul(t, body(t, xv, fseed), t.leaf(w, false)));
    return t.value(s)[0];
  };
  out.grad = [body, w, fseed](const Tensor& x) {
    ad::Tape t;
    ad::Var xv = t.leaf(x, true);
    ad::Var s = ad::sum(t, ad::mul(t, body(t, xv, fseed), t.leaf(w, false)));
    t.backward(s);
    return t.has_grad(xv) ? t.grad(xv) : Tensor(x.shape());
  };
  return out;
}

struct Case {
  std::string name;
  std::function<Built(uint64_t)> build;
  int64_t max_coords = 0;  // 0 checks every coordinate
};

struct Suite {
  std::vector<Case> cases;

  void body_case(std::string name, Shape in_shape, double lo, double hi, Body body,
                 int64_t max_coords = 0) {
    cases.push_back(Case{std::move(name),
                         [=, body = std::move(body)](uint64_t fseed) {
                           return build_body_case(in_shape, lo, hi, body, fseed);
                         },
                         max_coords});
  }
};

Tensor fixture_tensor(uint64_t fseed, uint64_t salt, Shape s, double lo, double hi) {
  Rng r(mix_seed(fseed, salt));
  return Tensor::uniform(s, r, lo, hi);
}

// ---- full-network cases ------------------------------------------------

model::CirNetConfig tiny_config() {
  model::CirNetConfig cfg;
  cfg.image_size = 32;
  cfg.channels = {2, 2, 3, 3, 4};
  cfg.decoder_width = 4;
  cfg.reduction = 2;
  return cfg;
}

struct NetFixture {
  Tensor rgb, depth, gt;
  uint64_t init_seed;
  uint64_t head_seed;
};

NetFixture net_fixture(uint64_t fseed) {
  NetFixture f;
  f.rgb = fixture_tensor(fseed, 0x21, Shape{1, 3, 32, 32}, 0.05, 0.95);
  f.depth = fixture_tensor(fseed, 0x22, Shape{1, 1, 32, 32}, 0.05, 0.95);
  Rng gr(mix_seed(fseed, 0x23));
  f.gt = Tensor(Shape{1, 1, 32, 32});
  for (int64_t i = 0; i < f.gt.numel(); ++i) f.gt[i] = gr.bernoulli(0.4) ? 1.0 : 0.0;
  f.init_seed = mix_seed(fseed, 0x24);
  f.head_seed = mix_seed(fseed, 0x25);
  return f;
}

// The stock init zeroes the prediction heads, which also zeroes every
// gradient upstream of them. Scattering the heads makes the parameter cases
// probe real, nonzero derivatives.
void scatter_heads(model::CirNet& net, uint64_t seed) {
  Rng r(seed);
  net.visit_params([&](const std::string& n, Tensor& t) {
    if (n.rfind("head_", 0) == 0) {
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = r.uniform(-0.3, 0.3);
    }
  });
}

Built build_net_input_case(uint64_t fseed) {
  NetFixture f = net_fixture(fseed);
  model::CirNetConfig cfg = tiny_config();

  Built out;
  out.x0 = f.rgb;
  auto run = [f, cfg](const Tensor& x, Tensor* grad_out) {
    model::CirNet net(cfg);
    net.init_params(f.init_seed);
    scatter_heads(net, f.head_seed);
    ad::Tape t;
    ad::Binder b(t);
    ad::Var rv = t.leaf(x, grad_out != nullptr);
    model::CirNet::Outputs o = net.forward(t, b, rv, t.leaf(f.depth, false), true);
    ad::Var l = model::loss(t, o, f.gt);
    if (grad_out) {
      t.backward(l);
      *grad_out = t.has_grad(rv) ? t.grad(rv) : Tensor(x.shape());
    }
    return t.value(l)[0];
  };
  out.value = [run](const Tensor& x) { return run(x, nullptr); };
  out.grad = [run](const Tensor& x) {
    Tensor g;
    run(x, &g);
    return g;
  };

  // Margin probe for the retry loop.
  {
    model::CirNet net(cfg);
    net.init_params(f.init_seed);
    scatter_heads(net, f.head_seed);
    ad::Tape t;
    ad::Binder b(t);
    model::CirNet::Outputs o =
        net.forward(t, b, t.leaf(f.rgb, false), t.leaf(f.depth, false), true);
    (void)model::loss(t, o, f.gt);
    out.relu_margin = t.min_relu_margin();
    out.chmax_gap = t.min_channelmax_gap();
  }
  return out;
}

Built build_net_param_case(const std::string& param_name, uint64_t fseed) {
  NetFixture f = net_fixture(fseed);
  model::CirNetConfig cfg = tiny_config();

  // Snapshot the chosen parameter for x0.
  Tensor x0;
  {
    model::CirNet net(cfg);
    net.init_params(f.init_seed);
    scatter_heads(net, f.head_seed);
    bool found = false;
    net.visit_params([&](const std::string& n, Tensor& t) {
      if (n == param_name) {
        x0 = t;
        found = true;
      }
    });
    if (!found) throw std::invalid_argument("no such parameter: " + param_name);
  }

  auto run = [f, cfg, param_name](const Tensor& x, Tensor* grad_out) {
    model::CirNet net(cfg);
    net.init_params(f.init_seed);
    scatter_heads(net, f.head_seed);
    Tensor* target = nullptr;
    net.visit_params([&](const std::string& n, Tensor& t) {
      if (n == param_name) target = &t;
    });
    *target = x;
    ad::Tape t;
    ad::Binder b(t);
    model::CirNet::Outputs o =
        net.forward(t, b, t.leaf(f.rgb, false), t.leaf(f.depth, false), true);
    ad::Var l = model::loss(t, o, f.gt);
    if (grad_out) {
      t.backward(l);
      *grad_out = Tensor(x.shape());
      for (const auto& [var, param] : b.entries) {
        if (param == target && t.has_grad(var)) *grad_out = t.grad(var);
      }
    }
    return t.value(l)[0];
  };

  Built out;
  out.x0 = x0;
  out.value = [run](const Tensor& x) { return run(x, nullptr); };
  out.grad = [run](const Tensor& x) {
    Tensor g;
    run(x, &g);
    return g;
  };
  {
    model::CirNet net(cfg);
    net.init_params(f.init_seed);
    scatter_heads(net, f.head_seed);
    ad::Tape t;
    ad::Binder b(t);
    model::CirNet::Outputs o =
        net.forward(t, b, t.leaf(f.rgb, false), t.leaf(f.depth, false), true);
    (void)model::loss(t, o, f.gt);
    out.relu_margin = t.min_relu_margin();
    out.chmax_gap = t.min_channelmax_gap();
  }
  return out;
}

// ---- suite definition ----------------------------------------------------

Suite make_suite() {
  Suite s;
  const Shape feat{1, 4, 6, 6};

  // Elementwise, with and without broadcasting.
  s.body_case("add", feat, -1, 1, [](ad::Tape& t, ad::Var x, uint64_t fs) {
    return ad::add(t, x, t.leaf(fixture_tensor(fs, 1, Shape{1, 4, 6, 6}, -1, 1), false));
  });
  s.body_case("add_broadcast", feat, -1, 1, [](ad::Tape& t, ad::Var x, uint64_t fs) {
    return ad::add(t, x, t.leaf(fixture_tensor(fs, 2, Shape{1, 4, 1, 1}, -1, 1), false));
  });
  s.body_case("sub", feat, -1, 1, [](ad::Tape& t, ad::Var x, uint64_t fs) {
    return ad::sub(t, x, t.leaf(fixture_tensor(fs, 3, Shape{1, 4, 6, 6}, -1, 1), false));
  });
  s.body_case("mul", feat, -1, 1, [](ad::Tape& t, ad::Var x, uint64_t fs) {
    return ad::mul(t, x, t.leaf(fixture_tensor(fs, 4, Shape{1, 4, 6, 6}, -1, 1), false));
  });
  s.body_case("mul_broadcast", feat, -1, 1, [](ad::Tape& t, ad::Var x, uint64_t fs) {
    return ad::mul(t, x, t.leaf(fixture_tensor(fs, 5, Shape{1, 1, 6, 6}, -1, 1), false));
  });
  s.body_case("mul_self", feat, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::mul(t, x, x); });

  s.body_case("concat_channels", Shape{1, 3, 5, 5}, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t fs) {
                ad::Var other = t.leaf(fixture_tensor(fs, 6, Shape{1, 2, 5, 5}, -1, 1), false);
                return ad::concat_channels(t, {other, x, x});
              });
  s.body_case("reshape", Shape{1, 4, 3, 2}, -1, 1, [](ad::Tape& t, ad::Var x, uint64_t) {
    return ad::reshape(t, x, Shape{1, 2, 2, 6});
  });

  // Matmul, both operands, all transpose modes.
  auto matcase = [&](const char* name, bool ta, bool tb, bool wrt_b) {
    Shape a_s = ta ? Shape{1, 1, 5, 4} : Shape{1, 1, 4, 5};
    Shape b_s = tb ? Shape{1, 1, 3, 5} : Shape{1, 1, 5, 3};
    Shape in = wrt_b ? b_s : a_s;
    s.body_case(name, in, -1, 1, [=](ad::Tape& t, ad::Var x, uint64_t fs) {
      ad::Var other = t.leaf(fixture_tensor(fs, 7, wrt_b ? a_s : b_s, -1, 1), false);
      ad::Var a = wrt_b ? other : x;
      ad::Var b = wrt_b ? x : other;
      return ad::matmul(t, a, b, ta, tb);
    });
  };
  matcase("matmul_nn", false, false, false);
  matcase("matmul_tn", true, false, false);
  matcase("matmul_nt", false, true, false);
  matcase("matmul_tt", true, true, false);
  matcase("matmul_nn_wrt_b", false, false, true);
  matcase("matmul_tt_wrt_b", true, true, true);
  s.body_case("matmul_batched", Shape{2, 1, 3, 4}, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t fs) {
                ad::Var b = t.leaf(fixture_tensor(fs, 8, Shape{2, 1, 4, 3}, -1, 1), false);
                return ad::matmul(t, x, b);
              });

  // Convolution wrt input, kernel and bias, strides 1 and 2.
  s.body_case("conv2d_s1", Shape{1, 3, 6, 6}, -1, 1, [](ad::Tape& t, ad::Var x, uint64_t fs) {
    ad::Var k = t.leaf(fixture_tensor(fs, 9, Shape{4, 3, 3, 3}, -0.5, 0.5), false);
    ad::Var b = t.leaf(fixture_tensor(fs, 10, Shape{1, 4, 1, 1}, -0.5, 0.5), false);
    return ad::conv2d(t, x, k, b, 1, 1);
  });
  s.body_case("conv2d_s2", Shape{1, 3, 6, 6}, -1, 1, [](ad::Tape& t, ad::Var x, uint64_t fs) {
    ad::Var k = t.leaf(fixture_tensor(fs, 11, Shape{4, 3, 3, 3}, -0.5, 0.5), false);
    ad::Var b = t.leaf(fixture_tensor(fs, 12, Shape{1, 4, 1, 1}, -0.5, 0.5), false);
    return ad::conv2d(t, x, k, b, 2, 1);
  });
  s.body_case("conv2d_1x1", Shape{1, 4, 5, 5}, -1, 1, [](ad::Tape& t, ad::Var x, uint64_t fs) {
    ad::Var k = t.leaf(fixture_tensor(fs, 13, Shape{2, 4, 1, 1}, -0.5, 0.5), false);
    ad::Var b = t.leaf(fixture_tensor(fs, 14, Shape{1, 2, 1, 1}, -0.5, 0.5), false);
    return ad::conv2d(t, x, k, b, 1, 0);
  });
  s.body_case("conv2d_wrt_kernel", Shape{4, 3, 3, 3}, -0.5, 0.5,
              [](ad::Tape& t, ad::Var x, uint64_t fs) {
                ad::Var in = t.leaf(fixture_tensor(fs, 15, Shape{2, 3, 5, 5}, -1, 1), false);
                ad::Var b = t.leaf(fixture_tensor(fs, 16, Shape{1, 4, 1, 1}, -0.5, 0.5), false);
                return ad::conv2d(t, in, x, b, 1, 1);
              });
  s.body_case("conv2d_s2_wrt_kernel", Shape{4, 3, 3, 3}, -0.5, 0.5,
              [](ad::Tape& t, ad::Var x, uint64_t fs) {
                ad::Var in = t.leaf(fixture_tensor(fs, 17, Shape{1, 3, 6, 6}, -1, 1), false);
                ad::Var b = t.leaf(fixture_tensor(fs, 18, Shape{1, 4, 1, 1}, -0.5, 0.5), false);
                return ad::conv2d(t, in, x, b, 2, 1);
              });
  s.body_case("conv2d_wrt_bias", Shape{1, 4, 1, 1}, -0.5, 0.5,
              [](ad::Tape& t, ad::Var x, uint64_t fs) {
                ad::Var in = t.leaf(fixture_tensor(fs, 19, Shape{1, 3, 5, 5}, -1, 1), false);
                ad::Var k = t.leaf(fixture_tensor(fs, 20, Shape{4, 3, 3, 3}, -0.5, 0.5), false);
                return ad::conv2d(t, in, k, x, 1, 1);
              });

  // Batchnorm in both modes, wrt input and the affine pair.
  auto bn_body = [](bool training, int wrt) {
    return [training, wrt](ad::Tape& t, ad::Var x, uint64_t fs) {
      auto bn = std::make_shared<nn::BatchNorm>(nn::BatchNorm::make(4));
      Tensor gamma = fixture_tensor(fs, 30, Shape{1, 4, 1, 1}, 0.5, 1.5);
      Tensor beta = fixture_tensor(fs, 31, Shape{1, 4, 1, 1}, -0.3, 0.3);
      Tensor input = fixture_tensor(fs, 32, Shape{2, 4, 3, 3}, -1, 1);
      ad::Var in = wrt == 0 ? x : t.leaf(input, false);
      ad::Var g = wrt == 1 ? x : t.leaf(gamma, false);
      ad::Var b = wrt == 2 ? x : t.leaf(beta, false);
      return ad::batchnorm(t, in, g, b, *bn, training);
    };
  };
  s.body_case("batchnorm_train", Shape{2, 4, 3, 3}, -1, 1, bn_body(true, 0));
  s.body_case("batchnorm_eval", Shape{2, 4, 3, 3}, -1, 1, bn_body(false, 0));
  s.body_case("batchnorm_wrt_gamma", Shape{1, 4, 1, 1}, 0.5, 1.5, bn_body(true, 1));
  s.body_case("batchnorm_wrt_beta", Shape{1, 4, 1, 1}, -0.3, 0.3, bn_body(true, 2));

  s.body_case("relu", feat, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::relu(t, x); });
  s.body_case("sigmoid", feat, -3, 3,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::sigmoid(t, x); });
  s.body_case("softmax_lastdim", Shape{1, 2, 3, 5}, -2, 2,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::softmax_lastdim(t, x); });
  s.body_case("channel_mean", feat, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::channel_mean(t, x); });
  s.body_case("channel_max", feat, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::channel_max(t, x); });
  s.body_case("global_avg_pool", feat, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::global_avg_pool(t, x); });
  s.body_case("upsample_bilinear", Shape{1, 2, 4, 6}, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::upsample_bilinear(t, x, 8, 12); });
  s.body_case("upsample_bilinear_odd", Shape{1, 2, 3, 3}, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::upsample_bilinear(t, x, 7, 5); });
  s.body_case("avgpool_down", Shape{1, 2, 8, 8}, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::avgpool_down(t, x, 4, 4); });
  s.body_case("sum", feat, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t) { return ad::sum(t, x); });
  s.body_case("bce_loss", Shape{1, 1, 5, 5}, 0.1, 0.9, [](ad::Tape& t, ad::Var x, uint64_t fs) {
    Rng gr(mix_seed(fs, 40));
    Tensor gt(Shape{1, 1, 5, 5});
    for (int64_t i = 0; i < gt.numel(); ++i) gt[i] = gr.bernoulli(0.5) ? 1.0 : 0.0;
    return ad::bce_loss(t, x, gt);
  });

  // Composite blocks.
  auto cbr_body = [](bool training) {
    return [training](ad::Tape& t, ad::Var x, uint64_t fs) {
      auto layer = std::make_shared<nn::ConvBnRelu>(
          nn::ConvBnRelu::make(3, 4, 3, nn::Activation::relu, true));
      Rng r(mix_seed(fs, 41));
      layer->init(r);
      ad::Binder b(t);
      ad::ConvBnReluVars v = ad::bind_layer(b, *layer);
      return ad::conv_bn_act(t, x, v, *layer, training);
    };
  };
  s.body_case("conv_bn_relu_train", Shape{2, 3, 6, 6}, -1, 1, cbr_body(true));
  s.body_case("conv_bn_relu_eval", Shape{2, 3, 6, 6}, -1, 1, cbr_body(false));

  s.body_case("spatial_attention", Shape{1, 4, 8, 8}, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t fs) {
                auto u = std::make_shared<att::SpatialAttention>(att::SpatialAttention::make());
                Rng r(mix_seed(fs, 42));
                u->init(r);
                ad::Binder b(t);
                att::SpatialAttentionVars v = att::bind(b, *u);
                return att::spatial_attention(t, x, v, *u, true);
              });
  s.body_case("channel_attention", Shape{1, 4, 5, 5}, -1, 1,
              [](ad::Tape& t, ad::Var x, uint64_t fs) {
                auto u = std::make_shared<att::ChannelAttention>(att::ChannelAttention::make(4, 2));
                Rng r(mix_seed(fs, 43));
                u->init(r);
                ad::Binder b(t);
                att::ChannelAttentionVars v = att::bind(b, *u);
                return att::channel_attention(t, x, v, *u);
              });
  s.body_case("attention_cube_wrt_ca", Shape{1, 3, 1, 1}, 0.1, 0.9,
              [](ad::Tape& t, ad::Var x, uint64_t fs) {
                ad::Var sa = t.leaf(fixture_tensor(fs, 44, Shape{1, 1, 4, 4}, 0.1, 0.9), false);
                return att::attention_cube(t, x, sa);
              });
  s.body_case("attention_cube_wrt_sa", Shape{1, 1, 4, 4}, 0.1, 0.9,
              [](ad::Tape& t, ad::Var x, uint64_t fs) {
                ad::Var ca = t.leaf(fixture_tensor(fs, 45, Shape{1, 3, 1, 1}, 0.1, 0.9), false);
                return att::attention_cube(t, ca, x);
              });

  auto smar_body = [](att::SmarMode mode) {
    return [mode](ad::Tape& t, ad::Var x, uint64_t fs) {
      auto u = std::make_shared<att::SmarUnit>(att::SmarUnit::make(4, 2, mode));
      Rng r(mix_seed(fs, 46));
      u->init(r);
      ad::Binder b(t);
      att::SmarVars v = att::bind(b, *u);
      return att::smar_refine(t, x, v, *u, true);
    };
  };
  s.body_case("smar_full3d", Shape{1, 4, 6, 6}, -1, 1, smar_body(att::SmarMode::full3d));
  s.body_case("smar_ca_only", Shape{1, 4, 6, 6}, -1, 1, smar_body(att::SmarMode::ca_only));
  s.body_case("smar_sa_only", Shape{1, 4, 6, 6}, -1, 1, smar_body(att::SmarMode::sa_only));
  s.body_case("smar_serial", Shape{1, 4, 6, 6}, -1, 1, smar_body(att::SmarMode::serial_sa_ca));

  s.body_case("pai", Shape{1, 2, 8, 8}, -1, 1, [](ad::Tape& t, ad::Var x, uint64_t fs) {
    auto u = std::make_shared<fus::PaiUnit>(fus::PaiUnit::make({2, 3, 4}));
    Rng r(mix_seed(fs, 47));
    u->init(r);
    ad::Binder b(t);
    fus::PaiVars v = fus::bind(b, *u);
    std::array<ad::Var, 3> f_r{
        x, t.leaf(fixture_tensor(fs, 48, Shape{1, 3, 4, 4}, -1, 1), false),
        t.leaf(fixture_tensor(fs, 49, Shape{1, 4, 2, 2}, -1, 1), false)};
    std::array<ad::Var, 3> f_d{
        t.leaf(fixture_tensor(fs, 50, Shape{1, 2, 8, 8}, -1, 1), false),
        t.leaf(fixture_tensor(fs, 51, Shape{1, 3, 4, 4}, -1, 1), false),
        t.leaf(fixture_tensor(fs, 52, Shape{1, 4, 2, 2}, -1, 1), false)};
    std::array<ad::Var, 3> out = fus::pai_forward(t, f_r, f_d, v, *u, true);
    // Bring all three levels to one size so they concatenate into one output.
    return ad::concat_channels(
        t, {ad::avgpool_down(t, out[0], 2, 2), ad::avgpool_down(t, out[1], 2, 2), out[2]});
  });

  auto cmwr_body = [](fus::CmwrMode mode, int wrt) {
    return [mode, wrt](ad::Tape& t, ad::Var x, uint64_t fs) {
      auto u = std::make_shared<fus::CmwrUnit>(fus::CmwrUnit::make(4, mode));
      Rng r(mix_seed(fs, 53));
      u->init(r);
      ad::Binder b(t);
      fus::CmwrVars v = fus::bind(b, *u);
      ad::Var f[3];
      for (int i = 0; i < 3; ++i) {
        f[i] = i == wrt ? x : t.leaf(fixture_tensor(fs, 54 + i, Shape{1, 4, 3, 3}, -1, 1), false);
      }
      fus::CmwrOut o = fus::cmwr_refine(t, f[0], f[1], f[2], v, *u);
      return ad::concat_channels(t, {o.f_r, o.f_d, o.f_rgbd});
    };
  };
  s.body_case("cmwr_full", Shape{1, 4, 3, 3}, -1, 1, cmwr_body(fus::CmwrMode::full, 0));
  s.body_case("cmwr_full_wrt_rgbd", Shape{1, 4, 3, 3}, -1, 1, cmwr_body(fus::CmwrMode::full, 2));
  s.body_case("cmwr_m1_only", Shape{1, 4, 3, 3}, -1, 1, cmwr_body(fus::CmwrMode::m1_only, 0));
  s.body_case("cmwr_m2_only", Shape{1, 4, 3, 3}, -1, 1, cmwr_body(fus::CmwrMode::m2_only, 1));

  auto igf_body = [](fus::IgfMode mode, bool wrt_prev) {
    return [mode, wrt_prev](ad::Tape& t, ad::Var x, uint64_t fs) {
      auto u = std::make_shared<fus::IgfUnit>(fus::IgfUnit::make(3, 3, 2, 2, 4, 3, 2, mode));
      Rng r(mix_seed(fs, 60));
      u->init(r);
      ad::Binder b(t);
      fus::IgfVars v = fus::bind(b, *u);
      Tensor prev_t = fixture_tensor(fs, 61, Shape{1, 4, 2, 2}, -1, 1);
      Tensor dec_t = fixture_tensor(fs, 62, Shape{1, 3, 4, 4}, -1, 1);
      ad::Var prev = wrt_prev ? x : t.leaf(prev_t, false);
      ad::Var f_r_dec = wrt_prev ? t.leaf(dec_t, false) : x;
      ad::Var f_d_dec = t.leaf(fixture_tensor(fs, 63, Shape{1, 3, 4, 4}, -1, 1), false);
      ad::Var f_r_skip = t.leaf(fixture_tensor(fs, 64, Shape{1, 2, 4, 4}, -1, 1), false);
      ad::Var f_d_skip = t.leaf(fixture_tensor(fs, 65, Shape{1, 2, 4, 4}, -1, 1), false);
      return fus::igf_step(t, f_r_dec, f_d_dec, f_r_skip, f_d_skip, prev, v, *u, true);
    };
  };
  s.body_case("igf_gated_wrt_prev", Shape{1, 4, 2, 2}, -1, 1, igf_body(fus::IgfMode::gated, true));
  s.body_case("igf_gated_wrt_dec", Shape{1, 3, 4, 4}, -1, 1, igf_body(fus::IgfMode::gated, false));
  s.body_case("igf_add", Shape{1, 4, 2, 2}, -1, 1, igf_body(fus::IgfMode::add, true));
  s.body_case("igf_cat", Shape{1, 4, 2, 2}, -1, 1, igf_body(fus::IgfMode::cat, true));

  // Whole network, input and a spread of parameters.
  s.cases.push_back(Case{"full_net_wrt_input", build_net_input_case, 25});
  s.cases.push_back(Case{"full_net_wrt_backbone_kernel",
                         [](uint64_t fs) {
                           return build_net_param_case("backbone_r.stage1.a.kernel", fs);
                         },
                         25});
  s.cases.push_back(Case{"full_net_wrt_mid_gamma",
                         [](uint64_t fs) {
                           return build_net_param_case("smar_rgbd.out_conv.gamma", fs);
                         },
                         25});
  s.cases.push_back(Case{"full_net_wrt_head_kernel",
                         [](uint64_t fs) { return build_net_param_case("head_rgbd.kernel", fs); },
                         25});
  return s;
}

}  // namespace

std::vector<CaseResult> run_all(uint64_t base_seed, int seeds, double tol) {
  Suite suite = make_suite();
  std::vector<CaseResult> results;
  results.reserve(suite.cases.size());
  for (const Case& c : suite.cases) {
    CaseResult res;
    res.name = c.name;
    res.pass = true;
    for (int sd = 0; sd < seeds; ++sd) {
      uint64_t seed = mix_seed(base_seed, static_cast<uint64_t>(sd) + 1);
      Built built;
      for (int attempt = 0; attempt < kAttempts; ++attempt) {
        built = c.build(mix_seed(seed, static_cast<uint64_t>(attempt) + 0x77));
        if (built.relu_margin > kMarginFloor && built.chmax_gap > kMarginFloor) break;
      }
      ad::GradCheckResult gc = ad::grad_check(built.value, built.grad, built.x0, kStep, tol,
                                              nullptr, c.max_coords, seed);
      res.max_rel_err = std::max(res.max_rel_err, gc.max_rel_err);
      res.checked += gc.checked;
      res.pass = res.pass && gc.pass;
    }
    results.push_back(std::move(res));
  }
  return results;
}

bool all_pass(const std::vector<CaseResult>& results) {
  for (const CaseResult& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace cirnet::gradsuite
