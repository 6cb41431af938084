#include "cirnet/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cirnet::model {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

const char* smar_mode_name(att::SmarMode m) {
  switch (m) {
    case att::SmarMode::full3d: return "full3d";
    case att::SmarMode::ca_only: return "ca_only";
    case att::SmarMode::sa_only: return "sa_only";
    case att::SmarMode::serial_sa_ca: return "serial";
    case att::SmarMode::off: return "off";
  }
  return "?";
}

const char* cmwr_mode_name(fus::CmwrMode m) {
  switch (m) {
    case fus::CmwrMode::full: return "full";
    case fus::CmwrMode::m1_only: return "m1_only";
    case fus::CmwrMode::m2_only: return "m2_only";
    case fus::CmwrMode::off: return "off";
  }
  return "?";
}

const char* igf_mode_name(fus::IgfMode m) {
  switch (m) {
    case fus::IgfMode::gated: return "gated";
    case fus::IgfMode::add: return "add";
    case fus::IgfMode::cat: return "cat";
    case fus::IgfMode::off: return "off";
  }
  return "?";
}

att::SmarMode parse_smar_mode(const std::string& s) {
  if (s == "full3d" || s == "on") return att::SmarMode::full3d;
  if (s == "ca_only") return att::SmarMode::ca_only;
  if (s == "sa_only") return att::SmarMode::sa_only;
  if (s == "serial") return att::SmarMode::serial_sa_ca;
  if (s == "off") return att::SmarMode::off;
  throw ConfigError("bad smar mode '" + s + "' (full3d|ca_only|sa_only|serial|off)");
}

fus::CmwrMode parse_cmwr_mode(const std::string& s) {
  if (s == "full" || s == "on") return fus::CmwrMode::full;
  if (s == "m1_only") return fus::CmwrMode::m1_only;
  if (s == "m2_only") return fus::CmwrMode::m2_only;
  if (s == "off") return fus::CmwrMode::off;
  throw ConfigError("bad cmwr mode '" + s + "' (full|m1_only|m2_only|off)");
}

fus::IgfMode parse_igf_mode(const std::string& s) {
  if (s == "gated" || s == "on") return fus::IgfMode::gated;
  if (s == "add") return fus::IgfMode::add;
  if (s == "cat") return fus::IgfMode::cat;
  if (s == "off") return fus::IgfMode::off;
  throw ConfigError("bad igf mode '" + s + "' (gated|add|cat|off)");
}

std::string config_text(const CirNetConfig& cfg) {
  std::ostringstream os;
  os << "image_size=" << cfg.image_size << "\n";
  os << "channels=" << cfg.channels[0] << "," << cfg.channels[1] << "," << cfg.channels[2] << ","
     << cfg.channels[3] << "," << cfg.channels[4] << "\n";
  os << "decoder_width=" << cfg.decoder_width << "\n";
  os << "reduction=" << cfg.reduction << "\n";
  os << "pai=" << (cfg.pai ? "on" : "off") << "\n";
  os << "smar=" << smar_mode_name(cfg.smar) << "\n";
  os << "cmwr=" << cmwr_mode_name(cfg.cmwr) << "\n";
  os << "igf=" << igf_mode_name(cfg.igf) << "\n";
  return os.str();
}

CirNetConfig parse_config_text(const std::string& text) {
  CirNetConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + t + "'");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    try {
      if (key == "image_size") {
        cfg.image_size = std::stoll(val);
      } else if (key == "channels") {
        std::istringstream vs(val);
        std::string item;
        int i = 0;
        while (std::getline(vs, item, ',')) {
          if (i >= 5) throw ConfigError("channels wants exactly 5 entries");
          cfg.channels[i++] = std::stoll(trim(item));
        }
        if (i != 5) throw ConfigError("channels wants exactly 5 entries");
      } else if (key == "decoder_width") {
        cfg.decoder_width = std::stoll(val);
      } else if (key == "reduction") {
        cfg.reduction = std::stoll(val);
      } else if (key == "pai") {
        if (val == "on") cfg.pai = true;
        else if (val == "off") cfg.pai = false;
        else throw ConfigError("pai must be on|off, got '" + val + "'");
      } else if (key == "smar") {
        cfg.smar = parse_smar_mode(val);
      } else if (key == "cmwr") {
        cfg.cmwr = parse_cmwr_mode(val);
      } else if (key == "igf") {
        cfg.igf = parse_igf_mode(val);
      } else {
        throw ConfigError("unknown model key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad value for '" + key + "': '" + val + "'");
    } catch (const std::out_of_range&) {
      throw ConfigError("value out of range for '" + key + "': '" + val + "'");
    }
  }
  return cfg;
}

Backbone Backbone::make(int64_t in_c, const std::array<int64_t, 5>& ch) {
  Backbone bb;
  int64_t prev = in_c;
  for (int i = 0; i < 5; ++i) {
    int stride = i < 4 ? 2 : 1;
    bb.stages[i].a = nn::ConvBnRelu::make(prev, ch[i], 3, nn::Activation::relu, true, stride);
    bb.stages[i].b = nn::ConvBnRelu::make(ch[i], ch[i], 3, nn::Activation::relu);
    prev = ch[i];
  }
  return bb;
}

void Backbone::init(Rng& rng) {
  for (auto& s : stages) {
    s.a.init(rng);
    s.b.init(rng);
  }
}

BackboneVars bind(ad::Binder& b, Backbone& bb) {
  BackboneVars v;
  for (int i = 0; i < 5; ++i) {
    v.stages[i].a = ad::bind_layer(b, bb.stages[i].a);
    v.stages[i].b = ad::bind_layer(b, bb.stages[i].b);
  }
  return v;
}

std::array<ad::Var, 5> backbone_forward(ad::Tape& t, ad::Var x, const BackboneVars& v,
                                        Backbone& bb, bool training) {
  std::array<ad::Var, 5> out;
  ad::Var h = x;
  for (int i = 0; i < 5; ++i) {
    h = ad::conv_bn_act(t, h, v.stages[i].a, bb.stages[i].a, training);
    h = ad::conv_bn_act(t, h, v.stages[i].b, bb.stages[i].b, training);
    out[i] = h;
  }
  return out;
}

namespace {

void validate(const CirNetConfig& cfg) {
  if (cfg.image_size < 16 || cfg.image_size % 16 != 0) {
    throw ConfigError("image_size must be a positive multiple of 16");
  }
  for (int64_t c : cfg.channels) {
    if (c <= 0) throw ConfigError("channels must be positive");
  }
  if (cfg.decoder_width <= 0) throw ConfigError("decoder_width must be positive");
  if (cfg.reduction <= 0) throw ConfigError("reduction must be positive");
  int64_t c5 = cfg.channels[4];
  if (cfg.cmwr != fus::CmwrMode::off && c5 % 2 != 0) {
    throw ConfigError("cmwr needs an even level-5 channel count");
  }
  bool smar_ca = cfg.smar != att::SmarMode::off && cfg.smar != att::SmarMode::sa_only;
  if (smar_ca && c5 % cfg.reduction != 0) {
    throw ConfigError("smar channel attention needs channels[4] divisible by reduction");
  }
  if (cfg.igf == fus::IgfMode::gated &&
      (c5 % cfg.reduction != 0 || cfg.decoder_width % cfg.reduction != 0)) {
    throw ConfigError("igf gate needs channels[4] and decoder_width divisible by reduction");
  }
}

}  // namespace

CirNet::CirNet(CirNetConfig cfg) : cfg_(cfg) {
  validate(cfg_);
  int64_t d = cfg_.decoder_width;
  const auto& ch = cfg_.channels;

  bb_r_ = Backbone::make(3, ch);
  bb_d_ = Backbone::make(1, ch);

  if (cfg_.pai) {
    pai_ = fus::PaiUnit::make({ch[2], ch[3], ch[4]});
  } else {
    fuse5_ = nn::ConvBnRelu::make(2 * ch[4], ch[4], 3, nn::Activation::relu);
  }

  if (cfg_.smar != att::SmarMode::off) {
    smar_r_ = att::SmarUnit::make(ch[4], cfg_.reduction, cfg_.smar);
    smar_d_ = att::SmarUnit::make(ch[4], cfg_.reduction, cfg_.smar);
    smar_rgbd_ = att::SmarUnit::make(ch[4], cfg_.reduction, cfg_.smar);
  }
  if (cfg_.cmwr != fus::CmwrMode::off) {
    cmwr_ = fus::CmwrUnit::make(ch[4], cfg_.cmwr);
  }

  dec_r_[4] = nn::ConvBnRelu::make(ch[4], d, 3, nn::Activation::relu);
  dec_d_[4] = nn::ConvBnRelu::make(ch[4], d, 3, nn::Activation::relu);
  for (int i = 3; i >= 0; --i) {
    dec_r_[i] = nn::ConvBnRelu::make(d + ch[i], d, 3, nn::Activation::relu);
    dec_d_[i] = nn::ConvBnRelu::make(d + ch[i], d, 3, nn::Activation::relu);
  }

  if (cfg_.igf != fus::IgfMode::off) {
    igf_.resize(5);
    igf_[4] = fus::IgfUnit::make(d, d, ch[4], ch[4], ch[4], d, cfg_.reduction, cfg_.igf);
    for (int i = 3; i >= 0; --i) {
      igf_[i] = fus::IgfUnit::make(d, d, ch[i], ch[i], d, d, cfg_.reduction, cfg_.igf);
    }
  } else {
    rgbd_plain_.resize(5);
    rgbd_plain_[4] = nn::ConvBnRelu::make(ch[4], d, 3, nn::Activation::relu);
    for (int i = 3; i >= 0; --i) {
      rgbd_plain_[i] = nn::ConvBnRelu::make(d, d, 3, nn::Activation::relu);
    }
  }

  head_r_ = nn::ConvBnRelu::make(d, 1, 1, nn::Activation::none, false);
  head_d_ = nn::ConvBnRelu::make(d, 1, 1, nn::Activation::none, false);
  head_rgbd_ = nn::ConvBnRelu::make(d, 1, 1, nn::Activation::none, false);
}

void CirNet::init_params(uint64_t seed) {
  Rng rng(seed);
  bb_r_.init(rng);
  bb_d_.init(rng);
  if (pai_) pai_->init(rng);
  if (fuse5_) fuse5_->init(rng);
  if (smar_r_) smar_r_->init(rng);
  if (smar_d_) smar_d_->init(rng);
  if (smar_rgbd_) smar_rgbd_->init(rng);
  if (cmwr_) cmwr_->init(rng);
  for (auto& l : dec_r_) l.init(rng);
  for (auto& l : dec_d_) l.init(rng);
  for (auto& u : igf_) u.init(rng);
  for (auto& l : rgbd_plain_) l.init(rng);
  head_r_.init(rng);
  head_d_.init(rng);
  head_rgbd_.init(rng);
  head_r_.conv.kernel.fill(0.0);
  head_d_.conv.kernel.fill(0.0);
  head_rgbd_.conv.kernel.fill(0.0);
}

CirNet::Outputs CirNet::forward(ad::Tape& t, ad::Binder& b, ad::Var rgb, ad::Var depth,
                                bool training) {
  // By value: the head lambda reads rs long after the tape storage has moved.
  const Shape rs = t.value(rgb).shape();
  const Shape ds = t.value(depth).shape();
  if (rs.c != 3 || ds.c != 1 || rs.n != ds.n || rs.h != ds.h || rs.w != ds.w) {
    throw std::invalid_argument("forward wants rgb (N,3,H,W) with depth (N,1,H,W), got " +
                                rs.str() + " and " + ds.str());
  }
  if (rs.h < 16 || rs.w < 16 || rs.h % 16 != 0 || rs.w % 16 != 0) {
    throw std::invalid_argument("spatial size must be a multiple of 16, got " + rs.str());
  }

  BackboneVars vr = bind(b, bb_r_);
  BackboneVars vd = bind(b, bb_d_);
  std::array<ad::Var, 5> f_r = backbone_forward(t, rgb, vr, bb_r_, training);
  std::array<ad::Var, 5> f_d = backbone_forward(t, depth, vd, bb_d_, training);

  ad::Var rgbd5;
  if (pai_) {
    fus::PaiVars pv = bind(b, *pai_);
    std::array<ad::Var, 3> merged = fus::pai_forward(t, {f_r[2], f_r[3], f_r[4]},
                                                     {f_d[2], f_d[3], f_d[4]}, pv, *pai_,
                                                     training);
    rgbd5 = merged[2];
  } else {
    ad::ConvBnReluVars fv = ad::bind_layer(b, *fuse5_);
    rgbd5 = ad::conv_bn_act(t, ad::concat_channels(t, {f_r[4], f_d[4]}), fv, *fuse5_, training);
  }

  ad::Var r5 = f_r[4], d5 = f_d[4];
  if (smar_r_) {
    att::SmarVars sv_r = bind(b, *smar_r_);
    att::SmarVars sv_d = bind(b, *smar_d_);
    att::SmarVars sv_x = bind(b, *smar_rgbd_);
    r5 = att::smar_refine(t, r5, sv_r, *smar_r_, training);
    d5 = att::smar_refine(t, d5, sv_d, *smar_d_, training);
    rgbd5 = att::smar_refine(t, rgbd5, sv_x, *smar_rgbd_, training);
  }

  if (cmwr_) {
    fus::CmwrVars cv = bind(b, *cmwr_);
    fus::CmwrOut co = fus::cmwr_refine(t, r5, d5, rgbd5, cv, *cmwr_);
    r5 = co.f_r;
    d5 = co.f_d;
    rgbd5 = co.f_rgbd;
  }

  std::array<ad::ConvBnReluVars, 5> dvr, dvd;
  for (int i = 0; i < 5; ++i) {
    dvr[i] = ad::bind_layer(b, dec_r_[i]);
    dvd[i] = ad::bind_layer(b, dec_d_[i]);
  }
  std::array<ad::Var, 5> d_r, d_d;
  d_r[4] = ad::conv_bn_act(t, r5, dvr[4], dec_r_[4], training);
  d_d[4] = ad::conv_bn_act(t, d5, dvd[4], dec_d_[4], training);
  for (int i = 3; i >= 0; --i) {
    const Shape si = t.value(f_r[i]).shape();
    ad::Var ur = ad::upsample_bilinear(t, d_r[i + 1], si.h, si.w);
    ad::Var ud = ad::upsample_bilinear(t, d_d[i + 1], si.h, si.w);
    d_r[i] = ad::conv_bn_act(t, ad::concat_channels(t, {ur, f_r[i]}), dvr[i], dec_r_[i],
                             training);
    d_d[i] = ad::conv_bn_act(t, ad::concat_channels(t, {ud, f_d[i]}), dvd[i], dec_d_[i],
                             training);
  }

  ad::Var prev = rgbd5;
  if (!igf_.empty()) {
    for (int i = 4; i >= 0; --i) {
      fus::IgfVars iv = bind(b, igf_[i]);
      prev = fus::igf_step(t, d_r[i], d_d[i], f_r[i], f_d[i], prev, iv, igf_[i], training);
    }
  } else {
    for (int i = 4; i >= 0; --i) {
      ad::ConvBnReluVars pv = ad::bind_layer(b, rgbd_plain_[i]);
      const Shape si = t.value(f_r[i]).shape();
      prev = ad::upsample_bilinear(t, prev, si.h, si.w);
      prev = ad::conv_bn_act(t, prev, pv, rgbd_plain_[i], training);
    }
  }

  ad::ConvBnReluVars hr = ad::bind_layer(b, head_r_);
  ad::ConvBnReluVars hd = ad::bind_layer(b, head_d_);
  ad::ConvBnReluVars hx = ad::bind_layer(b, head_rgbd_);
  auto head = [&](ad::Var x, const ad::ConvBnReluVars& hv, nn::ConvBnRelu& layer) {
    ad::Var logits = ad::conv_bn_act(t, x, hv, layer, training);
    ad::Var p = ad::sigmoid(t, logits);
    return ad::upsample_bilinear(t, p, rs.h, rs.w);
  };
  Outputs out;
  out.s_r = head(d_r[0], hr, head_r_);
  out.s_d = head(d_d[0], hd, head_d_);
  out.s_rgbd = head(prev, hx, head_rgbd_);
  return out;
}

CirNet::Maps CirNet::infer(const Tensor& rgb, const Tensor& depth) {
  ad::Tape t;
  ad::Binder b(t);
  Outputs o = forward(t, b, t.leaf(rgb, false), t.leaf(depth, false), false);
  return Maps{t.value(o.s_r), t.value(o.s_d), t.value(o.s_rgbd)};
}

namespace {

void walk_layer(const std::string& name, nn::ConvBnRelu& l, bool with_state,
                const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(name + ".kernel", l.conv.kernel);
  fn(name + ".bias", l.conv.bias);
  if (l.use_bn) {
    fn(name + ".gamma", l.bn.gamma);
    fn(name + ".beta", l.bn.beta);
    if (with_state) {
      fn(name + ".running_mean", l.bn.running_mean);
      fn(name + ".running_var", l.bn.running_var);
    }
  }
}

void walk_ca(const std::string& name, att::ChannelAttention& ca,
             const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(name + ".fc1.kernel", ca.fc1.kernel);
  fn(name + ".fc1.bias", ca.fc1.bias);
  fn(name + ".fc2.kernel", ca.fc2.kernel);
  fn(name + ".fc2.bias", ca.fc2.bias);
}

void walk_smar(const std::string& name, att::SmarUnit& u, bool with_state,
               const std::function<void(const std::string&, Tensor&)>& fn) {
  if (u.sa) walk_layer(name + ".sa.conv", u.sa->conv, with_state, fn);
  if (u.ca) walk_ca(name + ".ca", *u.ca, fn);
  walk_layer(name + ".out_conv", u.out_conv, with_state, fn);
}

void walk_conv(const std::string& name, nn::Conv2d& c,
               const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(name + ".kernel", c.kernel);
  fn(name + ".bias", c.bias);
}

}  // namespace

void CirNet::visit_state(const std::function<void(const std::string&, Tensor&)>& fn) {
  const bool ws = true;
  auto walk = [&](bool with_state) {
    auto bbwalk = [&](const std::string& nm, Backbone& bb) {
      for (int i = 0; i < 5; ++i) {
        walk_layer(nm + ".stage" + std::to_string(i + 1) + ".a", bb.stages[i].a, with_state, fn);
        walk_layer(nm + ".stage" + std::to_string(i + 1) + ".b", bb.stages[i].b, with_state, fn);
      }
    };
    bbwalk("backbone_r", bb_r_);
    bbwalk("backbone_d", bb_d_);
    if (pai_) {
      for (int i = 0; i < 3; ++i) {
        walk_layer("pai.mix" + std::to_string(i + 3), pai_->mix[i], with_state, fn);
      }
      walk_layer("pai.gate.conv", pai_->gate.conv, with_state, fn);
    }
    if (fuse5_) walk_layer("fuse5", *fuse5_, with_state, fn);
    if (smar_r_) walk_smar("smar_r", *smar_r_, with_state, fn);
    if (smar_d_) walk_smar("smar_d", *smar_d_, with_state, fn);
    if (smar_rgbd_) walk_smar("smar_rgbd", *smar_rgbd_, with_state, fn);
    if (cmwr_) {
      walk_conv("cmwr.embed_r1", cmwr_->embed_r1, fn);
      walk_conv("cmwr.embed_r2", cmwr_->embed_r2, fn);
      walk_conv("cmwr.embed_d1", cmwr_->embed_d1, fn);
      walk_conv("cmwr.embed_d2", cmwr_->embed_d2, fn);
    }
    for (int i = 0; i < 5; ++i) {
      walk_layer("dec_r.level" + std::to_string(i + 1), dec_r_[i], with_state, fn);
    }
    for (int i = 0; i < 5; ++i) {
      walk_layer("dec_d.level" + std::to_string(i + 1), dec_d_[i], with_state, fn);
    }
    for (size_t i = 0; i < igf_.size(); ++i) {
      std::string nm = "igf.level" + std::to_string(i + 1);
      walk_layer(nm + ".rgb_skip_conv", igf_[i].rgb_skip_conv, with_state, fn);
      walk_layer(nm + ".depth_skip_conv", igf_[i].depth_skip_conv, with_state, fn);
      walk_layer(nm + ".h_proj", igf_[i].h_proj, with_state, fn);
      if (igf_[i].merge_conv) walk_layer(nm + ".merge_conv", *igf_[i].merge_conv, with_state, fn);
      if (igf_[i].ca) walk_ca(nm + ".ca", *igf_[i].ca, fn);
      walk_layer(nm + ".out_conv", igf_[i].out_conv, with_state, fn);
    }
    for (size_t i = 0; i < rgbd_plain_.size(); ++i) {
      walk_layer("rgbd_plain.level" + std::to_string(i + 1), rgbd_plain_[i], with_state, fn);
    }
    walk_layer("head_r", head_r_, with_state, fn);
    walk_layer("head_d", head_d_, with_state, fn);
    walk_layer("head_rgbd", head_rgbd_, with_state, fn);
  };
  walk(ws);
}

void CirNet::visit_params(const std::function<void(const std::string&, Tensor&)>& fn) {
  // Same walk with running statistics left out.
  struct Guard {
    const std::function<void(const std::string&, Tensor&)>& fn;
    void operator()(const std::string& n, Tensor& t) const {
      if (n.find("running_") == std::string::npos) fn(n, t);
    }
  };
  Guard g{fn};
  visit_state([&g](const std::string& n, Tensor& t) { g(n, t); });
}

int64_t CirNet::param_count() {
  int64_t total = 0;
  visit_params([&](const std::string&, Tensor& t) { total += t.numel(); });
  return total;
}

int64_t CirNet::expected_param_count(const CirNetConfig& cfg) {
  auto convbn = [](int64_t cin, int64_t cout, int64_t k, bool bn) {
    return cout * cin * k * k + cout + (bn ? 2 * cout : 0);
  };
  auto ca_params = [&](int64_t c, int64_t r) {
    return (c / r) * c + c / r + c * (c / r) + c;
  };
  const auto& ch = cfg.channels;
  int64_t d = cfg.decoder_width;
  int64_t total = 0;

  for (int in_c : {3, 1}) {
    int64_t prev = in_c;
    for (int i = 0; i < 5; ++i) {
      total += convbn(prev, ch[i], 3, true) + convbn(ch[i], ch[i], 3, true);
      prev = ch[i];
    }
  }

  int64_t sa_params = convbn(2, 1, 3, true);
  if (cfg.pai) {
    for (int i = 2; i < 5; ++i) total += convbn(2 * ch[i], ch[i], 3, true);
    total += sa_params;
  } else {
    total += convbn(2 * ch[4], ch[4], 3, true);
  }

  if (cfg.smar != att::SmarMode::off) {
    int64_t per = convbn(ch[4], ch[4], 3, true);
    if (cfg.smar != att::SmarMode::ca_only) per += sa_params;
    if (cfg.smar != att::SmarMode::sa_only) per += ca_params(ch[4], cfg.reduction);
    total += 3 * per;
  }

  if (cfg.cmwr != fus::CmwrMode::off) {
    total += 4 * (ch[4] * (ch[4] / 2) + ch[4] / 2);
  }

  int64_t dec = convbn(ch[4], d, 3, true);
  for (int i = 0; i < 4; ++i) dec += convbn(d + ch[i], d, 3, true);
  total += 2 * dec;

  if (cfg.igf != fus::IgfMode::off) {
    for (int lvl = 5; lvl >= 1; --lvl) {
      int64_t skip = ch[lvl - 1];
      int64_t c = lvl == 5 ? ch[4] : d;
      total += 2 * convbn(d + skip, c, 3, true);  // the two skip mixers
      total += convbn(2 * c, c, 1, true);         // h_proj
      if (cfg.igf == fus::IgfMode::gated || cfg.igf == fus::IgfMode::cat) {
        total += convbn(3 * c, c, 1, true);
      }
      if (cfg.igf == fus::IgfMode::gated) total += ca_params(c, cfg.reduction);
      total += convbn(c, d, 3, true);  // out_conv
    }
  } else {
    total += convbn(ch[4], d, 3, true) + 4 * convbn(d, d, 3, true);
  }

  total += 3 * convbn(d, 1, 1, false);
  return total;
}

ad::Var loss(ad::Tape& t, const CirNet::Outputs& out, const Tensor& gt,
             std::array<double, 3>* parts) {
  ad::Var lr = ad::bce_loss(t, out.s_r, gt);
  ad::Var ld = ad::bce_loss(t, out.s_d, gt);
  ad::Var lx = ad::bce_loss(t, out.s_rgbd, gt);
  if (parts) *parts = {t.value(lr)[0], t.value(ld)[0], t.value(lx)[0]};
  return ad::add(t, ad::add(t, lr, ld), lx);
}

double bce(const Tensor& s, const Tensor& g) {
  ad::Tape t;
  return t.value(ad::bce_loss(t, t.leaf(s, false), g))[0];
}

TrainStepResult train_step(CirNet& net, const Batch& batch, AdamState& opt, double lr) {
  // Zero lr turns the step into a pure evaluation: nothing may drift, not
  // even batchnorm running statistics.
  bool learning = lr > 0.0;
  ad::Tape tape;
  ad::Binder binder(tape);
  CirNet::Outputs out = net.forward(tape, binder, tape.leaf(batch.rgb, false),
                                    tape.leaf(batch.depth, false), learning);
  std::array<double, 3> parts{};
  ad::Var total = loss(tape, out, batch.gt, &parts);
  double lv = tape.value(total)[0];
  if (!std::isfinite(lv)) {
    throw NonFiniteLossError("loss is not finite: " + std::to_string(lv));
  }
  if (!learning) {
    return TrainStepResult{parts[0] + parts[1] + parts[2], parts[0], parts[1], parts[2]};
  }
  tape.backward(total);

  size_t np = binder.entries.size();
  if (opt.m.size() != np) {
    opt.m.assign(np, {});
    opt.v.assign(np, {});
  }
  opt.t += 1;
  double b1t = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  double b2t = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  for (size_t i = 0; i < np; ++i) {
    auto [var, param] = binder.entries[i];
    int64_t n = param->numel();
    if (opt.m[i].empty()) {
      opt.m[i].assign(n, 0.0);
      opt.v[i].assign(n, 0.0);
    }
    const Tensor* g = tape.has_grad(var) ? &tape.grad(var) : nullptr;
    for (int64_t j = 0; j < n; ++j) {
      double gj = g ? (*g)[j] : 0.0;
      if (!std::isfinite(gj)) {
        throw NonFiniteLossError("gradient is not finite");
      }
      opt.m[i][j] = opt.beta1 * opt.m[i][j] + (1.0 - opt.beta1) * gj;
      opt.v[i][j] = opt.beta2 * opt.v[i][j] + (1.0 - opt.beta2) * gj * gj;
      double mh = opt.m[i][j] / b1t;
      double vh = opt.v[i][j] / b2t;
      (*param)[j] -= lr * mh / (std::sqrt(vh) + opt.eps);
    }
  }
  return TrainStepResult{parts[0] + parts[1] + parts[2], parts[0], parts[1], parts[2]};
}

namespace {

constexpr char kMagic[4] = {'C', 'I', 'R', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, CirNet& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  std::string cfg = config_text(net.config());
  write_u32(os, static_cast<uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  net.visit_state([&](const std::string&, Tensor& t) {
    write_u64(os, static_cast<uint64_t>(t.numel()));
    // Doubles as raw little-endian IEEE754; this build targets LE hosts.
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * 8));
  });
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

CirNet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a checkpoint file (bad magic): " + path);
  }
  uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  uint32_t cfg_len = read_u32(is);
  if (!is || cfg_len > (1u << 20)) throw IoError("corrupt checkpoint header: " + path);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), cfg_len);
  if (!is) throw IoError("truncated checkpoint config block: " + path);

  CirNet net{parse_config_text(cfg_text)};
  bool ok = true;
  net.visit_state([&](const std::string& name, Tensor& t) {
    if (!ok) return;
    uint64_t count = read_u64(is);
    if (!is || count != static_cast<uint64_t>(t.numel())) {
      ok = false;
      return;
    }
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(count * 8));
    if (!is) ok = false;
    (void)name;
  });
  if (!ok) throw IoError("checkpoint payload does not match its config: " + path);
  return net;
}

}  // namespace cirnet::model
