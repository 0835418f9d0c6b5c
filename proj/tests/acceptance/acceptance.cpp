// Acceptance suite: one PASS/FAIL line per primary criterion.
//
//   jojo_acceptance [--only NAME]... [--fixtures DIR] [--list]
//
// Exit status is the number of failed criteria.

#include "jojo/corpus.hpp"
#include "jojo/image.hpp"
#include "jojo/log.hpp"
#include "jojo/metrics.hpp"
#include "jojo/models.hpp"
#include "jojo/stylizer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

using namespace jojo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Fixtures {
  fs::path dir;
  std::optional<BaseModel> base;
  std::optional<EncoderParams> encoder;

  const BaseModel& model() {
    if (!base) base = BaseModel::load(dir / "base.ckpt");
    return *base;
  }
  const EncoderParams& enc() {
    if (!encoder) encoder = load_encoder(dir / "encoder.ckpt");
    return *encoder;
  }
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

double pooled_correlation(const torch::Tensor& a, const torch::Tensor& b) {
  const auto x = (a - a.mean(0, true)).to(torch::kFloat64), y = (b - b.mean(0, true)).to(torch::kFloat64);
  return ((x * y).sum() / torch::sqrt(x.square().sum() * y.square().sum())).item<double>();
}

// Rotation about the gray axis; keeps the per-pixel channel mean.
torch::Tensor rotate_hue(const torch::Tensor& x, double degrees) {
  const double a = degrees * M_PI / 180.0, c = std::cos(a), s = std::sin(a), k = (1 - c) / 3.0;
  const double r = std::sqrt(1.0 / 3.0) * s;
  const auto m = torch::tensor({c + k, k - r, k + r, k + r, c + k, k - r, k - r, k + r, c + k}, options_for(torch::kFloat64))
                     .view({3, 3})
                     .to(x.scalar_type());
  return torch::einsum("ij,bjhw->bihw", {m, x});
}

torch::Tensor faces(int n, int res, std::uint64_t seed, torch::Dtype dtype) {
  return face_corpus(n, res, seed).to(dtype);
}

double trailing_mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(to), 0.0) /
         static_cast<double>(to - from);
}

// ---------------------------------------------------------------- criteria

Outcome style_mixing_identities(Fixtures& fx) {
  const auto& g = fx.model().generator;
  const int L = g.config.num_layers();
  auto rng = make_rng(101);
  const auto ref = style_from_w(map_latent(sample_z(1, g.config, rng, g.dtype()), g), g);
  bool ones_equal = true;
  for (auto space : {MixSpace::S, MixSpace::W}) {
    const auto mixed = mix_styles(ref, {LayerMask::constant(L, 1), space, 16}, g, rng);
    for (int l = 0; l < L; ++l) ones_equal &= torch::equal(mixed.layers[l], ref.layers[l].expand_as(mixed.layers[l]));
  }
  const auto refs = style_from_w(map_latent(sample_z(1000, g.config, rng, g.dtype()), g), g);
  std::vector<StyleCode> outs;
  for (int i = 0; i < 1000; ++i) outs.push_back(mix_styles(refs.select(i), {LayerMask::constant(L, 0), MixSpace::S, 1}, g, rng));
  const auto mixed = StyleCode::cat(outs);
  double worst = 0;
  for (int l = 0; l < L; ++l) worst = std::max(worst, std::abs(pooled_correlation(refs.layers[l], mixed.layers[l])));
  return {ones_equal && worst < 0.05,
          std::string("all-ones bit-equal=") + (ones_equal ? "yes" : "no") + ", all-zeros max |corr|=" + fmt(worst)};
}

Outcome interpolation_endpoints(Fixtures& fx) {
  const auto& m = fx.model();
  TrainConfig cfg;
  cfg.iterations = 20;
  cfg.seed = 3;
  const auto mapper = finetune(m.generator, m.critic, fx.enc(), {style_reference("comic", 64, 5)}, cfg);
  const auto u = faces(4, 64, 900, m.generator.dtype());
  const auto s = style_from_w(invert(u, fx.enc()).w, m.generator);
  const double d0 = max_abs_diff(stylize(u, m.generator, mapper, fx.enc(), 0.0), reconstruct(u, m.generator, fx.enc()));
  torch::Tensor mapped;
  {
    torch::NoGradGuard no_grad;
    mapped = synthesize(s, mapper.params).image;
  }
  const double d1 = max_abs_diff(stylize(u, m.generator, mapper, fx.enc(), 1.0), mapped);
  const double mid = max_abs_diff(stylize(u, m.generator, mapper, fx.enc(), 0.5), mapped);
  return {d0 <= 1e-6 && d1 <= 1e-6 && mid > 1e-6,
          "alpha=0 max|diff|=" + fmt(d0) + ", alpha=1 max|diff|=" + fmt(d1) + ", alpha=0.5 differs by " + fmt(mid)};
}

double brute_force_perceptual(const torch::Tensor& x, const torch::Tensor& y, const DiscriminatorParams& critic,
                              const std::vector<int>& taps) {
  double total = 0;
  for (std::int64_t b = 0; b < x.size(0); ++b) {
    double per_image = 0;
    for (int t : taps) {
      const auto fx = critic_features(x.slice(0, b, b + 1), critic, {t}).layers[0].to(torch::kFloat64).contiguous();
      const auto fy = critic_features(y.slice(0, b, b + 1), critic, {t}).layers[0].to(torch::kFloat64).contiguous();
      const double* px = fx.data_ptr<double>();
      const double* py = fy.data_ptr<double>();
      double sum = 0;
      for (std::int64_t i = 0; i < fx.numel(); ++i) sum += std::abs(px[i] - py[i]);
      per_image += sum / static_cast<double>(fx.numel());
    }
    total += per_image;
  }
  return total / static_cast<double>(x.size(0));
}

Outcome perceptual_axioms(Fixtures& fx) {
  torch::NoGradGuard no_grad;
  const auto& d = fx.model().critic;
  const auto taps = d.config.default_taps();
  const auto x = faces(2, 64, 31, d.dtype()), y = faces(2, 64, 32, d.dtype());
  const double xy = perceptual_loss(x, y, d, taps).item<double>();
  const double yx = perceptual_loss(y, x, d, taps).item<double>();
  const double xx = perceptual_loss(x, x, d, taps).item<double>();
  const double oracle = brute_force_perceptual(x, y, d, taps);
  double min_random = 1e300;
  for (int seed = 0; seed < 10; ++seed) {
    auto rng = make_rng(seed);
    const auto a = torch::rand({2, 3, 64, 64}, rng, options_for(d.dtype())) * 2 - 1;
    const auto b = torch::rand({2, 3, 64, 64}, rng, options_for(d.dtype())) * 2 - 1;
    min_random = std::min(min_random, perceptual_loss(a, b, d, taps).item<double>());
  }
  const double rel_oracle = std::abs(xy - oracle) / oracle;
  const double rel_sym = std::abs(xy - yx) / xy;
  const bool pass = xy > 0 && min_random >= 0 && xx == 0.0 && rel_sym <= 1e-6 && rel_oracle <= 1e-6;
  return {pass, "L(x,y)=" + fmt(xy) + ", symmetry rel " + fmt(rel_sym) + ", L(x,x)=" + fmt(xx) +
                    ", oracle rel " + fmt(rel_oracle) + ", min over random pairs " + fmt(min_random)};
}

Outcome gradient_check(Fixtures&) {
  auto g = init_generator(GeneratorConfig::tiny(), 17, torch::kFloat64);
  auto rng = make_rng(18);
  for (auto& [name, t] : g.tensors)
    if (name.ends_with(".bias") || name.ends_with("noise_strength"))
      t = t + 0.1 * torch::randn(t.sizes(), rng, options_for(torch::kFloat64));
  const auto z = sample_z(2, g.config, rng, torch::kFloat64);
  const auto probe = torch::randn({2, 3, 8, 8}, rng, options_for(torch::kFloat64));
  auto objective = [&](const GeneratorParams& p) {
    return (synthesize(style_from_w(map_latent(z, p), p), p).image * probe).sum();
  };

  auto params = g.clone(true);
  const auto names = params.trainable_names();
  std::vector<torch::Tensor> inputs;
  for (const auto& n : names) inputs.push_back(params.tensors.at(n));
  const auto grads = torch::autograd::grad({objective(params)}, inputs);

  std::mt19937_64 pick(19);
  constexpr int kSamples = 40;
  constexpr double h = 1e-5;
  double worst = 0;
  int checked = 0;
  for (int i = 0; i < kSamples; ++i) {
    const auto ti = pick() % names.size();
    const auto& name = names[ti];
    const auto idx = static_cast<std::int64_t>(pick() % static_cast<std::uint64_t>(g.tensors.at(name).numel()));
    auto bumped = [&](double delta) {
      auto p = g.clone(false);
      p.tensors[name].view(-1)[idx] += delta;
      torch::NoGradGuard no_grad;
      return objective(p).item<double>();
    };
    const double numeric = (bumped(h) - bumped(-h)) / (2 * h);
    const double analytic = grads[ti].reshape(-1)[idx].item<double>();
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, rel);
    ++checked;
  }
  return {checked >= 20 && worst < 1e-3,
          std::to_string(checked) + " parameters, worst relative error " + fmt(worst)};
}

Outcome overfit_sanity(Fixtures& fx) {
  const auto& m = fx.model();
  const auto& g = m.generator;
  const auto y = style_reference("comic", 64, 7);
  TrainConfig cfg;
  cfg.iterations = 500;
  cfg.batch = 1;
  cfg.mask = LayerMask::constant(static_cast<std::size_t>(g.config.num_layers()), 1.0);
  cfg.seed = 8;
  const auto mapper = finetune(g, m.critic, fx.enc(), {y}, cfg);
  const auto s_ref = reference_code(y.unsqueeze(0), g, fx.enc(), cfg);
  const auto taps = m.critic.config.default_taps();
  torch::NoGradGuard no_grad;
  const auto before = synthesize(s_ref, g).image, after = synthesize(s_ref, mapper.params).image;
  const auto target = y.unsqueeze(0).to(g.dtype());
  const double p0 = perceptual_loss(before, target, m.critic, taps).item<double>();
  const double p1 = perceptual_loss(after, target, m.critic, taps).item<double>();
  const double l0 = mean_abs_diff(before, target), l1 = mean_abs_diff(after, target);
  write_png(fs::temp_directory_path() / "jojo_overfit.png", make_grid(torch::cat({target, before, after}), 3));
  return {p1 < 0.1 * p0 && l1 < 0.1 * l0, "perceptual " + fmt(p0) + " -> " + fmt(p1) + " (" + fmt(100 * p1 / p0) +
                                               "%), pixel L1 " + fmt(l0) + " -> " + fmt(l1) + " (" +
                                               fmt(100 * l1 / l0) + "%)"};
}

Outcome smoke_pipeline(Fixtures& fx) {
  const auto& m = fx.model();
  const auto& g = m.generator;
  const auto base_hash = g.hash();
  const auto quality = evaluate_encoder(fx.enc(), g, 1000, 4242);
  const bool encoder_ok = quality.median_w_relative_error < 0.35;

  TrainConfig cfg;
  cfg.iterations = 300;
  cfg.seed = 11;
  const auto y = style_reference("caricature", 64, 12);
  const auto mapper = finetune(g, m.critic, fx.enc(), {y}, cfg);
  const auto& trace = mapper.loss_trace;
  const double head = trailing_mean(trace, 0, 50), tail = trailing_mean(trace, trace.size() - 50, trace.size());

  const auto inputs = faces(8, 64, 777, g.dtype());
  std::vector<torch::Tensor> list;
  for (int i = 0; i < 8; ++i) list.push_back(inputs[i]);
  const auto outs = stylize_batch(list, g, mapper, fx.enc(), 1.0);
  bool outputs_ok = outs.size() == 8;
  for (const auto& o : outs)
    outputs_ok &= o.image && o.image->sizes() == torch::IntArrayRef{3, 64, 64} && torch::isfinite(*o.image).all().item<bool>() &&
                  o.image->abs().max().item<double>() <= 1.0;

  bool frozen_ok = g.hash() == base_hash && mapper.base_hash == base_hash;
  for (const auto& [name, t] : g.tensors)
    if (!name.starts_with("synthesis.") && !name.starts_with("torgb.")) frozen_ok &= torch::equal(t, mapper.params.at(name));
  for (const auto& [name, t] : g.tensors)
    if (name.ends_with(".noise") || name.ends_with(".noise_strength")) frozen_ok &= torch::equal(t, mapper.params.at(name));
  const bool endpoint_ok =
      max_abs_diff(stylize(inputs, g, mapper, fx.enc(), 0.0), reconstruct(inputs, g, fx.enc())) <= 1e-6;
  const bool trace_ok = trace.size() == 300 && std::all_of(trace.begin(), trace.end(), [](double v) { return std::isfinite(v); });

  std::vector<torch::Tensor> grid;
  for (const auto& o : outs) grid.push_back(*o.image);
  write_png(fs::temp_directory_path() / "jojo_smoke.png", make_grid(torch::cat({inputs, torch::stack(grid)}), 8));

  const bool pass = encoder_ok && tail < head && outputs_ok && frozen_ok && endpoint_ok && trace_ok;
  return {pass, "encoder median rel err " + fmt(quality.median_w_relative_error) + " (mean-code baseline " +
                    fmt(quality.median_w_relative_error_mean_code) + "), loss first-50 mean " + fmt(head) +
                    " -> last-50 mean " + fmt(tail) + ", outputs " + (outputs_ok ? "ok" : "BAD") + ", frozen " +
                    (frozen_ok ? "ok" : "BAD") + ", endpoint " + (endpoint_ok ? "ok" : "BAD")};
}

Outcome color_control(Fixtures& fx) {
  const auto& m = fx.model();
  const auto& g = m.generator;
  const int L = g.config.num_layers();
  const auto inputs = faces(8, 64, 555, g.dtype());
  const std::vector<std::pair<std::string, std::uint64_t>> refs = {{"hue_shift", 21}, {"duotone", 22}, {"comic", 23}};

  double c_drift_sum = 0, c_toward_sum = 0, x_toward_sum = 0, c_drift_worst = 0;
  std::ostringstream per_ref;
  for (const auto& [style, seed] : refs) {
    const auto y = style_reference(style, 64, seed);
    const double ref_hue = mean_hue(y);
    TrainConfig c_cfg;
    c_cfg.seed = seed;
    c_cfg.mask = mask_preset("preserve_color_C", L);
    c_cfg.grayscale = true;
    TrainConfig x_cfg;
    x_cfg.seed = seed;
    x_cfg.mask = mask_preset("transfer_color_X", L);
    const auto c_mapper = finetune(g, m.critic, fx.enc(), {y}, c_cfg);
    const auto x_mapper = finetune(g, m.critic, fx.enc(), {y}, x_cfg);
    const auto c_out = stylize(inputs, g, c_mapper, fx.enc()), x_out = stylize(inputs, g, x_mapper, fx.enc());
    double c_drift = 0, c_toward = 0, x_toward = 0;
    for (int i = 0; i < inputs.size(0); ++i) {
      const double in = mean_hue(inputs[i]), c = mean_hue(c_out[i]), x = mean_hue(x_out[i]);
      c_drift += hue_distance(c, in);
      c_toward += hue_distance(in, ref_hue) - hue_distance(c, ref_hue);
      x_toward += hue_distance(in, ref_hue) - hue_distance(x, ref_hue);
    }
    const double n = static_cast<double>(inputs.size(0));
    c_drift /= n, c_toward /= n, x_toward /= n;
    c_drift_sum += c_drift, c_toward_sum += c_toward, x_toward_sum += x_toward;
    c_drift_worst = std::max(c_drift_worst, c_drift);
    per_ref << " [" << style << ": C drift " << fmt(c_drift) << ", C toward " << fmt(c_toward) << ", X toward "
            << fmt(x_toward) << "]";
    write_png(fs::temp_directory_path() / ("jojo_color_" + style + ".png"),
              make_grid(torch::cat({inputs, c_out, x_out, y.unsqueeze(0).to(g.dtype())}), 8));
  }
  const double k = static_cast<double>(refs.size());
  const double c_drift = c_drift_sum / k, c_toward = c_toward_sum / k, x_toward = x_toward_sum / k;
  const bool pass = c_drift <= 10.0 && x_toward > 0 && x_toward >= 2.0 * std::abs(c_toward);
  return {pass, "C mean hue drift " + fmt(c_drift) + " deg (worst ref " + fmt(c_drift_worst) + "), X moves " +
                    fmt(x_toward) + " deg toward reference vs C " + fmt(c_toward) + per_ref.str()};
}

Outcome identity_axioms(Fixtures& fx) {
  torch::NoGradGuard no_grad;
  const auto emb = fx.model().identity_embedding().to(torch::kFloat64);
  const auto x = faces(6, 64, 61, torch::kFloat64), y = faces(6, 64, 62, torch::kFloat64);
  double lo = 1e300, hi = -1e300;
  for (int seed = 0; seed < 8; ++seed) {
    auto rng = make_rng(seed);
    const auto a = torch::rand({4, 3, 64, 64}, rng, options_for(torch::kFloat64)) * 2 - 1;
    for (const auto& b : {-a, torch::rand({4, 3, 64, 64}, rng, options_for(torch::kFloat64)) * 2 - 1}) {
      const double v = identity_loss(a, b, emb).item<double>();
      lo = std::min(lo, v), hi = std::max(hi, v);
    }
  }
  const double xy = identity_loss(x, y, emb).item<double>();
  lo = std::min(lo, xy), hi = std::max(hi, xy);
  const double same = identity_loss(x, x, emb).item<double>();
  double hue_gap = 0;
  for (double deg : {45.0, 120.0, 200.0}) {
    hue_gap = std::max(hue_gap, std::abs(identity_loss(rotate_hue(x, deg), x, emb).item<double>()));
    hue_gap = std::max(hue_gap, std::abs(identity_loss(rotate_hue(x, deg), y, emb).item<double>() - xy));
  }
  const bool pass = lo >= 0 && hi <= 2 && std::abs(same) <= 1e-12 && hue_gap <= 1e-9;
  return {pass, "range [" + fmt(lo) + ", " + fmt(hi) + "], L(x,x)=" + fmt(same) + ", hue-rotation gap " + fmt(hue_gap)};
}

Outcome mean_code_estimator(Fixtures& fx) {
  const auto g = fx.model().generator.to(torch::kFloat64);
  const auto a = style_moments(g, kMeanStyleSamples, 1), b = style_moments(g, kMeanStyleSamples, 2);
  double worst = 0;
  std::int64_t entries = 0;
  for (std::size_t l = 0; l < a.mean.num_layers(); ++l) {
    const auto se = torch::sqrt((a.variance.layers[l] + b.variance.layers[l]) / static_cast<double>(kMeanStyleSamples));
    const auto z = (a.mean.layers[l] - b.mean.layers[l]).abs() / se;
    worst = std::max(worst, z.max().item<double>());
    entries += z.numel();
  }
  return {worst < 5.0, std::to_string(entries) + " entries, worst gap " + fmt(worst) + " standard errors"};
}

Outcome reproducibility(Fixtures& fx) {
  const auto base = fx.model().to(torch::kFloat64);
  const auto enc = fx.enc().to(torch::kFloat64);
  TrainConfig cfg;
  cfg.iterations = 15;
  cfg.batch = 2;
  cfg.seed = 99;
  const std::vector<torch::Tensor> refs{style_reference("sketch", 64, 4).to(torch::kFloat64)};
  const auto a = finetune(base.generator, base.critic, enc, refs, cfg).to_archive().to_bytes();
  const auto b = finetune(base.generator, base.critic, enc, refs, cfg).to_archive().to_bytes();
  cfg.seed = 100;
  const auto c = finetune(base.generator, base.critic, enc, refs, cfg).to_archive().to_bytes();
  return {a == b && a != c, "archive sha256 " + sha256_hex(a).substr(0, 16) + " vs " + sha256_hex(b).substr(0, 16) +
                                ", other seed " + sha256_hex(c).substr(0, 16)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"jojo acceptance suite"};
  std::vector<std::string> only;
  std::string fixture_dir = JOJO_FIXTURE_DIR;
  bool list = false;
  app.add_option("--only", only, "run only the named criteria");
  app.add_option("--fixtures", fixture_dir, "directory with base.ckpt and encoder.ckpt");
  app.add_flag("--list", list, "print criterion names");
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  set_log_level(LogLevel::Warn);

  const std::vector<std::pair<std::string, std::function<Outcome(Fixtures&)>>> criteria = {
      {"style_mixing_identities", style_mixing_identities},
      {"interpolation_endpoints", interpolation_endpoints},
      {"perceptual_axioms", perceptual_axioms},
      {"gradient_check", gradient_check},
      {"overfit_sanity", overfit_sanity},
      {"smoke_pipeline", smoke_pipeline},
      {"color_control", color_control},
      {"identity_axioms", identity_axioms},
      {"mean_code_estimator", mean_code_estimator},
      {"reproducibility", reproducibility},
  };
  if (list) {
    for (const auto& [name, _] : criteria) std::printf("%s\n", name.c_str());
    return 0;
  }

  Fixtures fx{fixture_dir, std::nullopt, std::nullopt};
  int failed = 0, ran = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = run(fx);
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %s (%.1fs): %s\n", out.pass ? "PASS" : "FAIL", name.c_str(), secs, out.detail.c_str());
    std::fflush(stdout);
    failed += out.pass ? 0 : 1;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed;
}
