#include "jojo/corpus.hpp"
#include "jojo/image.hpp"
#include "jojo/log.hpp"
#include "jojo/models.hpp"
#include "jojo/service.hpp"
#include "jojo/stylizer.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace jojo;

namespace {

torch::Tensor load_corpus(const fs::path& dir, int synthetic, int resolution, std::uint64_t seed) {
  if (synthetic > 0) return face_corpus(synthetic, resolution, seed);
  const auto files = list_pngs(dir);
  if (files.empty()) throw InvalidInput("no PNG files in " + dir.string());
  std::vector<torch::Tensor> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(prepare_image(read_png(f), resolution).pixels);
  return torch::stack(images);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-shot face stylization: pretrain, finetune and apply style mappers"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  // make-corpus
  auto* mk = app.add_subcommand("make-corpus", "Render the procedural face corpus to PNG files");
  fs::path mk_out;
  int mk_count = 2000, mk_res = 64;
  std::uint64_t mk_seed = 0;
  mk->add_option("--out", mk_out, "Output directory")->required();
  mk->add_option("--count", mk_count, "Number of images");
  mk->add_option("--resolution", mk_res, "Image size");
  mk->add_option("--seed", mk_seed, "Random seed");

  // reference
  auto* rf = app.add_subcommand("reference", "Render a styled reference image");
  std::string rf_style;
  fs::path rf_out;
  int rf_res = 64;
  std::uint64_t rf_seed = 0;
  rf->add_option("--style", rf_style, "Style filter")->required()->check(CLI::IsMember(style_names()));
  rf->add_option("--out", rf_out, "Output PNG")->required();
  rf->add_option("--resolution", rf_res, "Image size");
  rf->add_option("--seed", rf_seed, "Random seed");

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "Adversarially pretrain the base generator and critic");
  fs::path pt_corpus, pt_out, pt_samples;
  int pt_synthetic = 0, pt_res = 64, pt_embed_head = 0;
  PretrainConfig pcfg;
  pt->add_option("--corpus", pt_corpus, "Directory of aligned face PNGs");
  pt->add_option("--synthetic", pt_synthetic, "Render this many procedural faces instead of reading --corpus");
  pt->add_option("--out", pt_out, "Output base checkpoint")->required();
  pt->add_option("--resolution", pt_res, "Generator resolution");
  pt->add_option("--iters", pcfg.iterations, "Training iterations");
  pt->add_option("--batch", pcfg.batch, "Batch size");
  pt->add_option("--lr", pcfg.learning_rate, "Adam learning rate");
  pt->add_option("--seed", pcfg.seed, "Random seed");
  pt->add_option("--samples", pt_samples, "Directory for sample grids and periodic snapshots");
  pt->add_option("--sample-every", pcfg.sample_every, "Snapshot interval");
  pt->add_option("--embedding-head", pt_embed_head, "Train an identity embedding head of this width (0 = none)");

  // train-encoder
  auto* te = app.add_subcommand("train-encoder", "Train the feed-forward inverter for a base generator");
  fs::path te_base, te_out;
  TrainEncoderConfig tcfg;
  te->add_option("--base", te_base, "Base checkpoint")->required();
  te->add_option("--out", te_out, "Output encoder checkpoint")->required();
  te->add_option("--iters", tcfg.iterations, "Training iterations");
  te->add_option("--batch", tcfg.batch, "Batch size");
  te->add_option("--lr", tcfg.learning_rate, "Adam learning rate");
  te->add_option("--seed", tcfg.seed, "Random seed");

  // finetune
  auto* ft = app.add_subcommand("finetune", "Learn a style mapper from one or more references");
  fs::path ft_base, ft_enc, ft_out;
  std::vector<fs::path> ft_refs;
  std::string ft_mask = "transfer_color_X", ft_space = "s", ft_blend;
  TrainConfig fcfg;
  ft->add_option("--base", ft_base, "Base checkpoint")->required();
  ft->add_option("--encoder", ft_enc, "Encoder checkpoint")->required();
  ft->add_option("--ref", ft_refs, "Reference image(s)")->required();
  ft->add_option("--out", ft_out, "Output mapper checkpoint")->required();
  ft->add_option("--mask", ft_mask, "Mask preset name or one digit per layer");
  ft->add_option("--space", ft_space, "Mixing space: s or w");
  ft->add_option("--iters", fcfg.iterations, "Finetuning iterations");
  ft->add_option("--lr", fcfg.learning_rate, "Adam learning rate");
  ft->add_option("--batch", fcfg.batch, "Mixed codes per reference and step");
  ft->add_option("--id-weight", fcfg.id_weight, "Identity loss weight");
  ft->add_flag("--grayscale", fcfg.grayscale, "Match grayscale critic features");
  ft->add_flag("--ood", fcfg.ood_mean_code, "Use the mean code for out-of-domain references");
  ft->add_option("--blend", ft_blend, "Virtual inverter mask (preset name or digits)");
  ft->add_option("--taps", fcfg.taps, "Critic resblock outputs to match (default: all but the first)");
  ft->add_option("--seed", fcfg.seed, "Random seed");

  // stylize
  auto* st = app.add_subcommand("stylize", "Apply a mapper to face images");
  fs::path st_base, st_enc, st_mapper, st_out;
  std::vector<fs::path> st_in;
  double st_alpha = 1.0;
  st->add_option("--base", st_base, "Base checkpoint")->required();
  st->add_option("--encoder", st_enc, "Encoder checkpoint")->required();
  st->add_option("--mapper", st_mapper, "Mapper checkpoint")->required();
  st->add_option("--in", st_in, "Input image(s)")->required();
  st->add_option("--out", st_out, "Output PNG (a grid for several inputs)")->required();
  st->add_option("--alpha", st_alpha, "Feature interpolation strength")->check(CLI::Range(0.0, 1.0));

  // sample
  auto* sm = app.add_subcommand("sample", "Write a grid of random samples");
  fs::path sm_ckpt, sm_out;
  int sm_count = 16;
  std::uint64_t sm_seed = 0;
  sm->add_option("--checkpoint", sm_ckpt, "Base or mapper checkpoint")->required();
  sm->add_option("--out", sm_out, "Output PNG")->required();
  sm->add_option("--count", sm_count, "Number of samples");
  sm->add_option("--seed", sm_seed, "Random seed");

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP service");
  ServiceConfig scfg = ServiceConfig::from_env();
  sv->add_option("--data-dir", scfg.data_dir, "Mapper store and uploads");
  sv->add_option("--base", scfg.base_path, "Base checkpoint");
  sv->add_option("--encoder", scfg.encoder_path, "Encoder checkpoint");
  sv->add_option("--host", scfg.host, "Bind address");
  sv->add_option("--port", scfg.port, "Port");

  CLI11_PARSE(app, argc, argv);
  if (verbose) set_log_level(LogLevel::Debug);

  try {
    if (*mk) {
      fs::create_directories(mk_out);
      const auto corpus = face_corpus(mk_count, mk_res, mk_seed);
      for (int i = 0; i < mk_count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "face_%05d.png", i);
        write_png(mk_out / name, corpus[i]);
      }
      log_info("wrote ", mk_count, " images to ", mk_out.string());
    } else if (*rf) {
      write_png(rf_out, style_reference(rf_style, rf_res, rf_seed));
    } else if (*pt) {
      if (pt_synthetic == 0 && pt_corpus.empty()) throw InvalidInput("pretrain needs --corpus or --synthetic");
      const auto corpus = load_corpus(pt_corpus, pt_synthetic, pt_res, pcfg.seed);
      auto gcfg = GeneratorConfig::desk();
      gcfg.resolution = pt_res;
      gcfg.channels.clear();
      if (!pt_samples.empty()) {
        fs::create_directories(pt_samples);
        pcfg.sample_dir = pt_samples;
        pcfg.on_snapshot = [&](int step, const GeneratorParams& g, const DiscriminatorParams& d) {
          BaseModel{g, d, std::nullopt}.save(pt_samples / "snapshot.ckpt");
          log_info("snapshot at step ", step);
        };
      }
      auto result = pretrain_base(corpus, gcfg, pcfg);
      BaseModel model{result.generator, result.critic, std::nullopt};
      if (pt_embed_head > 0) {
        EmbeddingConfig ecfg;
        ecfg.head_dim = pt_embed_head;
        ecfg.seed = pcfg.seed;
        model.embedding = train_embedding(corpus, result.critic, ecfg);
      }
      model.save(pt_out);
      log_info("saved ", pt_out.string(), " (generator ", model.generator.hash().substr(0, 12), ")");
    } else if (*te) {
      const auto base = BaseModel::load(te_base);
      auto result = train_encoder(base.generator, &base.critic, tcfg);
      save_encoder(te_out, result.encoder);
      const auto q = evaluate_encoder(result.encoder, base.generator, 256, tcfg.seed + 1);
      log_info("encoder: median relative w error ", q.median_w_relative_error, " (mean code ", q.median_w_relative_error_mean_code, "), PSNR ", q.psnr_encoder,
               " dB (mean code ", q.psnr_mean_code, " dB)");
    } else if (*ft) {
      const auto base = BaseModel::load(ft_base);
      const auto enc = load_encoder(ft_enc);
      const int L = base.generator.config.num_layers();
      fcfg.mask = parse_mask(ft_mask, L);
      fcfg.mix_space = mix_space_from_string(ft_space);
      if (!ft_blend.empty()) fcfg.blend = BlendSpec{parse_mask(ft_blend, L), BlendSource::Mean};
      std::vector<torch::Tensor> refs;
      for (const auto& p : ft_refs) refs.push_back(read_png(p));
      const auto embedding = base.identity_embedding();
      FinetuneHooks hooks;
      hooks.on_step = [&](const FinetuneStep& s) {
        if ((s.iteration + 1) % 50 == 0) log_info("finetune ", s.iteration + 1, "/", fcfg.iterations, " loss ", s.loss);
      };
      const auto mapper = finetune(base.generator, base.critic, enc, refs, fcfg, &embedding, hooks);
      mapper.save(ft_out);
      log_info("saved ", ft_out.string());
    } else if (*st) {
      const auto base = BaseModel::load(st_base);
      const auto enc = load_encoder(st_enc);
      const auto mapper = MapperCheckpoint::load(st_mapper);
      std::vector<torch::Tensor> inputs;
      for (const auto& p : st_in) inputs.push_back(read_png(p));
      auto outcomes = stylize_batch(inputs, base.generator, mapper, enc, st_alpha);
      std::vector<torch::Tensor> images;
      int failed = 0;
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (outcomes[i].image) {
          images.push_back(*outcomes[i].image);
        } else {
          ++failed;
          std::cerr << st_in[i].string() << ": " << outcomes[i].error << "\n";
        }
      }
      if (images.empty()) return 1;
      write_png(st_out, images.size() == 1 ? images[0] : make_grid(torch::stack(images), 4));
      return failed ? 2 : 0;
    } else if (*sm) {
      const auto archive = Archive::load(sm_ckpt);
      const auto gen = archive.meta.value("kind", "") == "mapper" ? MapperCheckpoint::from_archive(archive).params
                                                                  : BaseModel::from_archive(archive).generator;
      auto rng = make_rng(sm_seed);
      torch::NoGradGuard no_grad;
      const auto z = sample_z(sm_count, gen.config, rng, gen.dtype());
      write_png(sm_out, make_grid(synthesize(style_from_w(map_latent(z, gen), gen), gen).image, 4));
    } else if (*sv) {
      return run_service(scfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
