// SPDX-License-Identifier: Apache-2.0
#include "hacm/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "hacm/checkpoint.hpp"
#include "hacm/error.hpp"
#include "hacm/ops.hpp"
#include "hacm/optim.hpp"

namespace hacm::pipeline {
namespace {

// Stream tags for Rng::derive.
constexpr std::uint64_t kTagInit = 1;
constexpr std::uint64_t kTagCrop = 2;
constexpr std::uint64_t kTagMask = 3;
constexpr std::uint64_t kTagShuffle = 4;
constexpr std::uint64_t kTagProbe = 5;
constexpr std::uint64_t kTagInspect = 6;

masking::CriteriaInputs criteria_inputs(const Model& m, const refine::Embedded& emb) {
  masking::CriteriaInputs in;
  in.ball = emb.ball.values.value();
  in.euclidean = emb.euclidean.values.value();
  in.root_ball = emb.root_ball.value();
  in.coords = emb.pruned.pruned.coords;
  in.pool_r = m.config.pool_r;
  in.psi = &m.params.gcm_psi.value;
  in.phi = &m.params.gcm_phi.value;
  return in;
}

refine::SkeletonSequence eval_crop(const Model& m, const refine::SkeletonSequence& x) {
  return data::crop_resample_center(x, m.config.eval_crop, m.config.frames);
}

void check_dataset(const RunConfig& cfg, const std::vector<data::LabeledSequence>& dataset) {
  for (const data::LabeledSequence& s : dataset) {
    if (s.sequence.joints() != cfg.skeleton_joints) {
      throw ConfigError("dataset has " + std::to_string(s.sequence.joints()) + " joints, config expects " +
                        std::to_string(cfg.skeleton_joints));
    }
  }
}

std::vector<std::size_t> split_indices(const std::vector<data::LabeledSequence>& dataset, data::Split split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (dataset[i].split == split) out.push_back(i);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Model make_model(const RunConfig& cfg) {
  cfg.validate();
  Rng rng = Rng::split(cfg.seed, {kTagInit});
  return {cfg, network::init_model(cfg.model_shape(), rng)};
}

refine::SkeletonSequence with_torso(const refine::SkeletonSequence& x, const RunConfig& cfg) {
  if (x.joints() != cfg.skeleton_joints) {
    throw ConfigError("sequence has " + std::to_string(x.joints()) + " joints, config expects " +
                      std::to_string(cfg.skeleton_joints));
  }
  refine::SkeletonSequence out = x;
  out.torso = cfg.torso_joints;
  return out;
}

SampleForward forward_sample(Graph& g, Model& m, const refine::SkeletonSequence& x, std::uint64_t mask_seed,
                             bool decode, const masking::MaskPlan* fixed_plan) {
  const RunConfig& cfg = m.config;
  const network::ModelShape shape = cfg.model_shape();
  const geometry::Curvature c = cfg.curvature();
  network::ModelParams& p = m.params;

  const refine::Embedded emb = refine::embed(g, p.refine, with_torso(x, cfg), shape.refine, c);
  const std::size_t pooled = emb.ball.frames, joints = emb.ball.joints;
  const std::size_t l = pooled / 2 * joints;

  SampleForward out;
  if (fixed_plan != nullptr) {
    out.plan = *fixed_plan;
  } else {
    const masking::MaskingConfig mcfg = cfg.masking();
    out.plan = masking::plan_masks(masking::compute_criteria(criteria_inputs(m, emb), mcfg, c), mcfg, mask_seed);
  }
  if (out.plan.l != l) {
    throw ShapeError("mask plan covers l = " + std::to_string(out.plan.l) + " tokens, sample has " + std::to_string(l));
  }

  Var odd = masking::half_tokens(emb.ball.values, masking::Parity::odd);
  Var even = masking::half_tokens(emb.ball.values, masking::Parity::even);
  out.encoded = network::encoder_forward(masking::extract_and_concat(odd, even, out.plan), p, shape.heads);
  out.pooled = losses::pool_halves(out.encoded, out.plan);
  if (!decode) return out;

  Var e_d = network::insert_mask_tokens(out.encoded, out.plan, g.param(p.mask_token));
  const network::DecoderPositions pos = network::decoder_positions(pooled, joints, cfg.within_half_positions());
  Var d = network::decoder_forward(e_d, g.param(p.refine.positional.spatial), g.param(p.refine.positional.temporal),
                                   pos, p, shape.heads);
  Var pred = network::predict(d, g.param(p.head_weight), g.param(p.head_bias));
  const losses::MotionTarget target = losses::motion_target(emb.pruned.pruned.coords, cfg.pool_r, c, cfg.target_ball_map);
  out.recon = losses::recon_loss(pred, target, out.plan, cfg.recon_normalisation());
  return out;
}

BatchResult compute_gradients(Model& m, std::span<const refine::SkeletonSequence> batch,
                              std::span<const std::uint64_t> mask_seeds,
                              std::span<const masking::MaskPlan> fixed_plans) {
  const std::size_t n = batch.size();
  if (n < 2) throw DomainError("compute_gradients: the cross-contrast loss needs at least 2 samples");
  if (mask_seeds.size() != n) throw ShapeError("compute_gradients: one mask seed per sample required");
  if (!fixed_plans.empty() && fixed_plans.size() != n) throw ShapeError("compute_gradients: one plan per sample");
  const std::size_t ch = m.config.embed_dim;
  const double mu = m.config.mu;

  std::vector<Parameter*> all = m.params.parameters();
  optim::zero_grad(all);

  // Pooled embeddings without gradients.
  BatchResult res;
  Tensor po({n, ch}), pe({n, ch}), pc({n, ch});
  for (std::size_t i = 0; i < n; ++i) {
    Graph g;
    g.set_grad_enabled(false);
    SampleForward f = forward_sample(g, m, batch[i], mask_seeds[i], false, fixed_plans.empty() ? nullptr : &fixed_plans[i]);
    std::copy_n(f.pooled.odd.value().data(), ch, po.data() + i * ch);
    std::copy_n(f.pooled.even.value().data(), ch, pe.data() + i * ch);
    std::copy_n(f.pooled.complete.value().data(), ch, pc.data() + i * ch);
    res.plans.push_back(std::move(f.plan));
  }

  Graph cg;
  Var vo = cg.variable(po), ve = cg.variable(pe), vc = cg.variable(pc);
  Var lc = losses::cross_contrast_loss(vo, ve, vc, m.config.contrast());
  cg.backward(lc);
  const double l_c2 = lc.value().item();

  auto row_seed = [ch, mu](const Tensor& grad, std::size_t i) {
    Tensor t({1, ch});
    if (grad.size() == 0) return t;
    for (std::size_t j = 0; j < ch; ++j) t[j] = mu * grad[i * ch + j];
    return t;
  };

  double l_r = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Graph g;
    SampleForward f = forward_sample(g, m, batch[i], mask_seeds[i], true, &res.plans[i]);
    if (!std::equal(po.data() + i * ch, po.data() + (i + 1) * ch, f.pooled.odd.value().data())) {
      throw GraphError("compute_gradients: replayed forward pass diverged from the first pass");
    }
    std::vector<Graph::Seed> seeds{{f.recon, Tensor::scalar(1.0 / static_cast<double>(n))}};
    if (mu > 0.0) {
      seeds.push_back({f.pooled.odd, row_seed(vo.grad(), i)});
      seeds.push_back({f.pooled.even, row_seed(ve.grad(), i)});
      seeds.push_back({f.pooled.complete, row_seed(vc.grad(), i)});
    }
    g.backward(seeds);
    l_r += f.recon.value().item();
  }

  res.report = losses::total_loss(l_r / static_cast<double>(n), l_c2, mu);
  std::vector<Parameter*> train = m.params.trainable();
  res.report.grad_norm = optim::grad_norm(train);
  return res;
}

double batch_loss(Model& m, std::span<const refine::SkeletonSequence> batch, std::span<const masking::MaskPlan> plans) {
  const std::size_t n = batch.size();
  if (n < 2 || plans.size() != n) throw ShapeError("batch_loss: need >= 2 samples and one plan each");
  Graph g;
  g.set_grad_enabled(false);
  std::vector<Var> os, es, cs;
  double l_r = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    SampleForward f = forward_sample(g, m, batch[i], 0, true, &plans[i]);
    l_r += f.recon.value().item();
    os.push_back(f.pooled.odd);
    es.push_back(f.pooled.even);
    cs.push_back(f.pooled.complete);
  }
  Var lc = losses::cross_contrast_loss(ops::concat(os, 0), ops::concat(es, 0), ops::concat(cs, 0), m.config.contrast());
  return losses::total_loss(l_r / static_cast<double>(n), lc.value().item(), m.config.mu).total;
}

std::string csv_header() { return "step,epoch,lr,L_r,L_c2,total,grad_norm,seconds"; }

std::string csv_row(const LogRow& r) {
  return std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + fmt(r.lr) + "," + fmt(r.loss.l_r) + "," +
         fmt(r.loss.l_c2) + "," + fmt(r.loss.total) + "," + fmt(r.loss.grad_norm) + "," + fmt(r.seconds);
}

PretrainResult pretrain(const RunConfig& cfg, const std::vector<data::LabeledSequence>& dataset,
                        const PretrainOptions& opts) {
  PretrainResult res{make_model(cfg), {}};
  Model& m = res.model;
  check_dataset(cfg, dataset);
  const std::vector<std::size_t> train = split_indices(dataset, data::Split::train);
  const bool overfit = cfg.overfit_steps > 0;
  if (train.size() < 2 || (overfit && train.size() < cfg.overfit_batch)) {
    throw ConfigError("pretrain: not enough training sequences (" + std::to_string(train.size()) + ")");
  }

  std::ofstream csv;
  const std::filesystem::path& out = opts.out_dir;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    const auto ckpt = out / "checkpoint.bin";
    if (std::filesystem::exists(ckpt) && checkpoint::read_digest(ckpt) != cfg.digest()) {
      throw ConfigError("pretrain: " + ckpt.string() + " was written by an incompatible configuration");
    }
    cfg.save(out / "config.txt");
    csv.open(out / "train_log.csv", std::ios::trunc);
    if (!csv) throw Error("pretrain: cannot write " + (out / "train_log.csv").string());
    csv << csv_header() << '\n';
  }
  auto save_checkpoint = [&](const std::string& name) {
    if (out.empty()) return;
    const std::vector<const Parameter*> params = std::as_const(m.params).parameters();
    checkpoint::save(out / name, cfg.digest(), params);
  };

  optim::AdamW opt(m.params.trainable(), {cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
  const auto start = std::chrono::steady_clock::now();
  std::size_t step = 0;
  auto run_step = [&](std::size_t epoch, std::span<const refine::SkeletonSequence> batch,
                      std::span<const std::uint64_t> seeds, double lr) {
    BatchResult b = compute_gradients(m, batch, seeds);
    opt.step(lr);
    LogRow row{step++, epoch, lr, b.report, 0.0};
    if (cfg.log_wall_time) row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (csv.is_open()) csv << csv_row(row) << '\n' << std::flush;
    if (opts.on_step) opts.on_step(row);
    res.log.push_back(row);
  };

  // Steps in one pass over the train split; a last batch of one is dropped.
  const std::size_t bs = cfg.batch_size;
  const std::size_t per_epoch = train.size() / bs + (train.size() % bs >= 2 ? 1 : 0);
  if (overfit) {
    std::vector<refine::SkeletonSequence> batch;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < cfg.overfit_batch; ++i) {
      const std::size_t idx = train[i * train.size() / cfg.overfit_batch];
      batch.push_back(eval_crop(m, dataset[idx].sequence));
      seeds.push_back(Rng::derive(cfg.seed, {kTagMask, 0, idx}));
    }
    // Warmup lasts as many steps as it would in a normal run.
    const optim::Schedule sched{cfg.lr_peak, cfg.lr_final, std::min(cfg.warmup_epochs * per_epoch, cfg.overfit_steps),
                                cfg.overfit_steps};
    for (std::size_t s = 0; s < cfg.overfit_steps; ++s) run_step(0, batch, seeds, sched.at(s));
  } else {
    const optim::Schedule sched{cfg.lr_peak, cfg.lr_final, cfg.warmup_epochs * per_epoch, cfg.epochs * per_epoch};
    std::vector<std::size_t> order = train;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      Rng shuffle = Rng::split(cfg.seed, {kTagShuffle, epoch});
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
      for (std::size_t b = 0; b < per_epoch; ++b) {
        const std::size_t lo = b * bs, hi = std::min(order.size(), lo + bs);
        std::vector<refine::SkeletonSequence> batch;
        std::vector<std::uint64_t> seeds;
        for (std::size_t k = lo; k < hi; ++k) {
          const std::size_t idx = order[k];
          Rng crop = Rng::split(cfg.seed, {kTagCrop, epoch, idx});
          const double p = crop.uniform(cfg.crop_min, cfg.crop_max);
          batch.push_back(data::crop_resample(dataset[idx].sequence, p, cfg.frames, crop));
          seeds.push_back(Rng::derive(cfg.seed, {kTagMask, epoch, idx}));
        }
        run_step(epoch, batch, seeds, sched.at(step));
      }
      if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
        save_checkpoint("checkpoint_epoch" + std::to_string(epoch + 1) + ".bin");
      }
    }
  }
  save_checkpoint("checkpoint.bin");
  return res;
}

std::vector<double> encode_features(Model& m, const refine::SkeletonSequence& x) {
  const network::ModelShape shape = m.config.model_shape();
  Graph g;
  g.set_grad_enabled(false);
  const refine::Embedded emb =
      refine::embed(g, m.params.refine, with_torso(eval_crop(m, x), m.config), shape.refine, m.config.curvature());
  Var tokens = ops::concat({masking::half_tokens(emb.ball.values, masking::Parity::odd),
                            masking::half_tokens(emb.ball.values, masking::Parity::even)},
                           0);
  Var pooled = ops::mean(network::encoder_forward(tokens, m.params, shape.heads), 0);
  return {pooled.value().values().begin(), pooled.value().values().end()};
}

ProbeReport probe(Model& m, const std::vector<data::LabeledSequence>& dataset) {
  check_dataset(m.config, dataset);
  const std::vector<std::size_t> train = split_indices(dataset, data::Split::train);
  const std::vector<std::size_t> test = split_indices(dataset, data::Split::test);
  if (train.empty() || test.empty()) throw ConfigError("probe: dataset needs both train and test sequences");

  ProbeReport rep;
  for (const auto& s : dataset) rep.classes = std::max(rep.classes, s.label + 1);
  rep.chance = 1.0 / static_cast<double>(rep.classes);
  rep.train_samples = train.size();
  rep.test_samples = test.size();
  const std::size_t ch = m.config.embed_dim, k = rep.classes;

  auto features = [&](const std::vector<std::size_t>& idx) {
    Tensor f({idx.size(), ch});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::vector<double> v = encode_features(m, dataset[idx[i]].sequence);
      std::copy(v.begin(), v.end(), f.row(i).begin());
    }
    return f;
  };
  Tensor xtr = features(train), xte = features(test);

  // Standardise with train statistics.
  for (std::size_t j = 0; j < ch; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) mean += xtr.at(i, j);
    mean /= static_cast<double>(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) var += (xtr.at(i, j) - mean) * (xtr.at(i, j) - mean);
    const double sd = std::max(std::sqrt(var / static_cast<double>(train.size())), 1e-8);
    for (std::size_t i = 0; i < train.size(); ++i) xtr.at(i, j) = (xtr.at(i, j) - mean) / sd;
    for (std::size_t i = 0; i < test.size(); ++i) xte.at(i, j) = (xte.at(i, j) - mean) / sd;
  }

  Parameter w("probe.weight", Tensor({ch, k})), b("probe.bias", Tensor({k}));
  std::vector<Parameter*> params{&w, &b};
  optim::AdamW opt(params, {m.config.beta1, m.config.beta2, m.config.adam_eps, 0.0});
  const std::size_t bs = std::min(m.config.probe_batch, train.size());
  const std::size_t per_epoch = (train.size() + bs - 1) / bs;
  const optim::Schedule sched{m.config.probe_lr, 0.0, 0, m.config.probe_epochs * per_epoch};

  auto logits = [&](const Tensor& x, std::size_t i, std::vector<double>& z) {
    z.assign(b.value.values().begin(), b.value.values().end());
    kernels::gemm_nn(1, ch, k, x.data() + i * ch, w.value.data(), z.data());
  };

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> z;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < m.config.probe_epochs; ++epoch) {
    Rng shuffle = Rng::split(m.config.seed, {kTagProbe, epoch});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      optim::zero_grad(params);
      for (std::size_t r = lo; r < hi; ++r) {
        const std::size_t i = order[r];
        logits(xtr, i, z);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double& v : z) sum += (v = std::exp(v - mx));
        for (std::size_t c = 0; c < k; ++c) {
          const double d = (z[c] / sum - (dataset[train[i]].label == c ? 1.0 : 0.0)) / static_cast<double>(hi - lo);
          b.grad[c] += d;
          for (std::size_t j = 0; j < ch; ++j) w.grad.at(j, c) += xtr.at(i, j) * d;
        }
      }
      opt.step(sched.at(step++));
    }
  }

  auto accuracy = [&](const Tensor& x, const std::vector<std::size_t>& idx) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      logits(x, i, z);
      const auto pred = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      hits += pred == dataset[idx[i]].label ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(idx.size());
  };
  rep.train_accuracy = accuracy(xtr, train);
  rep.test_accuracy = accuracy(xte, test);
  return rep;
}

std::uint64_t parameter_checksum(const network::ModelParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter* q : p.parameters()) {
    for (double v : q->value.values()) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i, bits >>= 8) {
        h ^= bits & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

std::string inspect_mask(Model& m, const std::vector<data::LabeledSequence>& dataset, std::size_t sample) {
  if (sample >= dataset.size()) {
    throw ConfigError("inspect-mask: sample " + std::to_string(sample) + " out of range (dataset has " +
                      std::to_string(dataset.size()) + ")");
  }
  check_dataset(m.config, dataset);
  const RunConfig& cfg = m.config;
  const geometry::Curvature c = cfg.curvature();
  Graph g;
  g.set_grad_enabled(false);
  const refine::Embedded emb = refine::embed(g, m.params.refine, with_torso(eval_crop(m, dataset[sample].sequence), cfg),
                                             cfg.model_shape().refine, c);
  const masking::MaskingConfig mcfg = cfg.masking();
  const masking::HalfScores scores = masking::compute_criteria(criteria_inputs(m, emb), mcfg, c);
  const masking::MaskPlan plan = masking::plan_masks(scores, mcfg, Rng::derive(cfg.seed, {kTagInspect, sample}));

  std::string csv = "sample,half,frame,joint,score,unmasked\n";
  const std::size_t joints = emb.ball.joints;
  for (masking::Parity p : {masking::Parity::odd, masking::Parity::even}) {
    const bool odd = p == masking::Parity::odd;
    const std::vector<double> flat = (odd ? scores.odd : scores.even).flat();
    const std::vector<std::uint8_t>& keep = odd ? plan.keep_odd : plan.keep_even;
    const std::vector<std::size_t> frames = masking::half_frames(emb.ball.frames, p);
    for (std::size_t k = 0; k < frames.size(); ++k) {
      for (std::size_t j = 0; j < joints; ++j) {
        const std::size_t i = k * joints + j;
        csv += std::to_string(sample) + (odd ? ",odd," : ",even,") + std::to_string(frames[k]) + "," +
               std::to_string(j) + "," + fmt(flat[i]) + "," + (keep[i] ? "1" : "0") + "\n";
      }
    }
  }
  return csv;
}

Model load_model(const RunConfig& cfg, const std::filesystem::path& checkpoint_path) {
  Model m = make_model(cfg);
  std::vector<Parameter*> params = m.params.parameters();
  checkpoint::load(checkpoint_path, cfg.digest(), params);
  return m;
}

}  // namespace hacm::pipeline
