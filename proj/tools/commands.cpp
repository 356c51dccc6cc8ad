#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mumoe/analysis.hpp"
#include "mumoe/checkpoint.hpp"
#include "mumoe/config.hpp"
#include "mumoe/cost_model.hpp"
#include "mumoe/idx.hpp"
#include "mumoe/verify.hpp"

namespace mumoe::cli {

namespace fs = std::filesystem;

namespace {

std::string grouped(std::uint64_t v) {
  std::string s = std::to_string(v);
  for (int k = int(s.size()) - 3; k > 0; k -= 3) s.insert(std::size_t(k), ",");
  return s;
}

// Calls fn.template operator()<T>(model) with the precision stored in the file.
template <typename Fn>
int with_checkpoint(const std::string& path, Fn&& fn) {
  const CheckpointFile file = read_checkpoint_file(path);
  if (file.dtype == DType::f32) return fn(model_from_checkpoint<float>(file));
  return fn(model_from_checkpoint<double>(file));
}

Dataset load_data(const std::string& dir, std::size_t features) {
  Dataset data = load_idx_dir(dir);
  if (data.features() != features)
    throw ShapeError("dataset has " + std::to_string(data.features()) + " features, model expects " +
                     std::to_string(features));
  return data;
}

template <typename T>
void check_outputs(const Model<T>& model, const Dataset& data) {
  if (data.classes > model.output_dim())
    throw ShapeError("dataset has " + std::to_string(data.classes) + " classes, model only " +
                     std::to_string(model.output_dim()) + " outputs");
}

double subset_accuracy(std::span<const int> pred, std::span<const int> labels, std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  std::size_t ok = 0;
  for (auto r : rows) ok += pred[r] == labels[r];
  return double(ok) / double(rows.size());
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& y) {
  std::vector<int> out;
  for (std::size_t b = 0; b < y.rows(); ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < y.cols(); ++c)
      if (y(b, c) > y(b, best)) best = c;
    out.push_back(int(best));
  }
  return out;
}

template <typename T>
double time_forward_ms(const Model<T>& model, std::size_t batch, std::size_t reps) {
  Tensor<T> z({batch, model.input_dim()});
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = static_cast<T>(std::sin(double(k)));
  model_forward(model, z, Mode::eval);  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < reps; ++r) model_forward(model, z, Mode::eval);
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / double(reps);
}

}  // namespace

int run_verify(const VerifyArgs& a) {
  const auto results = run_verification(a.seed, a.scale);
  bool ok = true;
  std::cout << "suite\tstatus\tcases\tworst\n";
  for (const auto& r : results) {
    std::cout << r.name << '\t' << (r.passed ? "PASS" : "FAIL") << '\t' << r.cases << '\t' << std::setprecision(3)
              << r.worst << '\n';
    ok = ok && r.passed;
  }
  std::cerr << (ok ? "all suites passed\n" : "verification FAILED\n");
  return ok ? kOk : kVerifyFailed;
}

int run_gen_data(const GenDataArgs& a) {
  SyntheticClusterSpec spec;
  spec.classes = a.classes;
  spec.clusters_per_class = a.clusters;
  spec.input_dim = a.dim;
  spec.samples_per_class = a.samples;
  spec.spread = a.spread;
  spec.separation = a.separation;
  spec.offset = a.offset;
  spec.seed = a.seed;
  const std::size_t clusters = a.classes * a.clusters;
  if (clusters > 256) throw UsageError("at most 256 clusters fit in IDX tags");
  if (a.minority_cluster && *a.minority_cluster >= clusters) throw UsageError("--minority-cluster out of range");
  if (a.near_cluster && !a.minority_cluster) throw UsageError("--near-cluster needs --minority-cluster");
  spec.minority_cluster = a.minority_cluster;
  spec.minority_ratio = a.minority_ratio;
  spec.near_cluster = a.near_cluster;
  spec.near_distance = a.near_distance;
  const Dataset data = gen_synthetic(spec);
  save_idx_dir(data, a.out);
  std::cerr << "wrote " << data.size() << " rows (" << data.split_rows(true).size() << " test) to " << a.out << '\n';
  return kOk;
}

int run_train(const TrainArgs& a) {
  ExperimentConfig cfg = parse_config(a.config);
  if (a.seed) cfg.init.seed = cfg.train.seed = *a.seed;
  auto go = [&]<typename T>() {
    Model<T> model = build_model<T>(cfg);
    const Dataset data = load_data(a.data, model.input_dim());
    check_outputs(model, data);
    OptimState<T> optim;
    optim.config = cfg.train.optim;
    const auto metrics = train(model, data, cfg.train, &optim);
    fs::create_directories(a.out);
    save_checkpoint(model, fs::path(a.out) / "model.ckpt", &optim);
    std::ostringstream tsv;
    tsv << "epoch\tloss\ttrain_accuracy\ttest_accuracy\n" << std::setprecision(9);
    for (const auto& m : metrics)
      tsv << m.epoch << '\t' << m.loss << '\t' << m.train_accuracy << '\t' << m.test_accuracy << '\n';
    std::ofstream(fs::path(a.out) / "metrics.tsv") << tsv.str();
    std::cout << tsv.str();
    if (!metrics.empty())
      std::cerr << "final test accuracy " << metrics.back().test_accuracy << ", checkpoint "
                << (fs::path(a.out) / "model.ckpt").string() << '\n';
    return kOk;
  };
  return cfg.dtype == "f32" ? go.template operator()<float>() : go.template operator()<double>();
}

int run_eval(const EvalArgs& a) {
  return with_checkpoint(a.ckpt, [&](const auto& model) {
    const Dataset data = load_data(a.data, model.input_dim());
    check_outputs(model, data);
    const ClassAccuracy acc = evaluate_per_class(model, data);
    std::cout << "class\tsupport\tcorrect\taccuracy\n" << std::setprecision(6);
    for (std::size_t c = 0; c < acc.accuracy.size(); ++c)
      std::cout << c << '\t' << acc.support[c] << '\t' << acc.correct[c] << '\t' << acc.accuracy[c] << '\n';
    std::cerr << "overall accuracy " << acc.overall() << '\n';
    return kOk;
  });
}

int run_intervene(const InterveneArgs& a) {
  return with_checkpoint(a.ckpt, [&](const auto& model) {
    if (model.first.config.levels() != 1) throw UsageError("intervene needs a single-level model");
    const Dataset data = load_data(a.data, model.input_dim());
    check_outputs(model, data);
    const PolysemanticityReport report = polysemanticity_report(model, data, a.threshold);
    std::cout << std::setprecision(6);
    write_report_tsv(std::cout, report);
    std::cerr << "mean polysemanticity " << report.mean_p << " over " << report.counted << " of "
              << report.rows.size() << " experts\n";
    if (!report.undefined_classes.empty()) {
      std::cerr << "classes with zero baseline accuracy (excluded):";
      for (auto c : report.undefined_classes) std::cerr << ' ' << c;
      std::cerr << '\n';
    }
    std::size_t dead = 0, peak = 1;
    for (const auto& r : report.rows) {
      dead += r.load == 0;
      peak = std::max(peak, r.load);
    }
    std::cerr << "expert load (coefficient >= " << a.threshold << "), " << dead << " dead\n";
    for (const auto& r : report.rows)
      std::cerr << std::setw(5) << r.expert << ' ' << std::string(40 * r.load / peak, '#') << ' ' << r.load << '\n';
    return kOk;
  });
}

int run_rewrite(const RewriteArgs& a) {
  return with_checkpoint(a.ckpt, [&](const auto& model) {
    using T = typename std::decay_t<decltype(model)>::value_type;
    if (model.first.config.levels() != 1) throw UsageError("rewrite needs a single-level model");
    const Dataset data = load_data(a.data, model.input_dim());
    check_outputs(model, data);
    if (!data.has_tags()) throw UsageError("dataset has no subpopulation tags");
    std::vector<std::size_t> source;
    for (std::size_t r = 0; r < data.size(); ++r)
      if (!data.test[r] && data.tags[r] == a.subpop) source.push_back(r);
    if (source.empty()) throw UsageError("no training rows carry tag " + std::to_string(a.subpop));

    RewriteTerm term;
    term.head = a.head;
    term.mean_coeffs = mean_subpop_coefficients(model, data.inputs, source);
    term.lambda = a.lambda ? *a.lambda : double(model.first.config.experts[0]);

    const Dataset test = data.test_split();
    const Tensor<T> z = inputs_as<T>(test.inputs);
    const auto before = argmax_rows(model_forward(model, z, Mode::eval));
    const auto after = argmax_rows(rewrite_logits(model, term, z));
    const auto coeffs = model_coefficients(model, z);
    std::vector<std::size_t> all, target, unrelated;
    for (std::size_t r = 0; r < test.size(); ++r) {
      all.push_back(r);
      if (test.tags[r] == a.subpop) target.push_back(r);
      double dot = 0.0;
      for (std::size_t n = 0; n < term.mean_coeffs.size(); ++n)
        dot += term.mean_coeffs[n] * double(coeffs.levels[0](r, n));
      if (dot < 0.1) unrelated.push_back(r);
    }
    std::cout << "group\trows\tbefore\tafter\n" << std::setprecision(6);
    auto line = [&](const char* name, const std::vector<std::size_t>& rows) {
      std::cout << name << '\t' << rows.size() << '\t' << subset_accuracy(before, test.labels, rows) << '\t'
                << subset_accuracy(after, test.labels, rows) << '\n';
    };
    line("target_subpop", target);
    line("low_overlap", unrelated);
    line("overall", all);
    std::cerr << "lambda " << term.lambda << " on head " << term.head << '\n';
    return kOk;
  });
}

int run_svd_ablate(const SvdArgs& a) {
  std::vector<double> fractions = a.fractions;
  if (fractions.empty())
    for (int k = 0; k <= 10; ++k) fractions.push_back(k / 10.0);
  return with_checkpoint(a.ckpt, [&](const auto& model) {
    const Dataset data = load_data(a.data, model.input_dim());
    check_outputs(model, data);
    std::cout << "keep_fraction\taccuracy\n" << std::setprecision(6);
    for (double f : fractions)
      std::cout << f << '\t' << evaluate_per_class(svd_ablate_model(model, f), data).overall() << '\n';
    std::cerr << "baseline accuracy " << evaluate_per_class(model, data).overall() << '\n';
    return kOk;
  });
}

int run_bench(const BenchArgs& a) {
  const ExperimentConfig cfg = parse_config(a.config);
  std::vector<LayerConfig> layers{cfg.layer};
  if (cfg.hidden_dim) {
    LayerConfig second = cfg.layer;
    second.input_dim = *cfg.hidden_dim;
    second.output_dim = cfg.output_dim;
    second.gated = false;
    layers.push_back(second);
  }
  std::cout << "layer\tkind\tparams\tweights\tgating\tflops\tnaive_flops\trank_bound\tforward_ms_b1\tforward_ms_b256\n";
  constexpr std::uint64_t kMaxTimedWeights = 20'000'000;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (LayerKind kind : {layers[l].kind, LayerKind::dense}) {
      LayerConfig c = layers[l];
      c.kind = kind;
      const ParamBreakdown p = param_count(c);
      std::cout << (l + 1) << '\t' << to_string(kind) << '\t' << p.total() << '\t' << p.weights << '\t' << p.gating
                << '\t' << flop_estimate(c) << '\t' << naive_flop_estimate(c) << '\t' << rank_bound(c);
      if (p.weights <= kMaxTimedWeights) {
        Model<float> m;
        m.first = init_layer<float>(c, cfg.init);
        if (!c.gated) {
          // time the multilinear map alone through a gated twin
          m.first.config.gated = true;
          m.first = init_layer<float>(m.first.config, cfg.init);
        }
        std::cout << std::fixed << std::setprecision(3) << '\t' << time_forward_ms(m, 1, a.reps) << '\t'
                  << time_forward_ms(m, 256, a.reps) << std::defaultfloat;
      } else {
        std::cout << "\t-\t-";
      }
      std::cout << '\n';
      std::cerr << "layer " << (l + 1) << ' ' << to_string(kind) << ": params = " << grouped(p.total())
                << " (weights " << grouped(p.weights) << ", gating " << grouped(p.gating) << "), flops = "
                << grouped(flop_estimate(c)) << ", rank bound = " << rank_bound(c) << '\n';
      if (layers[l].kind == LayerKind::dense) break;
    }
  }
  return kOk;
}

}  // namespace mumoe::cli
