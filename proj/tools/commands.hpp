#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mumoe::cli {

// Exit codes
constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kUsage = 2;

struct VerifyArgs {
  std::uint64_t seed = 0;
  std::size_t scale = 1;
};

struct GenDataArgs {
  std::string out;
  std::size_t classes = 4;
  std::size_t clusters = 1;
  std::size_t dim = 8;
  std::size_t samples = 200;
  double spread = 1.0;
  double separation = 4.0;
  double offset = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::size_t> minority_cluster;
  std::size_t minority_ratio = 20;
  std::optional<std::size_t> near_cluster;
  double near_distance = 3.0;
};

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct EvalArgs {
  std::string ckpt;
  std::string data;
};

struct InterveneArgs {
  std::string ckpt;
  std::string data;
  double threshold = 0.5;
};

struct RewriteArgs {
  std::string ckpt;
  std::string data;
  int subpop = 0;
  std::size_t head = 0;
  std::optional<double> lambda;
};

struct SvdArgs {
  std::string ckpt;
  std::string data;
  std::vector<double> fractions;
};

struct BenchArgs {
  std::string config;
  std::size_t reps = 5;
};

int run_verify(const VerifyArgs& a);
int run_gen_data(const GenDataArgs& a);
int run_train(const TrainArgs& a);
int run_eval(const EvalArgs& a);
int run_intervene(const InterveneArgs& a);
int run_rewrite(const RewriteArgs& a);
int run_svd_ablate(const SvdArgs& a);
int run_bench(const BenchArgs& a);

}  // namespace mumoe::cli
