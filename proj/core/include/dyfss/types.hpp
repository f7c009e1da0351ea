#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace dyfss {

// Dense storage is row-major so that a node's embedding is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

using Labels = std::vector<int>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Mixes a run seed and a stream id into an independent generator. Every
/// stochastic component (sampling, init, corruption, kmeans) draws from its
/// own stream so that adding draws in one place never perturbs another.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t step = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t s = mix(seed);
  s = mix(s ^ (stream * 0xd1b54a32d192ed03ULL));
  s = mix(s ^ step);
  return std::mt19937_64(s);
}

// Stream ids.
namespace stream {
inline constexpr std::uint64_t kSbm = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kReconNegatives = 3;
inline constexpr std::uint64_t kDgiCorruption = 4;
inline constexpr std::uint64_t kKMeans = 5;
inline constexpr std::uint64_t kPartition = 6;
inline constexpr std::uint64_t kPairDis = 7;
inline constexpr std::uint64_t kPairSim = 8;
inline constexpr std::uint64_t kClu = 9;
inline constexpr std::uint64_t kStructureSample = 10;
}  // namespace stream

}  // namespace dyfss
