#include "mlglm/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <map>
#include <mutex>
#include <numeric>

namespace mlglm {

HermiteGrid::HermiteGrid(std::vector<double> nodes, std::vector<double> weights)
    : nodes_(std::move(nodes)), weights_(std::move(weights)) {
  if (nodes_.size() != weights_.size() || nodes_.empty())
    throw std::invalid_argument("HermiteGrid: nodes and weights must be nonempty and equal length");
}

namespace {

// Orthonormal probabilists' Hermite recurrence:
//   p_{k+1}(x) = (x p_k(x) - sqrt(k) p_{k-1}(x)) / sqrt(k+1).
// Returns p_n(x), p_n'(x) and the Christoffel sum sum_{k<n} p_k(x)^2.
struct HermiteEval {
  double value;
  double derivative;
  double christoffel;
};

HermiteEval eval_orthonormal(int n, double x) {
  double prev = 0.0;
  double cur = 1.0;
  double sum = 0.0;
  for (int k = 0; k < n; ++k) {
    sum += cur * cur;
    const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) /
                        std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
  }
  // p_n' = sqrt(n) p_{n-1}
  return {cur, std::sqrt(static_cast<double>(n)) * prev, sum};
}

}  // namespace

HermiteGrid make_grid(int order) {
  if (order < 2 || order > 512)
    throw std::invalid_argument("make_grid: order must lie in [2, 512], got " +
                                std::to_string(order));
  const int n = order;
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi, Eigen::EigenvaluesOnly);
  std::vector<double> nodes(eig.eigenvalues().data(), eig.eigenvalues().data() + n);

  std::vector<double> weights(n);
  for (int i = 0; i < n; ++i) {
    double x = nodes[i];
    for (int it = 0; it < 3; ++it) {
      const auto e = eval_orthonormal(n, x);
      if (!std::isfinite(e.value) || !std::isfinite(e.derivative) || e.derivative == 0.0) break;
      x -= e.value / e.derivative;
    }
    nodes[i] = x;
    weights[i] = 1.0 / eval_orthonormal(n, x).christoffel;
  }

  // Enforce exact symmetry about zero.
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double x = 0.5 * (nodes[j] - nodes[i]);
    const double w = 0.5 * (weights[i] + weights[j]);
    nodes[i] = -x;
    nodes[j] = x;
    weights[i] = weights[j] = w;
  }
  if (n % 2 == 1) nodes[n / 2] = 0.0;

  // Sum pairs from the tails inward so the total is itself symmetric.
  std::vector<double> sorted = weights;
  std::sort(sorted.begin(), sorted.end());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  for (double& w : weights) w /= total;
  return HermiteGrid(std::move(nodes), std::move(weights));
}

const HermiteGrid& default_grid() {
  static const HermiteGrid grid = make_grid(kDefaultGridOrder);
  return grid;
}

HermiteGrid make_dense_grid(int order) {
  if (order < 2 || order > 512)
    throw std::invalid_argument("make_dense_grid: order must lie in [2, 512], got " +
                                std::to_string(order));
  constexpr double kHalfWidth = 12.0;
  const double spacing = 3.2 / order;
  const int half = static_cast<int>(std::ceil(kHalfWidth / spacing));
  std::vector<double> nodes;
  std::vector<double> weights;
  nodes.reserve(2 * half + 1);
  weights.reserve(2 * half + 1);
  for (int i = -half; i <= half; ++i) {
    const double x = i * spacing;
    nodes.push_back(x);
    weights.push_back(std::exp(-0.5 * x * x));
  }
  std::vector<double> sorted = weights;
  std::sort(sorted.begin(), sorted.end());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  for (double& w : weights) w /= total;
  return HermiteGrid(std::move(nodes), std::move(weights));
}

const HermiteGrid& dense_grid(int order) {
  static std::mutex mu;
  static std::map<int, HermiteGrid> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, make_dense_grid(order)).first;
  return it->second;
}

HermiteGrid make_graded_grid(std::span<const double> breakpoints, double width, int order) {
  if (order < 2 || order > 512)
    throw std::invalid_argument("make_graded_grid: order must lie in [2, 512], got " +
                                std::to_string(order));
  if (!(width > 0.0)) throw std::invalid_argument("make_graded_grid: width must be > 0");
  constexpr double kHalfWidth = 9.0;
  constexpr double kMaxPanel = 2.0;
  constexpr double kGrowth = 2.5;

  std::vector<double> edges;
  for (double e = -kHalfWidth; e < kHalfWidth; e += kMaxPanel) edges.push_back(e);
  edges.push_back(kHalfWidth);
  for (double b : breakpoints) {
    if (!(std::abs(b) < kHalfWidth)) continue;
    edges.push_back(b);
    for (double k = width; k < 2.0 * kHalfWidth; k *= kGrowth) {
      if (b - k > -kHalfWidth) edges.push_back(b - k);
      if (b + k < kHalfWidth) edges.push_back(b + k);
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  // Gauss-Legendre on [-1, 1] by Golub-Welsch.
  const int n = std::max(4, order / 6);
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  std::vector<double> gl_x(n);
  std::vector<double> gl_w(n);
  for (int i = 0; i < n; ++i) {
    gl_x[i] = eig.eigenvalues()(i);
    gl_w[i] = 2.0 * eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i);
  }

  std::vector<double> nodes;
  std::vector<double> weights;
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const double mid = 0.5 * (edges[p] + edges[p + 1]);
    const double half = 0.5 * (edges[p + 1] - edges[p]);
    for (int i = 0; i < n; ++i) {
      const double x = mid + half * gl_x[i];
      nodes.push_back(x);
      weights.push_back(half * gl_w[i] * std::exp(-0.5 * x * x));
    }
  }
  std::vector<double> sorted = weights;
  std::sort(sorted.begin(), sorted.end());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  for (double& w : weights) w /= total;
  return HermiteGrid(std::move(nodes), std::move(weights));
}

}  // namespace mlglm
