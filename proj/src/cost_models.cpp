#include "rsmf/cost_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>

#include "rsmf/errors.hpp"

namespace rsmf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

// ---------------------------------------------------------------------------
// EdgeSet

bool strongly_connected(int d, std::span<const Edge> edges) {
  if (d <= 0) return false;
  auto reach_all = [&](bool forward) {
    std::vector<char> seen(d, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const int x = stack.back();
      stack.pop_back();
      for (const auto& e : edges) {
        const int from = forward ? e.from : e.to;
        const int to = forward ? e.to : e.from;
        if (from == x && !seen[to]) {
          seen[to] = 1;
          stack.push_back(to);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  };
  return reach_all(true) && reach_all(false);
}

EdgeSet::EdgeSet(int num_states, std::vector<Edge> edges)
    : d_(num_states), edges_(std::move(edges)), lookup_(static_cast<std::size_t>(num_states) * num_states, -1) {
  if (d_ < 2) throw ArgumentError("edge set needs at least two states");
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const auto& e = edges_[i];
    if (e.from < 0 || e.from >= d_ || e.to < 0 || e.to >= d_ || e.from == e.to) {
      throw ArgumentError("invalid edge (" + std::to_string(e.from) + "," + std::to_string(e.to) + ")");
    }
    auto& slot = lookup_[static_cast<std::size_t>(e.from) * d_ + e.to];
    if (slot >= 0) throw ArgumentError("duplicate edge");
    slot = static_cast<int>(i);
  }
  if (!strongly_connected(d_, edges_)) {
    throw ArgumentError("transition graph is not strongly connected");
  }
}

EdgeSet EdgeSet::from_rate_matrix(const std::vector<std::vector<double>>& gamma) {
  const int d = static_cast<int>(gamma.size());
  std::vector<Edge> edges;
  for (int x = 0; x < d; ++x) {
    if (static_cast<int>(gamma[x].size()) != d) throw ArgumentError("rate matrix is not square");
    for (int y = 0; y < d; ++y) {
      if (x != y && gamma[x][y] > 0.0) edges.push_back({x, y});
    }
  }
  return EdgeSet(d, std::move(edges));
}

int EdgeSet::index_of(int x, int y) const {
  if (x < 0 || y < 0 || x >= d_ || y >= d_) return -1;
  return lookup_[static_cast<std::size_t>(x) * d_ + y];
}

std::vector<std::size_t> EdgeSet::cycle_through(std::size_t e) const {
  // Shortest path from edges_[e].to back to edges_[e].from, by BFS.
  const int start = edges_[e].to;
  const int goal = edges_[e].from;
  std::vector<int> via(d_, -1);
  std::vector<char> seen(d_, 0);
  std::queue<int> frontier;
  frontier.push(start);
  seen[start] = 1;
  while (!frontier.empty() && !seen[goal]) {
    const int x = frontier.front();
    frontier.pop();
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      if (edges_[i].from == x && !seen[edges_[i].to]) {
        seen[edges_[i].to] = 1;
        via[edges_[i].to] = static_cast<int>(i);
        frontier.push(edges_[i].to);
      }
    }
  }
  std::vector<std::size_t> path;
  for (int x = goal; x != start; x = edges_[via[x]].from) path.push_back(via[x]);
  std::reverse(path.begin(), path.end());
  path.insert(path.begin(), e);
  return path;
}

// ---------------------------------------------------------------------------
// CostFunction

CostFunction::CostFunction(CostSpec spec) : spec_(std::move(spec)) {
  std::visit(Overloaded{
                 [](const PowerFamily& f) {
                   if (!(f.p >= 1.0) || !(f.q >= 1.0)) throw ArgumentError("power family needs p >= 1 and q >= 1");
                 },
                 [](const LogCost&) {},
                 [](const Tabulated& t) {
                   if (t.u.size() != t.c.size() || t.u.size() < 3) {
                     throw ArgumentError("tabulated cost needs >= 3 matching (u, C) samples");
                   }
                   for (std::size_t i = 0; i < t.u.size(); ++i) {
                     if (!(t.u[i] > 0.0)) throw ArgumentError("tabulated cost samples need u > 0");
                     if (i > 0 && !(t.u[i] > t.u[i - 1])) throw ArgumentError("tabulated u must be strictly increasing");
                     if (!(t.c[i] >= 0.0)) throw ArgumentError("tabulated cost values must be nonnegative");
                   }
                   if (!(t.u.front() < 1.0 && t.u.back() > 1.0)) {
                     throw ArgumentError("tabulated cost must cover u = 1 in the interior of its range");
                   }
                 },
             },
             spec_);
}

double CostFunction::operator()(double u) const {
  return std::visit(Overloaded{
                        [u](const PowerFamily& f) {
                          if (u <= 0.0) return kInf;
                          if (u == 1.0) return 0.0;
                          return 1.0 / (f.p * std::pow(u, f.p)) + std::pow(u, f.q) / f.q - (f.p + f.q) / (f.p * f.q);
                        },
                        [u](const LogCost&) {
                          if (u <= 0.0) return kInf;
                          return -std::log(u) + u - 1.0;
                        },
                        [u](const Tabulated& t) {
                          if (u < t.u.front() || u > t.u.back()) return kInf;
                          const auto it = std::upper_bound(t.u.begin(), t.u.end(), u);
                          if (it == t.u.end()) return t.c.back();
                          const std::size_t i = static_cast<std::size_t>(it - t.u.begin());
                          const double w = (u - t.u[i - 1]) / (t.u[i] - t.u[i - 1]);
                          return (1.0 - w) * t.c[i - 1] + w * t.c[i];
                        },
                    },
                    spec_);
}

double CostFunction::derivative(double u) const {
  return std::visit(Overloaded{
                        [u](const PowerFamily& f) { return -std::pow(u, -f.p - 1.0) + std::pow(u, f.q - 1.0); },
                        [u](const LogCost&) { return 1.0 - 1.0 / u; },
                        [this, u](const Tabulated& t) {
                          // Step adapted to the local sample spacing, shrunk near the range ends.
                          const auto it = std::lower_bound(t.u.begin(), t.u.end(), u);
                          std::size_t i = static_cast<std::size_t>(it - t.u.begin());
                          i = std::clamp<std::size_t>(i, 1, t.u.size() - 1);
                          double h = t.u[i] - t.u[i - 1];
                          if (i + 1 < t.u.size()) h = std::min(h, t.u[i + 1] - t.u[i]);
                          h = std::min({h, u - t.u.front(), t.u.back() - u});
                          if (h <= 0.0) {
                            // At a range end: one-sided difference over the first/last interval.
                            const std::size_t j = u <= t.u.front() ? 1 : t.u.size() - 1;
                            return (t.c[j] - t.c[j - 1]) / (t.u[j] - t.u[j - 1]);
                          }
                          return ((*this)(u + h) - (*this)(u - h)) / (2.0 * h);
                        },
                    },
                    spec_);
}

std::optional<double> CostFunction::second_derivative(double u) const {
  return std::visit(Overloaded{
                        [u](const PowerFamily& f) -> std::optional<double> {
                          return (f.p + 1.0) * std::pow(u, -f.p - 2.0) + (f.q - 1.0) * std::pow(u, f.q - 2.0);
                        },
                        [u](const LogCost&) -> std::optional<double> { return 1.0 / (u * u); },
                        [](const Tabulated&) -> std::optional<double> { return std::nullopt; },
                    },
                    spec_);
}

std::pair<double, double> CostFunction::finite_interval() const {
  return std::visit(Overloaded{
                        [](const PowerFamily&) { return std::pair{0.0, kInf}; },
                        [](const LogCost&) { return std::pair{0.0, kInf}; },
                        [](const Tabulated& t) { return std::pair{t.u.front(), t.u.back()}; },
                    },
                    spec_);
}

std::string CostFunction::name() const {
  return std::visit(Overloaded{
                        [](const PowerFamily& f) {
                          std::ostringstream os;
                          os.precision(17);
                          os << "power(p=" << f.p << ",q=" << f.q << ")";
                          return os.str();
                        },
                        [](const LogCost&) { return std::string("log"); },
                        [](const Tabulated& t) { return "tabulated(" + std::to_string(t.u.size()) + " samples)"; },
                    },
                    spec_);
}

// ---------------------------------------------------------------------------
// RewardSpec

double RewardSpec::operator()(std::span<const double> m) const {
  return std::visit(Overloaded{
                        [](const ConstantReward& r) { return r.value; },
                        [m](const AffineReward& r) {
                          double s = r.offset;
                          for (std::size_t i = 0; i < m.size(); ++i) s += r.weights[i] * m[i];
                          return std::max(s, 0.0);
                        },
                        [m](const RadialReward& r) {
                          double s = 0.0;
                          for (std::size_t i = 0; i < m.size(); ++i) s += (m[i] - r.center[i]) * (m[i] - r.center[i]);
                          return r.scale * std::sqrt(s);
                        },
                    },
                    kind_);
}

void RewardSpec::validate(int d) const {
  std::visit(Overloaded{
                 [](const ConstantReward& r) {
                   if (!(r.value >= 0.0)) throw ArgumentError("constant reward must be >= 0");
                 },
                 [d](const AffineReward& r) {
                   if (static_cast<int>(r.weights.size()) != d) throw ArgumentError("affine reward weight count != d");
                   // Minimum of an affine function over the simplex sits at a vertex.
                   const double lo = r.offset + *std::min_element(r.weights.begin(), r.weights.end());
                   if (lo < 0.0) throw ArgumentError("affine reward is negative at a simplex vertex");
                 },
                 [d](const RadialReward& r) {
                   if (static_cast<int>(r.center.size()) != d) throw ArgumentError("radial reward center has wrong dimension");
                   if (!(r.scale >= 0.0)) throw ArgumentError("radial reward scale must be >= 0");
                 },
             },
             kind_);
}

double RewardSpec::max_over_simplex(int d) const {
  double best = 0.0;
  std::vector<double> vertex(d, 0.0);
  for (int i = 0; i < d; ++i) {
    std::fill(vertex.begin(), vertex.end(), 0.0);
    vertex[i] = 1.0;
    best = std::max(best, (*this)(vertex));
  }
  return best;
}

// ---------------------------------------------------------------------------
// CostModel

CostModel::CostModel(EdgeSet edges, std::vector<double> gamma, std::vector<CostFunction> costs,
                     RewardSpec reward, std::optional<double> tail_exponent_p)
    : edges_(std::move(edges)),
      gamma_(std::move(gamma)),
      costs_(std::move(costs)),
      reward_(std::move(reward)),
      tail_p_(tail_exponent_p) {
  if (gamma_.size() != edges_.size() || costs_.size() != edges_.size()) {
    throw ArgumentError("per-edge rates and costs must match the edge count");
  }
  for (double g : gamma_) {
    if (!(g > 0.0) || !std::isfinite(g)) throw ArgumentError("nominal rates must be positive and finite");
  }
  for (const auto& c : costs_) {
    if (c(1.0) != 0.0) throw ArgumentError("cost " + c.name() + " does not vanish at u = 1");
  }
  if (tail_p_ && !(*tail_p_ > 0.0)) throw ArgumentError("tail exponent p must be positive");
  reward_.validate(edges_.num_states());
}

CostModel CostModel::uniform(EdgeSet edges, std::vector<double> gamma, const CostSpec& cost,
                             RewardSpec reward, std::optional<double> tail_exponent_p) {
  std::vector<CostFunction> costs(edges.size(), CostFunction(cost));
  return CostModel(std::move(edges), std::move(gamma), std::move(costs), std::move(reward), tail_exponent_p);
}

double CostModel::gamma_min() const { return *std::min_element(gamma_.begin(), gamma_.end()); }
double CostModel::gamma_max() const { return *std::max_element(gamma_.begin(), gamma_.end()); }

CostModel CostModel::with_reward(RewardSpec reward) const {
  CostModel copy = *this;
  reward.validate(num_states());
  copy.reward_ = std::move(reward);
  return copy;
}

// ---------------------------------------------------------------------------
// Scalar operations

double entropy_integrand(double q) {
  if (q < 0.0 || std::isnan(q)) throw DomainError("entropy integrand needs q >= 0");
  if (q == 0.0) return 1.0;
  return q * std::log(q) - q + 1.0;
}

DualGradientSample legendre_dual(const CostModel& model, std::size_t edge, double z) {
  if (!(z < 1.0)) throw DomainError("convex conjugate is only defined for z < 1");
  const CostFunction& c = model.cost(edge);
  if (z == 0.0) return {0.0, 0.0, 1.0, Attainment::interior};

  const auto objective = [&](double u) { return z * u - c(u); };
  UnimodalSearchOptions opts;
  opts.upper_ratio = 1e12;
  const UnimodalMax found = maximize_unimodal(objective, 1.0, opts);
  DualGradientSample out{z, found.value, found.argmax, found.status};
  if (found.status == Attainment::divergent) {
    out.value = kInf;
    return out;
  }
  if (found.status != Attainment::interior) return out;

  // Newton polish on C'(u) = z, kept only while it stays inside the bracket and helps.
  double u = found.argmax;
  for (int k = 0; k < 5; ++k) {
    const auto c2 = c.second_derivative(u);
    if (!c2 || !(*c2 > 0.0)) break;
    const double r = c.derivative(u) - z;
    const double next = u - r / *c2;
    if (!(next > found.bracket_lo && next < found.bracket_hi)) break;
    if (std::abs(c.derivative(next) - z) >= std::abs(r)) break;
    u = next;
  }
  const double v = objective(u);
  if (v >= out.value) {
    out.maximizer = u;
    out.value = v;
  }
  return out;
}

double transformed_cost_integrand(const CostModel& model, std::size_t edge, double u, double q) {
  if (!(u > 0.0)) throw DomainError("transformed cost integrand needs u > 0");
  if (q < 0.0) throw DomainError("transformed cost integrand needs q >= 0");
  const double g = model.gamma(edge);
  const double relative = q == 0.0 ? u : q * std::log(q / u) - q + u;
  return relative - g * model.cost(edge)(u / g);
}

TransformedCost transformed_cost(const CostModel& model, std::size_t edge, double q) {
  if (q < 0.0 || std::isnan(q)) throw DomainError("transformed cost needs q >= 0");
  const double g = model.gamma(edge);
  const CostFunction& c = model.cost(edge);
  const auto objective = [&](double u) { return transformed_cost_integrand(model, edge, u, q); };
  const UnimodalMax found = maximize_unimodal(objective, g);
  TransformedCost out{found.value, found.argmax, found.status};
  if (found.status == Attainment::divergent) {
    out.value = kInf;
    return out;
  }
  if (found.status != Attainment::interior || q == 0.0) return out;

  // Stationarity: v C'(v) - v + q/g = 0 at v = u/g.
  double v = found.argmax / g;
  for (int k = 0; k < 5; ++k) {
    const auto c2 = c.second_derivative(v);
    if (!c2) break;
    const double c1 = c.derivative(v);
    const double s = v * c1 - v + q / g;
    const double ds = c1 + v * *c2 - 1.0;
    if (!(ds > 0.0)) break;
    const double next = v - s / ds;
    if (!(next * g > found.bracket_lo && next * g < found.bracket_hi)) break;
    v = next;
  }
  const double polished = objective(v * g);
  if (polished >= out.value) {
    out.value = polished;
    out.maximizer = v * g;
  }
  return out;
}

double hamiltonian(const CostModel& model, std::span<const double> m, std::span<const double> xi) {
  if (xi.size() != model.num_edges()) throw ArgumentError("hamiltonian: xi size != edge count");
  double total = 0.0;
  for (std::size_t e = 0; e < model.num_edges(); ++e) {
    const double mx = m[model.edges()[e].from];
    if (mx == 0.0) continue;
    const double z = -std::expm1(-xi[e]);
    if (!(z < 1.0)) return kInf;
    const DualGradientSample dual = legendre_dual(model, e, z);
    if (dual.unbounded()) return kInf;
    total += mx * model.gamma(e) * dual.value;
  }
  return total;
}

OptimalPair optimal_pair(const CostModel& model, std::size_t edge, double xi) {
  if (!std::isfinite(xi)) throw DomainError("optimal pair needs a finite gradient");
  const double g = model.gamma(edge);
  const double z = -std::expm1(-xi);
  if (!(z < 1.0)) return {kInf, kInf, Attainment::divergent};
  const DualGradientSample dual = legendre_dual(model, edge, z);
  const double u = g * dual.maximizer;
  return {u, u * std::exp(-xi), dual.status};
}

}  // namespace rsmf
