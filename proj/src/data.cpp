#include "ilora/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ilora/random.hpp"

namespace ilora {

Matrix blob_means(std::size_t n_classes, std::size_t d_in) {
  if (n_classes < 2) throw std::invalid_argument("blob_means: need at least two classes");
  if (d_in < n_classes) {
    throw DimensionError("blob_means: d_in (" + std::to_string(d_in) +
                         ") must be >= n_classes (" + std::to_string(n_classes) + ")");
  }
  Matrix means(n_classes, d_in);
  const double h = 1.0 / std::sqrt(2.0);
  for (std::size_t c = 0; c < n_classes; ++c) means(c, c) = h;
  return means;
}

Dataset generate_blobs(std::size_t n_classes, std::size_t samples_per_class, std::size_t d_in,
                       double spread, std::uint64_t seed) {
  if (samples_per_class == 0) throw std::invalid_argument("generate_blobs: no samples");
  if (!(spread >= 0.0)) throw std::invalid_argument("generate_blobs: spread must be >= 0");
  const Matrix means = blob_means(n_classes, d_in);
  Rng rng = make_rng({seed, 0xb10b5ULL});
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t n = n_classes * samples_per_class;
  Matrix features(n, d_in);
  std::vector<std::size_t> labels(n);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t s = 0; s < samples_per_class; ++s) {
      const std::size_t i = c * samples_per_class + s;
      labels[i] = c;
      for (std::size_t j = 0; j < d_in; ++j) features(i, j) = means(c, j) + spread * noise(rng);
    }
  }
  return {std::move(features), std::move(labels), n_classes};
}

std::vector<std::vector<std::size_t>> PartitionPlan::shards() const {
  std::vector<std::vector<std::size_t>> out(client_counts.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k].reserve(client_counts[k]);
  for (std::size_t i = 0; i < assignments.size(); ++i) out[assignments[i]].push_back(i);
  return out;
}

PartitionPlan dirichlet_partition(const Dataset& ds, std::size_t n_clients, double alpha,
                                  std::uint64_t seed) {
  if (n_clients == 0) throw std::invalid_argument("dirichlet_partition: n_clients must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be > 0");
  if (n_clients > ds.size()) {
    throw std::invalid_argument("dirichlet_partition: " + std::to_string(n_clients) +
                                " clients for " + std::to_string(ds.size()) + " samples");
  }
  Rng rng = make_rng({seed, 0xd1c1ULL});
  std::gamma_distribution<double> gamma(alpha, 1.0);

  PartitionPlan plan{std::vector<std::size_t>(ds.size()),
                     std::vector<std::size_t>(n_clients, 0), alpha};

  for (std::size_t c = 0; c < ds.n_classes; ++c) {
    std::vector<double> props(n_clients);
    double total = 0.0;
    for (double& p : props) {
      p = gamma(rng);
      total += p;
    }
    if (!(total > 0.0)) {
      // every gamma draw underflowed: the Dirichlet mass sits on one vertex
      std::uniform_int_distribution<std::size_t> pick(0, n_clients - 1);
      std::fill(props.begin(), props.end(), 0.0);
      props[pick(rng)] = 1.0;
    }
    std::discrete_distribution<std::size_t> choose(props.begin(), props.end());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] != c) continue;
      const std::size_t k = choose(rng);
      plan.assignments[i] = k;
      ++plan.client_counts[k];
    }
  }

  for (std::size_t k = 0; k < n_clients; ++k) {
    if (plan.client_counts[k] != 0) continue;
    const auto largest = static_cast<std::size_t>(
        std::max_element(plan.client_counts.begin(), plan.client_counts.end()) -
        plan.client_counts.begin());
    for (std::size_t i = ds.size(); i-- > 0;) {
      if (plan.assignments[i] == largest) {
        plan.assignments[i] = k;
        break;
      }
    }
    --plan.client_counts[largest];
    ++plan.client_counts[k];
  }
  return plan;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("gather: empty index set");
  Matrix x(indices.size(), ds.input_dim());
  std::vector<std::size_t> y(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = ds.features.row(indices[r]);
    std::copy(src.begin(), src.end(), x.row(r).begin());
    y[r] = ds.labels[indices[r]];
  }
  return Batch(std::move(x), std::move(y));
}

Batch as_batch(const Dataset& ds) { return Batch(ds.features, ds.labels); }

double mean_label_entropy(const Dataset& ds, const PartitionPlan& plan) {
  std::vector<std::vector<double>> hist(plan.n_clients(), std::vector<double>(ds.n_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) hist[plan.assignments[i]][ds.labels[i]] += 1.0;
  double total = 0.0;
  for (std::size_t k = 0; k < plan.n_clients(); ++k) {
    const double n = static_cast<double>(plan.client_counts[k]);
    double h = 0.0;
    for (double count : hist[k]) {
      if (count > 0.0) h -= (count / n) * std::log(count / n);
    }
    total += h;
  }
  return total / static_cast<double>(plan.n_clients());
}

std::string format_dataset(const Dataset& ds) {
  std::ostringstream os;
  os << ds.size() << ' ' << ds.input_dim() << ' ' << ds.n_classes << '\n';
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double x : ds.features.row(i)) {
      const auto res = std::to_chars(buf, buf + sizeof buf, x);
      os.write(buf, res.ptr - buf);
      os << ' ';
    }
    os << ds.labels[i] << '\n';
  }
  return os.str();
}

Dataset parse_dataset(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::size_t n = 0, d = 0, classes = 0;
  if (!(is >> n >> d >> classes) || n == 0 || d == 0 || classes == 0) {
    throw std::invalid_argument("parse_dataset: bad header");
  }
  Matrix features(n, d);
  std::vector<std::size_t> labels(n);
  std::string token;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (!(is >> token)) throw std::invalid_argument("parse_dataset: truncated row " + std::to_string(i));
      double value = 0.0;
      const auto res = std::from_chars(token.data(), token.data() + token.size(), value);
      if (res.ec != std::errc{} || res.ptr != token.data() + token.size()) {
        throw std::invalid_argument("parse_dataset: bad number '" + token + "' in row " +
                                    std::to_string(i));
      }
      features(i, j) = value;
    }
    if (!(is >> labels[i]) || labels[i] >= classes) {
      throw std::invalid_argument("parse_dataset: bad label in row " + std::to_string(i));
    }
  }
  if (is >> token) throw std::invalid_argument("parse_dataset: trailing data");
  return {std::move(features), std::move(labels), classes};
}

}  // namespace ilora
