#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ilora/matrix.hpp"
#include "ilora/model.hpp"

namespace ilora {

struct Dataset {
  Matrix features;  // n × d_in
  std::vector<std::size_t> labels;
  std::size_t n_classes;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const noexcept { return features.cols(); }
};

/// Class centres: e_c / √2, so every pair of centres is exactly one unit apart.
/// Requires d_in >= n_classes.
Matrix blob_means(std::size_t n_classes, std::size_t d_in);

/// Isotropic Gaussian clusters (stddev `spread`) around blob_means, laid out
/// class by class. Deterministic per seed.
Dataset generate_blobs(std::size_t n_classes, std::size_t samples_per_class, std::size_t d_in,
                       double spread, std::uint64_t seed);

struct PartitionPlan {
  std::vector<std::size_t> assignments;    // client index per sample
  std::vector<std::size_t> client_counts;  // n_k
  double alpha;

  std::size_t n_clients() const noexcept { return client_counts.size(); }
  /// Sample indices owned by each client, ascending.
  std::vector<std::vector<std::size_t>> shards() const;
};

/// Per-class Dir(alpha·1) proportions over clients, samples of the class
/// assigned multinomially. Any client left empty takes one sample from the
/// currently largest client (lowest index on ties; its highest sample index).
PartitionPlan dirichlet_partition(const Dataset& ds, std::size_t n_clients, double alpha,
                                  std::uint64_t seed);

/// Rows `indices` of the dataset as a batch.
Batch gather(const Dataset& ds, std::span<const std::size_t> indices);
Batch as_batch(const Dataset& ds);

/// Mean Shannon entropy (nats) of the per-client label histograms.
double mean_label_entropy(const Dataset& ds, const PartitionPlan& plan);

/// Plain-text table: a `n d_in n_classes` header line, then one row per sample
/// holding d_in features followed by the integer label. Round-trips exactly.
std::string format_dataset(const Dataset& ds);
Dataset parse_dataset(std::string_view text);

}  // namespace ilora
