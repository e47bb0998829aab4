#include "ilora/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ilora {

namespace {

// Updates sorted by client id; rejects empty input, duplicates, bad counts
// and mismatched d × k.
std::vector<const ClientUpdate*> ordered(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw std::invalid_argument("aggregation: no client updates");
  std::vector<const ClientUpdate*> out;
  out.reserve(updates.size());
  for (const auto& u : updates) out.push_back(&u);
  std::sort(out.begin(), out.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
  const std::size_t d = out.front()->adapter.out_dim();
  const std::size_t k = out.front()->adapter.in_dim();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const ClientUpdate& u = *out[i];
    if (i > 0 && out[i - 1]->client_id == u.client_id) {
      throw std::invalid_argument("aggregation: duplicate client id " +
                                  std::to_string(u.client_id));
    }
    if (u.sample_count == 0) {
      throw std::invalid_argument("aggregation: client " + std::to_string(u.client_id) +
                                  " reported zero samples");
    }
    if (u.adapter.out_dim() != d || u.adapter.in_dim() != k) {
      throw DimensionError("aggregation: client " + std::to_string(u.client_id) + " is " +
                           std::to_string(u.adapter.out_dim()) + "x" +
                           std::to_string(u.adapter.in_dim()) + ", expected " +
                           std::to_string(d) + "x" + std::to_string(k));
    }
  }
  return out;
}

std::vector<double> weights_of(const std::vector<const ClientUpdate*>& sorted) {
  std::size_t total = 0;
  for (const auto* u : sorted) total += u->sample_count;
  std::vector<double> p;
  p.reserve(sorted.size());
  for (const auto* u : sorted) {
    p.push_back(static_cast<double>(u->sample_count) / static_cast<double>(total));
  }
  return p;
}

}  // namespace

std::vector<double> sample_weights(std::span<const ClientUpdate> updates) {
  return weights_of(ordered(updates));
}

StackedFactors stack_factors(std::span<const ClientUpdate> updates) {
  const auto sorted = ordered(updates);
  const auto p = weights_of(sorted);
  std::vector<Matrix> bs;
  std::vector<Matrix> as;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    bs.push_back(sorted[i]->adapter.b());
    as.push_back((p[i] * sorted[i]->adapter.scaling()) * sorted[i]->adapter.a());
  }
  return {hstack(bs), vstack(as)};
}

Matrix concat_reconstruct(std::span<const ClientUpdate> updates) {
  const StackedFactors s = stack_factors(updates);
  return matmul(s.b_stack, s.a_stack);
}

AggregationResult qr_compress(const Matrix& delta, std::size_t server_rank) {
  const std::size_t max_rank = std::min(delta.rows(), delta.cols());
  if (server_rank == 0 || server_rank > max_rank) {
    throw RankError("qr_compress: server rank " + std::to_string(server_rank) +
                    " outside [1, " + std::to_string(max_rank) + "]");
  }
  QrFactors qr = thin_qr(delta);
  LoraAdapter server = adapter_from_slices(qr.q, qr.r, server_rank);
  const double truncation = trailing_rows_norm(qr.r, server_rank);

  const double residual = frobenius_norm(delta - server.delta());
  if (!(std::abs(residual - truncation) <= 1e-9 * (1.0 + frobenius_norm(delta)))) {
    throw std::logic_error("qr_compress: residual " + std::to_string(residual) +
                           " disagrees with trailing R norm " + std::to_string(truncation));
  }
  return {std::move(qr.q), std::move(qr.r), std::move(server), truncation, delta};
}

LoraAdapter personalize(const AggregationResult& result, std::size_t client_rank,
                        double scaling) {
  if (client_rank == 0 || client_rank > result.q.cols()) {
    throw RankError("personalize: client rank " + std::to_string(client_rank) +
                    " outside [1, " + std::to_string(result.q.cols()) + "]");
  }
  return adapter_from_slices(result.q, result.r, client_rank, scaling);
}

Matrix apply_global(const Matrix& anchor, const AggregationResult& result, double global_scale) {
  const LoraAdapter& s = result.server_adapter;
  if (anchor.rows() != s.out_dim() || anchor.cols() != s.in_dim()) {
    throw DimensionError("apply_global: anchor " + anchor.shape_string() +
                         " vs aggregated update " + std::to_string(s.out_dim()) + "x" +
                         std::to_string(s.in_dim()));
  }
  return anchor + global_scale * s.delta();
}

AveragedFactors average_factors(std::span<const ClientUpdate> updates) {
  const auto sorted = ordered(updates);
  const std::size_t rank = sorted.front()->adapter.rank();
  for (const auto* u : sorted) {
    if (u->adapter.rank() != rank) {
      throw RankIncompatibleError("rank-incompatible baseline: client " +
                                  std::to_string(u->client_id) + " has rank " +
                                  std::to_string(u->adapter.rank()) + ", expected " +
                                  std::to_string(rank));
    }
  }
  const auto p = weights_of(sorted);
  const LoraAdapter& first = sorted.front()->adapter;
  Matrix b(first.out_dim(), rank);
  Matrix a(rank, first.in_dim());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    b += p[i] * sorted[i]->adapter.b();
    a += (p[i] * sorted[i]->adapter.scaling()) * sorted[i]->adapter.a();
  }
  return {std::move(b), std::move(a)};
}

Matrix baseline_factor_average(std::span<const ClientUpdate> updates) {
  const AveragedFactors f = average_factors(updates);
  return matmul(f.b, f.a);
}

AveragedFactors zero_pad_factors(std::span<const ClientUpdate> updates,
                                 std::size_t target_rank) {
  const auto sorted = ordered(updates);
  std::vector<ClientUpdate> padded;
  padded.reserve(sorted.size());
  for (const auto* u : sorted) {
    if (u->adapter.rank() > target_rank) {
      throw RankError("zero_pad: target rank " + std::to_string(target_rank) +
                      " below client " + std::to_string(u->client_id) + " rank " +
                      std::to_string(u->adapter.rank()));
    }
    const LoraAdapter& ad = u->adapter;
    if (target_rank > std::min(ad.out_dim(), ad.in_dim())) {
      throw RankError("zero_pad: target rank " + std::to_string(target_rank) +
                      " exceeds min(d, k)");
    }
    LoraAdapter wide(zero_pad(ad.b(), ad.out_dim(), target_rank),
                     zero_pad(ad.a(), target_rank, ad.in_dim()), ad.scaling());
    padded.push_back({u->client_id, std::move(wide), u->sample_count, std::nullopt});
  }
  return average_factors(padded);
}

Matrix baseline_zero_pad(std::span<const ClientUpdate> updates, std::size_t target_rank) {
  const AveragedFactors f = zero_pad_factors(updates, target_rank);
  return matmul(f.b, f.a);
}

StackedFactors baseline_full_stack(std::span<const ClientUpdate> updates) {
  return stack_factors(updates);
}

}  // namespace ilora
