#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "ilora/data.hpp"
#include "oracles.hpp"

using ilora::Dataset;
using ilora::Matrix;

TEST_CASE("blob means are unit separated") {
  const Matrix mu = ilora::blob_means(4, 6);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < 6; ++j) d2 += std::pow(mu(a, j) - mu(b, j), 2);
      CHECK(std::sqrt(d2) == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  CHECK_THROWS_AS(ilora::blob_means(5, 4), ilora::DimensionError);
}

TEST_CASE("blobs are deterministic per seed and every class is present") {
  const Dataset a = ilora::generate_blobs(3, 20, 5, 0.4, 9);
  const Dataset b = ilora::generate_blobs(3, 20, 5, 0.4, 9);
  CHECK(std::memcmp(a.features.data().data(), b.features.data().data(),
                    a.features.size() * sizeof(double)) == 0);
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 60);
  for (std::size_t c = 0; c < 3; ++c) CHECK(std::count(a.labels.begin(), a.labels.end(), c) == 20);
  CHECK(a.features.all_finite());
  const Dataset other = ilora::generate_blobs(3, 20, 5, 0.4, 10);
  CHECK_FALSE(other.features == a.features);
}

TEST_CASE("vanishing spread is linearly separable") {
  const Dataset ds = ilora::generate_blobs(5, 30, 7, 1e-9, 3);
  // logits x · μ_c: the own class scores 1/2, every other class 0
  const Matrix mu = ilora::blob_means(5, 7);
  const double acc = ilora::accuracy_at(mu, Matrix(1, 5), ilora::FeatureMap::linear(7), ilora::as_batch(ds));
  CHECK(acc == 1.0);
}

TEST_CASE("class sample means converge to the true means") {
  const std::size_t n = 10000;
  const double spread = 0.7;
  const Dataset ds = ilora::generate_blobs(3, n, 4, spread, 5);
  const Matrix mu = ilora::blob_means(3, 4);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> mean(4, 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] != c) continue;
      for (std::size_t j = 0; j < 4; ++j) mean[j] += ds.features(i, j) / static_cast<double>(n);
    }
    double sq = 0.0;
    for (std::size_t j = 0; j < 4; ++j) sq += std::pow(mean[j] - mu(c, j), 2);
    CHECK(std::sqrt(sq / 4.0) <= 3.0 * spread / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("single client partition") {
  const Dataset ds = ilora::generate_blobs(3, 10, 3, 0.5, 1);
  const auto plan = ilora::dirichlet_partition(ds, 1, 0.5, 2);
  CHECK(plan.client_counts == std::vector<std::size_t>{30});
  CHECK(std::all_of(plan.assignments.begin(), plan.assignments.end(), [](std::size_t a) { return a == 0; }));
}

TEST_CASE("partition is a true partition with exact counts") {
  const Dataset ds = ilora::generate_blobs(4, 25, 4, 0.5, 1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (double alpha : {0.05, 0.5, 10.0}) {
      const auto plan = ilora::dirichlet_partition(ds, 7, alpha, seed);
      CHECK(std::accumulate(plan.client_counts.begin(), plan.client_counts.end(), std::size_t{0}) == ds.size());
      CHECK(std::all_of(plan.client_counts.begin(), plan.client_counts.end(), [](std::size_t n) { return n >= 1; }));
      std::vector<int> seen(ds.size(), 0);
      const auto shards = plan.shards();
      for (std::size_t k = 0; k < shards.size(); ++k) {
        CHECK(shards[k].size() == plan.client_counts[k]);
        CHECK(std::is_sorted(shards[k].begin(), shards[k].end()));
        for (std::size_t i : shards[k]) ++seen[i];
      }
      CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
    }
  }
}

TEST_CASE("partition is reproducible") {
  const Dataset ds = ilora::generate_blobs(4, 25, 4, 0.5, 1);
  CHECK(ilora::dirichlet_partition(ds, 5, 0.3, 8).assignments ==
        ilora::dirichlet_partition(ds, 5, 0.3, 8).assignments);
}

TEST_CASE("tiny alpha forces the empty-client repair") {
  const Dataset ds = ilora::generate_blobs(2, 5, 2, 0.5, 1);
  const auto plan = ilora::dirichlet_partition(ds, 10, 1e-4, 3);
  CHECK(plan.client_counts.size() == 10);
  for (std::size_t n : plan.client_counts) CHECK(n == 1);
}

TEST_CASE("near-IID limit gives near-uniform shares") {
  const Dataset ds = ilora::generate_blobs(10, 1000, 10, 0.5, 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto plan = ilora::dirichlet_partition(ds, 10, 1e6, seed);
    for (std::size_t n : plan.client_counts) {
      CHECK(std::abs(static_cast<double>(n) - 1000.0) <= 100.0);
    }
  }
}

TEST_CASE("small alpha lowers label entropy") {
  const Dataset ds = ilora::generate_blobs(5, 100, 5, 0.5, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const double skewed = ilora::mean_label_entropy(ds, ilora::dirichlet_partition(ds, 8, 0.1, seed));
    const double even = ilora::mean_label_entropy(ds, ilora::dirichlet_partition(ds, 8, 1e6, seed));
    CHECK(skewed < even);
  }
}

TEST_CASE("partition argument errors") {
  const Dataset ds = ilora::generate_blobs(2, 3, 2, 0.5, 1);
  CHECK_THROWS_AS(ilora::dirichlet_partition(ds, 7, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(ilora::dirichlet_partition(ds, 0, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(ilora::dirichlet_partition(ds, 2, 0.0, 0), std::invalid_argument);
}

TEST_CASE("gather picks rows in order") {
  const Dataset ds = ilora::generate_blobs(2, 3, 2, 0.5, 1);
  const std::vector<std::size_t> idx{4, 1};
  const auto batch = ilora::gather(ds, idx);
  CHECK(batch.labels == std::vector<std::size_t>{ds.labels[4], ds.labels[1]});
  CHECK(batch.inputs(0, 1) == ds.features(4, 1));
  CHECK_THROWS(ilora::gather(ds, std::vector<std::size_t>{}));
}

TEST_CASE("dataset text format round-trips exactly") {
  const Dataset ds = ilora::generate_blobs(3, 4, 5, 0.3, 2);
  const std::string text = ilora::format_dataset(ds);
  CHECK(text.rfind("12 5 3\n", 0) == 0);
  const Dataset back = ilora::parse_dataset(text);
  CHECK(back.features == ds.features);
  CHECK(back.labels == ds.labels);
  CHECK(back.n_classes == 3);
  CHECK(ilora::format_dataset(back) == text);
}

TEST_CASE("dataset parse errors") {
  CHECK_THROWS(ilora::parse_dataset(""));
  CHECK_THROWS(ilora::parse_dataset("1 2 2\n0.5\n"));
  CHECK_THROWS(ilora::parse_dataset("1 2 2\n0.5 x 1\n"));
  CHECK_THROWS(ilora::parse_dataset("1 2 2\n0.5 0.5 2\n"));
  CHECK_THROWS(ilora::parse_dataset("1 2 2\n0.5 0.5 1\n7\n"));
}
