#include "duw/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "duw/error.hpp"
#include "duw/rng.hpp"

namespace duw {

namespace {

std::vector<std::vector<int>> rows_by_class(const ImageSet& set, int num_classes) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < set.size(); ++i) {
    const int y = set.labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < num_classes, "input-shape", "label outside the class set");
    out[static_cast<std::size_t>(y)].push_back(i);
  }
  return out;
}

// Splits `rows` into `parts` contiguous chunks whose sizes differ by at most one.
std::vector<std::vector<int>> split_even(const std::vector<int>& rows, int parts) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(parts));
  const std::size_t n = rows.size();
  for (int p = 0; p < parts; ++p) {
    const std::size_t lo = n * static_cast<std::size_t>(p) / static_cast<std::size_t>(parts);
    const std::size_t hi = n * static_cast<std::size_t>(p + 1) / static_cast<std::size_t>(parts);
    out[static_cast<std::size_t>(p)].assign(rows.begin() + static_cast<std::ptrdiff_t>(lo),
                                            rows.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  return out;
}

// Test rows of every class are split evenly among the clients owning it.
void distribute_test(const LabeledDataset& ds, std::vector<ClientDataset>& clients, Rng& rng) {
  auto by_class = rows_by_class(ds.test, ds.num_classes);
  std::vector<std::vector<int>> test_rows(clients.size());
  for (int c = 0; c < ds.num_classes; ++c) {
    std::vector<int> owners;
    for (const auto& cl : clients)
      if (std::binary_search(cl.classes.begin(), cl.classes.end(), c)) owners.push_back(cl.client_id);
    if (owners.empty()) continue;
    auto rows = by_class[static_cast<std::size_t>(c)];
    std::shuffle(rows.begin(), rows.end(), rng);
    auto parts = split_even(rows, static_cast<int>(owners.size()));
    for (std::size_t o = 0; o < owners.size(); ++o) {
      auto& dst = test_rows[static_cast<std::size_t>(owners[o])];
      dst.insert(dst.end(), parts[o].begin(), parts[o].end());
    }
  }
  for (auto& cl : clients) {
    auto& rows = test_rows[static_cast<std::size_t>(cl.client_id)];
    std::sort(rows.begin(), rows.end());
    cl.test = ds.test.subset(rows);
  }
}

std::vector<int> present_classes(const ImageSet& set) {
  std::set<int> s(set.labels.begin(), set.labels.end());
  return {s.begin(), s.end()};
}

}  // namespace

std::vector<ClientDataset> partition_by_class(const LabeledDataset& ds, int num_clients, int classes_per_client,
                                              std::uint64_t seed) {
  require(num_clients >= 1, "invalid-argument", "need at least one client");
  require(classes_per_client >= 1 && classes_per_client <= ds.num_classes, "invalid-argument",
          "classes_per_client must lie in [1, num_classes]");
  require(num_clients <= ds.train.size(), "insufficient-data",
          std::to_string(num_clients) + " clients for " + std::to_string(ds.train.size()) + " samples");
  Rng rng = make_rng(seed, {stream::partition, 0});

  // Class draws come from concatenated shuffled permutations so that every
  // class is covered once num_clients * classes_per_client >= num_classes.
  std::vector<int> pool;
  std::vector<std::vector<int>> assigned(static_cast<std::size_t>(num_clients));
  for (auto& cls : assigned) {
    while (static_cast<int>(cls.size()) < classes_per_client) {
      if (pool.empty()) {
        pool.resize(static_cast<std::size_t>(ds.num_classes));
        std::iota(pool.begin(), pool.end(), 0);
        std::shuffle(pool.begin(), pool.end(), rng);
      }
      auto it = std::find_if(pool.begin(), pool.end(),
                             [&](int c) { return std::find(cls.begin(), cls.end(), c) == cls.end(); });
      if (it == pool.end()) {
        pool.clear();
        continue;
      }
      cls.push_back(*it);
      pool.erase(it);
    }
    std::sort(cls.begin(), cls.end());
  }

  auto by_class = rows_by_class(ds.train, ds.num_classes);
  std::vector<std::vector<int>> train_rows(static_cast<std::size_t>(num_clients));
  for (int c = 0; c < ds.num_classes; ++c) {
    std::vector<int> owners;
    for (int k = 0; k < num_clients; ++k)
      if (std::binary_search(assigned[static_cast<std::size_t>(k)].begin(), assigned[static_cast<std::size_t>(k)].end(), c))
        owners.push_back(k);
    if (owners.empty()) continue;
    auto rows = by_class[static_cast<std::size_t>(c)];
    std::shuffle(rows.begin(), rows.end(), rng);
    auto parts = split_even(rows, static_cast<int>(owners.size()));
    for (std::size_t o = 0; o < owners.size(); ++o) {
      auto& dst = train_rows[static_cast<std::size_t>(owners[o])];
      dst.insert(dst.end(), parts[o].begin(), parts[o].end());
    }
  }

  std::vector<ClientDataset> clients(static_cast<std::size_t>(num_clients));
  for (int k = 0; k < num_clients; ++k) {
    auto& rows = train_rows[static_cast<std::size_t>(k)];
    require(!rows.empty(), "insufficient-data", "client " + std::to_string(k) + " received no samples");
    std::sort(rows.begin(), rows.end());
    auto& cl = clients[static_cast<std::size_t>(k)];
    cl.client_id = k;
    cl.train = ds.train.subset(rows);
    cl.classes = assigned[static_cast<std::size_t>(k)];
    cl.domain_tag = ds.domain;
  }
  distribute_test(ds, clients, rng);
  return clients;
}

std::vector<ClientDataset> partition_dirichlet(const LabeledDataset& ds, int num_clients, double alpha,
                                               std::uint64_t seed) {
  require(num_clients >= 1, "invalid-argument", "need at least one client");
  require(alpha > 0, "invalid-argument", "Dirichlet concentration must be positive");
  require(num_clients <= ds.train.size(), "insufficient-data",
          std::to_string(num_clients) + " clients for " + std::to_string(ds.train.size()) + " samples");
  Rng rng = make_rng(seed, {stream::partition, 1});
  const auto by_class = rows_by_class(ds.train, ds.num_classes);

  std::vector<std::vector<int>> train_rows;
  constexpr int max_attempts = 1000;
  for (int attempt = 0;; ++attempt) {
    require(attempt < max_attempts, "insufficient-data", "could not draw a partition without empty clients");
    train_rows.assign(static_cast<std::size_t>(num_clients), {});
    std::gamma_distribution<double> gamma(alpha, 1.0);
    for (int c = 0; c < ds.num_classes; ++c) {
      auto rows = by_class[static_cast<std::size_t>(c)];
      if (rows.empty()) continue;
      std::shuffle(rows.begin(), rows.end(), rng);
      std::vector<double> p(static_cast<std::size_t>(num_clients));
      double total = 0;
      for (auto& v : p) total += (v = gamma(rng));
      double cum = 0;
      std::size_t start = 0;
      for (int k = 0; k < num_clients; ++k) {
        cum += p[static_cast<std::size_t>(k)] / total;
        const std::size_t end = k + 1 == num_clients ? rows.size()
                                                     : std::min(rows.size(), static_cast<std::size_t>(std::llround(cum * double(rows.size()))));
        auto& dst = train_rows[static_cast<std::size_t>(k)];
        dst.insert(dst.end(), rows.begin() + static_cast<std::ptrdiff_t>(start), rows.begin() + static_cast<std::ptrdiff_t>(std::max(start, end)));
        start = std::max(start, end);
      }
    }
    if (std::none_of(train_rows.begin(), train_rows.end(), [](const auto& r) { return r.empty(); })) break;
  }

  std::vector<ClientDataset> clients(static_cast<std::size_t>(num_clients));
  for (int k = 0; k < num_clients; ++k) {
    auto& rows = train_rows[static_cast<std::size_t>(k)];
    std::sort(rows.begin(), rows.end());
    auto& cl = clients[static_cast<std::size_t>(k)];
    cl.client_id = k;
    cl.train = ds.train.subset(rows);
    cl.classes = present_classes(cl.train);
    cl.domain_tag = ds.domain;
  }
  distribute_test(ds, clients, rng);
  return clients;
}

std::vector<ClientDataset> multi_domain_assign(const std::map<std::string, LabeledDataset>& domains,
                                               int clients_per_domain, std::uint64_t seed) {
  require(!domains.empty(), "insufficient-data", "no domains given");
  require(clients_per_domain >= 1, "invalid-argument", "need at least one client per domain");
  std::vector<ClientDataset> clients;
  for (const auto& [tag, ds] : domains) {
    require(ds.train.size() >= clients_per_domain, "insufficient-data",
            "domain '" + tag + "' has " + std::to_string(ds.train.size()) + " samples for " +
                std::to_string(clients_per_domain) + " clients");
    Rng rng = make_rng(seed, {stream::partition, 2, hash_string(tag)});
    std::vector<int> rows(static_cast<std::size_t>(ds.train.size()));
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    std::vector<int> test_rows(static_cast<std::size_t>(ds.test.size()));
    std::iota(test_rows.begin(), test_rows.end(), 0);
    std::shuffle(test_rows.begin(), test_rows.end(), rng);
    auto parts = split_even(rows, clients_per_domain);
    auto test_parts = split_even(test_rows, clients_per_domain);
    for (int j = 0; j < clients_per_domain; ++j) {
      auto& tr = parts[static_cast<std::size_t>(j)];
      auto& te = test_parts[static_cast<std::size_t>(j)];
      std::sort(tr.begin(), tr.end());
      std::sort(te.begin(), te.end());
      ClientDataset cl;
      cl.client_id = static_cast<int>(clients.size());
      cl.train = ds.train.subset(tr);
      cl.test = ds.test.subset(te);
      cl.classes = present_classes(cl.train);
      cl.domain_tag = tag;
      clients.push_back(std::move(cl));
    }
  }
  return clients;
}

Holdout holdout_validation(const ImageSet& dataset, double fraction, std::uint64_t seed) {
  require(fraction > 0 && fraction < 1, "invalid-argument", "validation fraction must lie in (0, 1)");
  Rng rng = make_rng(seed, {stream::partition, 3});
  std::vector<std::vector<int>> groups;
  if (dataset.labeled()) {
    const int classes = *std::max_element(dataset.labels.begin(), dataset.labels.end()) + 1;
    groups = rows_by_class(dataset, classes);
  } else {
    groups.emplace_back(static_cast<std::size_t>(dataset.size()));
    std::iota(groups[0].begin(), groups[0].end(), 0);
  }
  // Largest-remainder apportionment keeps every class within one sample of
  // its exact share and the total within one of fraction * n.
  const auto total = static_cast<std::size_t>(std::llround(fraction * dataset.size()));
  std::vector<std::size_t> take(groups.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double exact = fraction * double(groups[g].size());
    take[g] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[g];
    remainders.push_back({exact - std::floor(exact), g});
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i, ++assigned) ++take[remainders[i].second];

  std::vector<int> train, val;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto rows = groups[g];
    std::shuffle(rows.begin(), rows.end(), rng);
    val.insert(val.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take[g]));
    train.insert(train.end(), rows.begin() + static_cast<std::ptrdiff_t>(take[g]), rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {dataset.subset(train), dataset.subset(val)};
}

OodSource parse_ood_source(const std::string& name) {
  if (name == "held-out-domain") return OodSource::held_out_domain;
  if (name == "random-noise") return OodSource::random_noise;
  if (name == "jigsaw") return OodSource::jigsaw;
  fail("invalid-argument", "unknown OoD source '" + name + "'");
}

std::string to_string(OodSource s) {
  switch (s) {
    case OodSource::held_out_domain: return "held-out-domain";
    case OodSource::random_noise: return "random-noise";
    case OodSource::jigsaw: return "jigsaw";
  }
  return "unknown";
}

RowMatrix<float> reflect_tile(const RowMatrix<float>& tile, const ImageShape& ts, const ImageShape& out) {
  require(ts.channels == out.channels, "input-shape", "tile and image channel counts differ");
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    const int r = i % period;
    return r < n ? r : period - r;
  };
  RowMatrix<float> img(tile.rows(), out.size());
  for (Index s = 0; s < tile.rows(); ++s)
    for (int c = 0; c < out.channels; ++c)
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
          img(s, c * out.plane() + y * out.width + x) =
              tile(s, c * ts.plane() + reflect(y, ts.height) * ts.width + reflect(x, ts.width));
  return img;
}

OodPool make_ood_pool(const OodRequest& req, std::uint64_t seed) {
  require(req.size >= 1, "invalid-argument", "OoD pool needs at least one image");
  OodPool pool;
  pool.source_tag = to_string(req.source);
  Rng rng = make_rng(seed, {stream::ood, static_cast<std::uint64_t>(req.source)});
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  switch (req.source) {
    case OodSource::held_out_domain: {
      require(std::find(req.training_domains.begin(), req.training_domains.end(), req.held_out_domain) ==
                  req.training_domains.end(),
              "ood-leakage", "held-out domain '" + req.held_out_domain + "' is also a training domain");
      pool.images = render_digits(req.held_out_domain, req.size, req.shape, derive_seed(seed, {stream::ood, 7}));
      pool.images.labels.clear();
      pool.source_tag += ":" + req.held_out_domain;
      break;
    }
    case OodSource::random_noise: {
      pool.images.shape = req.shape;
      pool.images.images = RowMatrix<float>::NullaryExpr(req.size, req.shape.size(), [&] { return u(rng); });
      break;
    }
    case OodSource::jigsaw: {
      const ImageShape ts{req.shape.channels, 4, 4};
      RowMatrix<float> tiles = RowMatrix<float>::NullaryExpr(req.size, ts.size(), [&] { return u(rng); });
      pool.images.shape = req.shape;
      pool.images.images = reflect_tile(tiles, ts, req.shape);
      break;
    }
  }
  pool.images.ids.resize(static_cast<std::size_t>(req.size));
  std::iota(pool.images.ids.begin(), pool.images.ids.end(), 0);
  return pool;
}

nlohmann::json partition_manifest(const std::vector<ClientDataset>& clients) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& cl : clients) {
    nlohmann::json j;
    j["client_id"] = cl.client_id;
    j["classes"] = cl.classes;
    j["domain"] = cl.domain_tag ? nlohmann::json(*cl.domain_tag) : nlohmann::json(nullptr);
    j["train"] = cl.train.ids;
    j["test"] = cl.test.ids;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace duw
