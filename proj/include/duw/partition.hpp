#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "duw/data.hpp"

namespace duw {

struct ClientDataset {
  int client_id = 0;
  ImageSet train;
  ImageSet test;  // restricted to the classes the client trains on
  std::vector<int> classes;
  std::optional<std::string> domain_tag;
};

/// Each client draws `classes_per_client` distinct classes; the samples of a
/// class are split uniformly among the clients holding it. Classes nobody
/// draws are dropped from the split source.
std::vector<ClientDataset> partition_by_class(const LabeledDataset& dataset, int num_clients, int classes_per_client,
                                              std::uint64_t seed);

/// Per-class proportions across clients ~ Dirichlet(alpha); partitions with an
/// empty client are redrawn.
std::vector<ClientDataset> partition_dirichlet(const LabeledDataset& dataset, int num_clients, double alpha,
                                               std::uint64_t seed);

/// Splits every domain uniformly into `clients_per_domain` clients, tagging
/// each with its domain. Client ids run domain-major in map order.
std::vector<ClientDataset> multi_domain_assign(const std::map<std::string, LabeledDataset>& domains,
                                               int clients_per_domain, std::uint64_t seed);

struct Holdout {
  ImageSet train;
  ImageSet validation;
};

/// Stratified split: round(fraction * n_c) samples of every class c go to validation.
Holdout holdout_validation(const ImageSet& dataset, double fraction, std::uint64_t seed);

enum class OodSource { held_out_domain, random_noise, jigsaw };

OodSource parse_ood_source(const std::string& name);
std::string to_string(OodSource s);

struct OodPool {
  ImageSet images;  // unlabeled
  std::string source_tag;
};

struct OodRequest {
  OodSource source = OodSource::held_out_domain;
  int size = 500;
  ImageShape shape{1, 16, 16};
  std::string held_out_domain = "blocky";
  std::vector<std::string> training_domains;  // must not contain held_out_domain
};

OodPool make_ood_pool(const OodRequest& request, std::uint64_t seed);

/// Mirror-extends a tile (channels, th, tw) over the full image; the tile
/// stays at the top-left corner.
RowMatrix<float> reflect_tile(const RowMatrix<float>& tile, const ImageShape& tile_shape, const ImageShape& out);

/// client_id -> source sample ids for train and test.
nlohmann::json partition_manifest(const std::vector<ClientDataset>& clients);

}  // namespace duw
