#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "csl/error.hpp"
#include "csl/rng.hpp"

namespace csl {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

// A frozen embedding table: N rows of D float32 coordinates, with optional
// per-row class labels and domain tags. Immutable after validate(); shared
// freely across threads.
struct EmbeddingDataset {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> features;  // row-major, rows*dim
  std::optional<std::vector<std::uint32_t>> labels;
  std::optional<std::vector<std::uint32_t>> domains;
  std::uint32_t class_count = 2;
  std::uint32_t domain_count = 1;
  std::string name;

  const float* row(std::size_t i) const { return features.data() + i * dim; }

  void validate() const {
    if (rows < 1 || dim < 1) {
      throw DataError("dataset '" + name + "': needs rows >= 1 and dim >= 1");
    }
    if (class_count < 2) throw DataError("dataset '" + name + "': class_count must be >= 2");
    if (domain_count < 1) throw DataError("dataset '" + name + "': domain_count must be >= 1");
    if (features.size() != rows * dim) {
      throw DataError("dataset '" + name + "': feature buffer size mismatch");
    }
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        if (!std::isfinite(features[i * dim + j])) {
          throw DataError("dataset '" + name + "': non-finite feature at row " +
                          std::to_string(i) + " column " + std::to_string(j));
        }
      }
    }
    if (labels) {
      if (labels->size() != rows) throw DataError("dataset '" + name + "': label count != rows");
      for (std::size_t i = 0; i < rows; ++i) {
        if ((*labels)[i] >= class_count) {
          throw DataError("dataset '" + name + "': label " + std::to_string((*labels)[i]) +
                          " out of range [0," + std::to_string(class_count) + ") at row " +
                          std::to_string(i));
        }
      }
    }
    if (domains) {
      if (domains->size() != rows) throw DataError("dataset '" + name + "': domain count != rows");
      for (std::size_t i = 0; i < rows; ++i) {
        if ((*domains)[i] >= domain_count) {
          throw DataError("dataset '" + name + "': domain id " + std::to_string((*domains)[i]) +
                          " out of range [0," + std::to_string(domain_count) + ") at row " +
                          std::to_string(i));
        }
      }
    }
  }
};

// Index-based view over a dataset; restriction never copies rows.
struct DatasetView {
  const EmbeddingDataset* data = nullptr;
  std::vector<std::size_t> indices;  // original row ids, relative order kept

  static DatasetView full(const EmbeddingDataset& ds) {
    DatasetView v;
    v.data = &ds;
    v.indices.resize(ds.rows);
    for (std::size_t i = 0; i < ds.rows; ++i) v.indices[i] = i;
    return v;
  }

  std::size_t size() const { return indices.size(); }
  std::size_t original_index(std::size_t i) const { return indices[i]; }
  const float* row(std::size_t i) const { return data->row(indices[i]); }
  std::uint32_t label(std::size_t i) const { return (*data->labels)[indices[i]]; }
  std::uint32_t domain(std::size_t i) const { return (*data->domains)[indices[i]]; }
  bool has_labels() const { return data->labels.has_value(); }
  bool has_domains() const { return data->domains.has_value(); }
};

struct DatasetSplit {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> eval_indices;
};

enum class FileFormat { Binary, Text };

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw DataError(std::string("truncated file while reading ") + what);
  }
}

}  // namespace detail

// Binary layout: "CSL1", u32 flags (bit0 labels, bit1 domains),
// u64 N, u64 D, u32 C, u32 M, N*D float32, [N u32 labels], [N u32 domains].
inline void save_dataset_binary(const EmbeddingDataset& ds, std::ostream& os) {
  os.write("CSL1", 4);
  std::uint32_t flags = (ds.labels ? 1u : 0u) | (ds.domains ? 2u : 0u);
  std::uint64_t n = ds.rows, d = ds.dim;
  detail::write_bytes(os, &flags, 4);
  detail::write_bytes(os, &n, 8);
  detail::write_bytes(os, &d, 8);
  detail::write_bytes(os, &ds.class_count, 4);
  detail::write_bytes(os, &ds.domain_count, 4);
  detail::write_bytes(os, ds.features.data(), ds.features.size() * sizeof(float));
  if (ds.labels) detail::write_bytes(os, ds.labels->data(), ds.rows * 4);
  if (ds.domains) detail::write_bytes(os, ds.domains->data(), ds.rows * 4);
}

inline EmbeddingDataset load_dataset_binary(std::istream& is, const std::string& name) {
  char magic[4];
  detail::read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, "CSL1", 4) != 0) {
    throw DataError("file '" + name + "': bad magic, expected CSL1");
  }
  EmbeddingDataset ds;
  ds.name = name;
  std::uint32_t flags = 0;
  std::uint64_t n = 0, d = 0;
  detail::read_bytes(is, &flags, 4, "flags");
  detail::read_bytes(is, &n, 8, "row count");
  detail::read_bytes(is, &d, 8, "dim");
  detail::read_bytes(is, &ds.class_count, 4, "class count");
  detail::read_bytes(is, &ds.domain_count, 4, "domain count");
  ds.rows = static_cast<std::size_t>(n);
  ds.dim = static_cast<std::size_t>(d);
  if (ds.rows == 0 || ds.dim == 0) {
    throw DataError("file '" + name + "': header declares empty dataset");
  }
  ds.features.resize(ds.rows * ds.dim);
  detail::read_bytes(is, ds.features.data(), ds.features.size() * sizeof(float), "features");
  if (flags & 1u) {
    ds.labels.emplace(ds.rows);
    detail::read_bytes(is, ds.labels->data(), ds.rows * 4, "labels");
  }
  if (flags & 2u) {
    ds.domains.emplace(ds.rows);
    detail::read_bytes(is, ds.domains->data(), ds.rows * 4, "domains");
  }
  ds.validate();
  return ds;
}

// Text layout: header "dim=<D> classes=<C> domains=<M>", then one row per
// example with D floats plus optional label and domain, comma-separated.
// Column count disambiguates: D bare, D+1 with labels, D+2 with both.
inline void save_dataset_text(const EmbeddingDataset& ds, std::ostream& os) {
  os << "dim=" << ds.dim << " classes=" << ds.class_count << " domains=" << ds.domain_count
     << "\n";
  char buf[40];
  for (std::size_t i = 0; i < ds.rows; ++i) {
    for (std::size_t j = 0; j < ds.dim; ++j) {
      if (j) os << ',';
      std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(ds.features[i * ds.dim + j]));
      os << buf;
    }
    if (ds.labels) os << ',' << (*ds.labels)[i];
    if (ds.domains) os << ',' << (*ds.domains)[i];
    os << "\n";
  }
}

inline EmbeddingDataset load_dataset_text(std::istream& is, const std::string& name) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("file '" + name + "': empty file");
  EmbeddingDataset ds;
  ds.name = name;
  {
    std::size_t dim = 0;
    unsigned classes = 0, domains = 0;
    if (std::sscanf(line.c_str(), "dim=%zu classes=%u domains=%u", &dim, &classes, &domains) !=
        3) {
      throw DataError("file '" + name + "': malformed header '" + line + "'");
    }
    ds.dim = dim;
    ds.class_count = classes;
    ds.domain_count = domains;
  }
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      std::string tok = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
      double v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size()) {
        throw DataError("file '" + name + "': bad value '" + tok + "' at row " +
                        std::to_string(row));
      }
      vals.push_back(v);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    const std::size_t extra = vals.size() >= ds.dim ? vals.size() - ds.dim : 0;
    if (vals.size() < ds.dim || extra > 2) {
      throw DataError("file '" + name + "': row " + std::to_string(row) + " has " +
                      std::to_string(vals.size()) + " columns, expected dim=" +
                      std::to_string(ds.dim) + " (+0..2 tags)");
    }
    if (row == 0) {
      if (extra >= 1) ds.labels.emplace();
      if (extra == 2) ds.domains.emplace();
    } else if (extra != (ds.labels ? 1u : 0u) + (ds.domains ? 1u : 0u)) {
      throw DataError("file '" + name + "': inconsistent column count at row " +
                      std::to_string(row));
    }
    for (std::size_t j = 0; j < ds.dim; ++j) ds.features.push_back(static_cast<float>(vals[j]));
    if (ds.labels) ds.labels->push_back(static_cast<std::uint32_t>(vals[ds.dim]));
    if (ds.domains) ds.domains->push_back(static_cast<std::uint32_t>(vals[ds.dim + 1]));
    ++row;
  }
  ds.rows = row;
  ds.validate();
  return ds;
}

inline EmbeddingDataset load_dataset(const std::string& path, FileFormat format) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return format == FileFormat::Binary ? load_dataset_binary(is, path)
                                      : load_dataset_text(is, path);
}

inline void save_dataset(const EmbeddingDataset& ds, const std::string& path, FileFormat format) {
  ds.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  if (format == FileFormat::Binary) {
    save_dataset_binary(ds, os);
  } else {
    save_dataset_text(ds, os);
  }
  if (!os) throw DataError("write failure on '" + path + "'");
}

// Seed-deterministic shuffled split; |train| = round(fraction * N).
inline DatasetSplit split_dataset(const EmbeddingDataset& ds, double train_fraction,
                                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DataError("train_fraction must lie in (0,1)");
  }
  if (ds.rows < 2) throw DataError("split needs at least 2 rows");
  std::vector<std::size_t> perm(ds.rows);
  for (std::size_t i = 0; i < ds.rows; ++i) perm[i] = i;
  Rng rng(mix_seed(seed, 0x5117));
  rng.shuffle(perm);
  const auto n_train =
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ds.rows)));
  DatasetSplit split;
  split.train_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.eval_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  return split;
}

// Predicate over per-row tags. Flags declare which tags the predicate reads;
// restricting a dataset lacking a required tag is an error.
struct RowPredicate {
  bool needs_label = false;
  bool needs_domain = false;
  std::function<bool(std::uint32_t label, std::uint32_t domain)> fn;
};

inline DatasetView restrict(const DatasetView& view, const RowPredicate& pred) {
  if (pred.needs_label && !view.has_labels()) {
    throw DataError("restrict: predicate needs labels but dataset has none");
  }
  if (pred.needs_domain && !view.has_domains()) {
    throw DataError("restrict: predicate needs domains but dataset has none");
  }
  DatasetView out;
  out.data = view.data;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const std::uint32_t lab = pred.needs_label ? view.label(i) : 0;
    const std::uint32_t dom = pred.needs_domain ? view.domain(i) : 0;
    if (pred.fn(lab, dom)) out.indices.push_back(view.indices[i]);
  }
  return out;
}

inline DatasetView restrict(const EmbeddingDataset& ds, const RowPredicate& pred) {
  return restrict(DatasetView::full(ds), pred);
}

inline DatasetView view_from_indices(const EmbeddingDataset& ds,
                                     std::vector<std::size_t> indices) {
  DatasetView v;
  v.data = &ds;
  v.indices = std::move(indices);
  return v;
}

}  // namespace csl
