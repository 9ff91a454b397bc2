#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fernet/dataset.hpp"

namespace fernet {

struct Fold {
  std::vector<std::size_t> train;  // sample indices into the manifest
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct FoldSplit {
  int k = 0;
  /// Qualified subject ids (database/subject) per group; group i is the
  /// test group of fold i and the validation group of fold i-1.
  std::vector<std::vector<std::string>> subject_groups;
  std::vector<Fold> folds;
  /// Databases whose samples all carry a usage and were therefore not
  /// folded; their samples join every fold by usage.
  std::vector<std::string> predefined_databases;
};

struct SplitOptions {
  /// When false, every database is folded regardless of its usage column.
  bool honor_usage = true;
};

/// Subject-independent K-fold split. Subjects are sorted, shuffled with
/// `seed` and dealt round-robin into K groups; fold i tests on group i,
/// validates on group (i+1) mod K and trains on the rest. Requires K >= 3
/// and at least K subjects.
FoldSplit kfold_subject_split(const DatasetManifest& manifest, int k, std::uint64_t seed,
                              const SplitOptions& options = {});

struct CrossDbSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Test on every sample of `eval_db`, train on every other sample.
CrossDbSplit cross_db_split(const DatasetManifest& manifest, const std::string& eval_db);

/// Splits by the usage column (train / val / test); unspecified samples go
/// to train.
Fold usage_split(const DatasetManifest& manifest);

}  // namespace fernet
