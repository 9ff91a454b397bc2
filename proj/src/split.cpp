#include "fernet/split.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "fernet/random.hpp"

namespace fernet {

namespace {

void add_by_usage(Fold& fold, std::size_t index, Usage usage) {
  switch (usage) {
    case Usage::val: fold.val.push_back(index); break;
    case Usage::test: fold.test.push_back(index); break;
    default: fold.train.push_back(index); break;
  }
}

}  // namespace

FoldSplit kfold_subject_split(const DatasetManifest& manifest, int k, std::uint64_t seed,
                              const SplitOptions& options) {
  if (k < 3) throw RangeError("K-fold needs K >= 3 (train, validation and test groups)");

  std::set<std::string> predefined;
  if (options.honor_usage) {
    std::map<std::string, bool> all_have_usage;
    for (const Sample& s : manifest.samples) {
      auto [it, inserted] = all_have_usage.try_emplace(s.database_id, true);
      it->second = it->second && s.usage != Usage::unspecified;
    }
    for (const auto& [db, yes] : all_have_usage) {
      if (yes) predefined.insert(db);
    }
  }

  std::set<std::string> subject_set;
  for (const Sample& s : manifest.samples) {
    if (!predefined.contains(s.database_id)) subject_set.insert(s.qualified_subject());
  }
  if (subject_set.size() < static_cast<std::size_t>(k)) {
    throw DataError("K-fold with K=" + std::to_string(k) + " needs at least " + std::to_string(k) +
                    " subjects, found " + std::to_string(subject_set.size()));
  }
  std::vector<std::string> subjects(subject_set.begin(), subject_set.end());
  Rng rng(seed);
  shuffle_in_place(subjects, rng);

  FoldSplit split;
  split.k = k;
  split.predefined_databases.assign(predefined.begin(), predefined.end());
  split.subject_groups.resize(static_cast<std::size_t>(k));
  std::map<std::string, int> group_of;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const int g = static_cast<int>(i % static_cast<std::size_t>(k));
    split.subject_groups[static_cast<std::size_t>(g)].push_back(subjects[i]);
    group_of.emplace(subjects[i], g);
  }

  split.folds.resize(static_cast<std::size_t>(k));
  for (std::size_t idx = 0; idx < manifest.samples.size(); ++idx) {
    const Sample& s = manifest.samples[idx];
    if (predefined.contains(s.database_id)) {
      for (Fold& fold : split.folds) add_by_usage(fold, idx, s.usage);
      continue;
    }
    const int g = group_of.at(s.qualified_subject());
    for (int f = 0; f < k; ++f) {
      Fold& fold = split.folds[static_cast<std::size_t>(f)];
      if (g == f) {
        fold.test.push_back(idx);
      } else if (g == (f + 1) % k) {
        fold.val.push_back(idx);
      } else {
        fold.train.push_back(idx);
      }
    }
  }
  return split;
}

CrossDbSplit cross_db_split(const DatasetManifest& manifest, const std::string& eval_db) {
  CrossDbSplit split;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    (manifest.samples[i].database_id == eval_db ? split.test : split.train).push_back(i);
  }
  if (split.test.empty()) throw DataError("evaluation database '" + eval_db + "' not in manifest");
  if (split.train.empty()) throw DataError("cross-database split needs a second database besides '" + eval_db + "'");
  return split;
}

Fold usage_split(const DatasetManifest& manifest) {
  Fold fold;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    add_by_usage(fold, i, manifest.samples[i].usage);
  }
  return fold;
}

}  // namespace fernet
