#ifndef CITYSCOPE_DATASET_HPP
#define CITYSCOPE_DATASET_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cityscope/errors.hpp"
#include "cityscope/rng.hpp"

namespace cityscope {

enum class Split { train, val, test, unassigned };

inline std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
        case Split::unassigned: return "unassigned";
    }
    fail("BadConfig", "unknown split");
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "unassigned") return Split::unassigned;
    fail("BadConfig", "unknown split '" + s + "'");
}

struct ClassVocabulary {
    std::vector<std::string> names;  // unique, non-empty, ascending byte order

    int index_of(const std::string& name) const {
        auto it = std::lower_bound(names.begin(), names.end(), name);
        if (it == names.end() || *it != name) fail("BadIndex", "unknown class '" + name + "'");
        return static_cast<int>(it - names.begin());
    }

    int size() const { return static_cast<int>(names.size()); }
};

struct ImageRecord {
    std::string path;  // relative to the dataset root
    int class_index = 0;
    Split split = Split::unassigned;
};

struct DatasetManifest {
    std::string root;  // directory the record paths are relative to
    ClassVocabulary vocabulary;
    std::vector<ImageRecord> records;
    std::optional<std::uint64_t> split_seed;
    std::array<double, 3> ratios{0.0, 0.0, 0.0};  // train, val, test

    std::vector<int> indices_of(Split split) const {
        std::vector<int> out;
        for (std::size_t i = 0; i < records.size(); ++i)
            if (records[i].split == split) out.push_back(static_cast<int>(i));
        return out;
    }

    std::filesystem::path full_path(const ImageRecord& record) const {
        return std::filesystem::path(root) / record.path;
    }
};

struct ScanReport {
    int skipped_files = 0;
    std::vector<std::string> skipped;  // non-image files, relative paths
};

inline bool has_image_extension(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

// One class per immediate subdirectory of root; class order is ascending
// byte order of directory names, record order is class index then path.
inline DatasetManifest scan_dataset(const std::filesystem::path& root,
                                    ScanReport* report = nullptr) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) fail("MissingRoot", "dataset root not found: " + root.string());

    std::vector<std::string> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());

    DatasetManifest manifest;
    manifest.root = root.string();
    manifest.vocabulary.names = class_dirs;
    ScanReport local;
    for (std::size_t ci = 0; ci < class_dirs.size(); ++ci) {
        std::vector<std::string> files;
        for (const auto& entry : fs::recursive_directory_iterator(root / class_dirs[ci])) {
            if (!entry.is_regular_file()) continue;
            std::string rel = fs::relative(entry.path(), root).generic_string();
            if (has_image_extension(entry.path())) {
                files.push_back(rel);
            } else {
                local.skipped_files += 1;
                local.skipped.push_back(rel);
            }
        }
        std::sort(files.begin(), files.end());
        for (std::string& f : files)
            manifest.records.push_back({std::move(f), static_cast<int>(ci), Split::unassigned});
    }
    if (manifest.records.empty())
        fail("EmptyDataset", "no class subdirectory of " + root.string() + " contains images");
    if (report) *report = std::move(local);
    return manifest;
}

// Largest-remainder apportionment of n into three parts, ties broken in
// order train > val > test.
inline std::array<int, 3> apportion_counts(int n, const std::array<double, 3>& ratios) {
    std::array<int, 3> counts{};
    std::array<double, 3> remainders{};
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        double quota = n * ratios[i];
        counts[i] = static_cast<int>(std::floor(quota));
        remainders[i] = quota - counts[i];
        assigned += counts[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return remainders[a] > remainders[b]; });
    for (int left = n - assigned, i = 0; left > 0; --left, ++i) counts[order[i % 3]] += 1;
    return counts;
}

// Stratified split: per class, records sorted by path, Fisher-Yates
// shuffled with splitmix64(seed), then cut by largest-remainder counts.
inline DatasetManifest split_dataset(DatasetManifest manifest, std::array<double, 3> ratios,
                                     std::uint64_t seed, bool overwrite = false) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0 || std::abs(sum - 1.0) > 1e-9)
        fail("BadRatios", "split ratios must be non-negative and sum to 1");
    if (!overwrite)
        for (const ImageRecord& r : manifest.records)
            if (r.split != Split::unassigned)
                fail("AlreadySplit", "manifest already has split assignments (use overwrite)");

    SplitMix64 rng(seed);
    for (int c = 0; c < manifest.vocabulary.size(); ++c) {
        std::vector<int> idx;
        for (std::size_t i = 0; i < manifest.records.size(); ++i)
            if (manifest.records[i].class_index == c) idx.push_back(static_cast<int>(i));
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            return manifest.records[a].path < manifest.records[b].path;
        });
        fisher_yates_shuffle(idx, rng);
        std::array<int, 3> counts = apportion_counts(static_cast<int>(idx.size()), ratios);
        int pos = 0;
        for (int s = 0; s < 3; ++s) {
            Split tag = s == 0 ? Split::train : s == 1 ? Split::val : Split::test;
            for (int k = 0; k < counts[s]; ++k, ++pos)
                manifest.records[idx[pos]].split = tag;
        }
    }
    manifest.split_seed = seed;
    manifest.ratios = ratios;
    return manifest;
}

// Batches of record indices covering the split exactly once; the final
// batch may be smaller. With a shuffle seed the order is a Fisher-Yates
// shuffle seeded with splitmix64(shuffle_seed XOR epoch), else manifest
// order.
inline std::vector<std::vector<int>> make_batches(const DatasetManifest& manifest, Split split,
                                                  int batch_size,
                                                  std::optional<std::uint64_t> shuffle_seed = {},
                                                  std::uint64_t epoch = 0) {
    if (batch_size < 1) fail("BadConfig", "batch_size must be >= 1");
    std::vector<int> idx = manifest.indices_of(split);
    if (idx.empty()) fail("EmptySplit", "split '" + split_name(split) + "' has no records");
    if (shuffle_seed) {
        SplitMix64 rng(splitmix64_mix(*shuffle_seed ^ epoch));
        fisher_yates_shuffle(idx, rng);
    }
    std::vector<std::vector<int>> batches;
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        std::size_t end = std::min(idx.size(), start + batch_size);
        batches.emplace_back(idx.begin() + start, idx.begin() + end);
    }
    return batches;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& manifest) {
    nlohmann::json j;
    j["root"] = manifest.root;
    j["vocabulary"] = manifest.vocabulary.names;
    j["ratios"] = manifest.ratios;
    if (manifest.split_seed) j["split_seed"] = *manifest.split_seed;
    else j["split_seed"] = nullptr;
    nlohmann::json records = nlohmann::json::array();
    for (const ImageRecord& r : manifest.records)
        records.push_back({{"path", r.path},
                           {"class_index", r.class_index},
                           {"split", split_name(r.split)}});
    j["records"] = std::move(records);
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest manifest;
    manifest.root = j.value("root", std::string{});
    manifest.vocabulary.names = j.at("vocabulary").get<std::vector<std::string>>();
    if (j.contains("ratios")) manifest.ratios = j.at("ratios").get<std::array<double, 3>>();
    if (j.contains("split_seed") && !j.at("split_seed").is_null())
        manifest.split_seed = j.at("split_seed").get<std::uint64_t>();
    for (const auto& r : j.at("records")) {
        ImageRecord rec;
        rec.path = r.at("path").get<std::string>();
        rec.class_index = r.at("class_index").get<int>();
        rec.split = split_from_name(r.at("split").get<std::string>());
        if (rec.class_index < 0 || rec.class_index >= manifest.vocabulary.size())
            fail("BadIndex", "record class_index out of range: " + rec.path);
        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

inline void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail("IoError", "cannot write " + path.string());
    out << manifest_to_json(manifest).dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("MissingFile", "cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail("IoError", std::string("bad manifest JSON: ") + e.what());
    }
    return manifest_from_json(j);
}

} // namespace cityscope

#endif
