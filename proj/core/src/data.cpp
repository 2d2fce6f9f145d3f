#include "octofold/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "octofold/errors.hpp"
#include "octofold/rng.hpp"

namespace octofold {

using nlohmann::json;

void ColumnLayout::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("column layout: " + m); };
    if (total < 1) fail("total must be positive");
    if (residue_count < 1 || pssm_count < 0 || label_count < 2) fail("block sizes out of range");
    auto in_range = [&](int col) { return col >= 0 && col < total; };
    if (!in_range(residue_begin) || !in_range(residue_begin + residue_count - 1))
        fail("residue block outside row");
    if (!in_range(noseq_residue)) fail("no-residue column outside row");
    if (!in_range(label_begin) || !in_range(label_begin + label_count - 1))
        fail("label block outside row");
    if (!in_range(noseq_label)) fail("no-residue label column outside row");
    if (pssm_count > 0 && (!in_range(pssm_begin) || !in_range(pssm_begin + pssm_count - 1)))
        fail("profile block outside row");
}

std::string to_json_text(const ColumnLayout& layout) {
    json j{
        {"total", layout.total},
        {"residue_begin", layout.residue_begin},
        {"residue_count", layout.residue_count},
        {"noseq_residue", layout.noseq_residue},
        {"label_begin", layout.label_begin},
        {"label_count", layout.label_count},
        {"noseq_label", layout.noseq_label},
        {"pssm_begin", layout.pssm_begin},
        {"pssm_count", layout.pssm_count},
    };
    return j.dump(2) + "\n";
}

ColumnLayout column_layout_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("column layout: invalid JSON: ") + e.what());
    }
    ColumnLayout layout;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "total") layout.total = value.get<int>();
            else if (key == "residue_begin") layout.residue_begin = value.get<int>();
            else if (key == "residue_count") layout.residue_count = value.get<int>();
            else if (key == "noseq_residue") layout.noseq_residue = value.get<int>();
            else if (key == "label_begin") layout.label_begin = value.get<int>();
            else if (key == "label_count") layout.label_count = value.get<int>();
            else if (key == "noseq_label") layout.noseq_label = value.get<int>();
            else if (key == "pssm_begin") layout.pssm_begin = value.get<int>();
            else if (key == "pssm_count") layout.pssm_count = value.get<int>();
            else throw ConfigError("column layout: unknown key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("column layout: ") + e.what());
    }
    layout.validate();
    return layout;
}

std::vector<ProteinRecord> records_from_raw(const NpyArray& raw, const ColumnLayout& layout,
                                            const std::string& id_prefix) {
    layout.validate();
    std::int64_t n = 0, grid = 0;
    if (raw.shape.size() == 2) {
        if (raw.shape[1] % layout.total != 0)
            throw FormatError("raw array: row size " + std::to_string(raw.shape[1]) +
                              " is not a multiple of " + std::to_string(layout.total));
        n = raw.shape[0];
        grid = raw.shape[1] / layout.total;
    } else if (raw.shape.size() == 3) {
        if (raw.shape[2] != layout.total)
            throw FormatError("raw array: expected " + std::to_string(layout.total) +
                              " columns, got " + std::to_string(raw.shape[2]));
        n = raw.shape[0];
        grid = raw.shape[1];
    } else {
        throw FormatError("raw array: expected rank 2 or 3, got rank " +
                          std::to_string(raw.shape.size()));
    }

    const int depth = layout.feature_depth();
    std::vector<ProteinRecord> records;
    records.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        ProteinRecord rec;
        rec.id = id_prefix + "-" + std::to_string(i);
        rec.features = Tensor({grid, depth});
        rec.labels.assign(static_cast<std::size_t>(grid), -1);
        rec.mask = Tensor({grid});
        const float* row0 = raw.data.data() + i * grid * layout.total;
        bool noncontiguous = false;
        bool seen_padding = false;
        for (std::int64_t t = 0; t < grid; ++t) {
            const float* row = row0 + t * layout.total;
            float* feat = rec.features.data() + t * depth;

            double onehot_sum = 0.0;
            for (int c = 0; c < layout.residue_count; ++c) {
                feat[c] = row[layout.residue_begin + c];
                onehot_sum += feat[c];
            }
            // The dedicated no-residue column doubles as the block's last
            // channel so padding rows still read as a valid one-hot.
            if (row[layout.noseq_residue] != 0.0f) {
                feat[layout.residue_count - 1] = 1.0f;
                onehot_sum += row[layout.noseq_residue];
            }
            if (std::abs(onehot_sum - 1.0) > 1e-4)
                throw FormatError(rec.id + ": residue block at position " + std::to_string(t) +
                                  " sums to " + std::to_string(onehot_sum) + ", expected 1");

            const bool valid = row[layout.noseq_label] == 0.0f;
            rec.mask.at(t) = valid ? 1.0f : 0.0f;
            if (valid) {
                if (seen_padding) noncontiguous = true;
                int label = -1;
                double label_sum = 0.0;
                for (int c = 0; c < layout.label_count; ++c) {
                    const float v = row[layout.label_begin + c];
                    label_sum += v;
                    if (v != 0.0f) label = c;
                }
                if (label < 0 || std::abs(label_sum - 1.0) > 1e-4)
                    throw FormatError(rec.id + ": label block at position " + std::to_string(t) +
                                      " is not one-hot");
                rec.labels[static_cast<std::size_t>(t)] = label;
                for (int c = 0; c < layout.pssm_count; ++c)
                    feat[layout.residue_count + c] = row[layout.pssm_begin + c];
                ++rec.length;
            } else {
                seen_padding = true;
                for (int c = 0; c < layout.pssm_count; ++c) feat[layout.residue_count + c] = 0.0f;
            }
        }
        if (noncontiguous)
            std::cerr << "warning: " << rec.id << " has non-contiguous padding; length counts valid rows\n";
        records.push_back(std::move(rec));
    }
    return records;
}

std::string to_json_text(const NormStats& stats) {
    json j{{"mean", stats.mean}, {"stddev", stats.stddev}};
    return j.dump(2) + "\n";
}

NormStats norm_stats_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
        NormStats stats;
        stats.mean = j.at("mean").get<std::vector<double>>();
        stats.stddev = j.at("stddev").get<std::vector<double>>();
        if (stats.mean.size() != stats.stddev.size())
            throw ConfigError("norm stats: mean/stddev size mismatch");
        return stats;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("norm stats: ") + e.what());
    }
}

namespace {

void require_profile_depth(const ProteinRecord& rec, const ColumnLayout& layout) {
    if (rec.depth() != layout.feature_depth())
        throw ConfigError("record " + rec.id + " carries depth " + std::to_string(rec.depth()) +
                          ", layout wants " + std::to_string(layout.feature_depth()));
}

}  // namespace

NormStats compute_norm_stats(const std::vector<ProteinRecord>& records, const ColumnLayout& layout) {
    const int nc = layout.pssm_count;
    std::vector<double> sum(static_cast<std::size_t>(nc)), sumsq(static_cast<std::size_t>(nc));
    std::int64_t count = 0;
    for (const ProteinRecord& rec : records) {
        require_profile_depth(rec, layout);
        for (std::int64_t t = 0; t < rec.grid(); ++t) {
            if (rec.mask.at(t) == 0.0f) continue;
            ++count;
            const float* feat = rec.features.data() + t * rec.depth() + layout.residue_count;
            for (int c = 0; c < nc; ++c) {
                sum[static_cast<std::size_t>(c)] += feat[c];
                sumsq[static_cast<std::size_t>(c)] += static_cast<double>(feat[c]) * feat[c];
            }
        }
    }
    if (count < 2) throw NumericError("profile stats need at least 2 valid residues, have " +
                                      std::to_string(count));
    NormStats stats;
    stats.mean.resize(static_cast<std::size_t>(nc));
    stats.stddev.resize(static_cast<std::size_t>(nc));
    for (int c = 0; c < nc; ++c) {
        const double mean = sum[static_cast<std::size_t>(c)] / static_cast<double>(count);
        const double var = sumsq[static_cast<std::size_t>(c)] / static_cast<double>(count) - mean * mean;
        if (var <= 0.0)
            throw NumericError("profile channel " + std::to_string(c) + " is degenerate (variance " +
                               std::to_string(var) + ")");
        stats.mean[static_cast<std::size_t>(c)] = mean;
        stats.stddev[static_cast<std::size_t>(c)] = std::sqrt(var);
    }
    return stats;
}

void apply_norm_stats(const NormStats& stats, std::vector<ProteinRecord>& records,
                      const ColumnLayout& layout) {
    if (static_cast<int>(stats.mean.size()) != layout.pssm_count)
        throw ConfigError("norm stats carry " + std::to_string(stats.mean.size()) +
                          " channels, layout wants " + std::to_string(layout.pssm_count));
    for (ProteinRecord& rec : records) {
        require_profile_depth(rec, layout);
        if (rec.normalized)
            throw ConfigError("record " + rec.id + " is already normalized");
        for (std::int64_t t = 0; t < rec.grid(); ++t) {
            if (rec.mask.at(t) == 0.0f) continue;
            float* feat = rec.features.data() + t * rec.depth() + layout.residue_count;
            for (int c = 0; c < layout.pssm_count; ++c)
                feat[c] = static_cast<float>((feat[c] - stats.mean[static_cast<std::size_t>(c)]) /
                                             stats.stddev[static_cast<std::size_t>(c)]);
        }
        rec.normalized = true;
    }
}

void split_train_val(const std::vector<ProteinRecord>& records, std::uint64_t seed,
                     double val_fraction, std::vector<ProteinRecord>& train,
                     std::vector<ProteinRecord>& val) {
    const std::int64_t n = static_cast<std::int64_t>(records.size());
    if (n < 2) throw ConfigError("split needs at least 2 records, have " + std::to_string(n));
    std::int64_t n_val;
    if (n == 5534) {
        n_val = 256;
    } else {
        if (!(val_fraction > 0.0 && val_fraction < 1.0))
            throw ConfigError("val_fraction must be in (0, 1), got " + std::to_string(val_fraction));
        n_val = std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::llround(static_cast<double>(n) * val_fraction)), 1, n - 1);
    }

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    RngStream rng(seed);
    for (std::int64_t i = n - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[rng.uniform_index(static_cast<std::uint64_t>(i + 1))]);

    train.clear();
    val.clear();
    train.reserve(static_cast<std::size_t>(n - n_val));
    val.reserve(static_cast<std::size_t>(n_val));
    for (std::int64_t i = 0; i < n; ++i) {
        const ProteinRecord& rec = records[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        if (i < n - n_val)
            train.push_back(rec);
        else
            val.push_back(rec);
    }
}

Batch make_batch(const std::vector<ProteinRecord>& records,
                 const std::vector<std::int64_t>& indices) {
    if (indices.empty()) throw DimensionError("make_batch: empty index list");
    for (std::int64_t idx : indices)
        if (idx < 0 || idx >= static_cast<std::int64_t>(records.size()))
            throw DimensionError("make_batch: index " + std::to_string(idx) + " out of range");
    const ProteinRecord& first = records[static_cast<std::size_t>(indices[0])];
    const std::int64_t grid = first.grid(), depth = first.depth();
    const std::int64_t B = static_cast<std::int64_t>(indices.size());

    Batch batch;
    batch.features = Tensor({B, grid, depth});
    batch.mask = Tensor({B, grid});
    batch.labels.assign(static_cast<std::size_t>(B * grid), -1);
    for (std::int64_t b = 0; b < B; ++b) {
        const ProteinRecord& rec = records[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])];
        if (rec.grid() != grid || rec.depth() != depth)
            throw DimensionError("make_batch: record " + rec.id + " has shape " +
                                 rec.features.shape_str() + ", batch wants (" +
                                 std::to_string(grid) + "," + std::to_string(depth) + ")");
        std::copy(rec.features.data(), rec.features.data() + grid * depth,
                  batch.features.data() + b * grid * depth);
        std::copy(rec.mask.data(), rec.mask.data() + grid, batch.mask.data() + b * grid);
        std::copy(rec.labels.begin(), rec.labels.end(),
                  batch.labels.begin() + static_cast<std::ptrdiff_t>(b * grid));
    }
    return batch;
}

namespace {

// Window scores for the local-window rule; edge positions contribute zero
// so the rule is exactly a linear map of the window's one-hot features.
struct ToyRuleTable {
    double v[5][8][8];
};

ToyRuleTable make_rule_table(RngStream rng) {
    ToyRuleTable table;
    for (auto& offset : table.v)
        for (auto& token : offset)
            for (double& score : token) score = rng.uniform(-1.0, 1.0);
    return table;
}

int rule_label(const ToyRuleTable& table, const std::vector<int>& tokens, int len, int t) {
    double best = 0.0;
    int arg = 0;
    for (int c = 0; c < kToyClasses; ++c) {
        double s = 0.0;
        for (int j = -2; j <= 2; ++j) {
            const int p = t + j;
            if (p < 0 || p >= len) continue;
            s += table.v[j + 2][tokens[static_cast<std::size_t>(p)]][c];
        }
        if (c == 0 || s > best) {
            best = s;
            arg = c;
        }
    }
    return arg;
}

}  // namespace

std::vector<ProteinRecord> synth_toy_dataset(std::uint64_t seed, int n_proteins, int length,
                                             ToyRule rule) {
    if (n_proteins < 1 || length < 8)
        throw ConfigError("toy dataset needs n_proteins >= 1 and length >= 8");
    RngStream root(seed);
    const ToyRuleTable table = make_rule_table(root.fork(0));

    std::vector<ProteinRecord> records;
    records.reserve(static_cast<std::size_t>(n_proteins));
    for (int i = 0; i < n_proteins; ++i) {
        RngStream rng = root.fork(static_cast<std::uint64_t>(100 + i));
        ProteinRecord rec;
        rec.id = std::string(rule == ToyRule::kLocalWindow ? "toy-window-" : "toy-copy-") +
                 std::to_string(i);
        rec.length = length - static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(length / 4 + 1)));
        rec.features = Tensor({length, kToyFeatureDepth});
        rec.labels.assign(static_cast<std::size_t>(length), -1);
        rec.mask = Tensor({length});
        rec.normalized = true;

        if (rule == ToyRule::kLocalWindow) {
            std::vector<int> tokens(static_cast<std::size_t>(rec.length));
            for (int& tok : tokens) tok = static_cast<int>(rng.uniform_index(8));
            for (int t = 0; t < rec.length; ++t) {
                rec.features.at(t, tokens[static_cast<std::size_t>(t)]) = 1.0f;
                rec.labels[static_cast<std::size_t>(t)] = rule_label(table, tokens, rec.length, t);
                rec.mask.at(t) = 1.0f;
            }
        } else {
            int label = static_cast<int>(rng.uniform_index(8));
            for (int t = 0; t < rec.length; ++t) {
                if (t > 0 && rng.uniform() >= 0.9) {
                    const int step = static_cast<int>(rng.uniform_index(7));
                    label = step + (step >= label ? 1 : 0);
                }
                rec.labels[static_cast<std::size_t>(t)] = label;
                rec.mask.at(t) = 1.0f;
                if (rng.uniform() < 0.25)
                    rec.features.at(t, label) = 1.0f;
                else
                    rec.features.at(t, 8) = 1.0f;
            }
        }
        for (int t = rec.length; t < length; ++t) rec.features.at(t, 9) = 1.0f;
        records.push_back(std::move(rec));
    }
    return records;
}

void save_records_cache(const std::string& path, const std::vector<ProteinRecord>& records) {
    if (records.empty()) throw ConfigError("cache: no records to save");
    const std::int64_t grid = records[0].grid(), depth = records[0].depth();
    NpyArray a;
    a.shape = {static_cast<std::int64_t>(records.size()), grid, depth + 3};
    a.data.resize(static_cast<std::size_t>(a.shape[0] * grid * (depth + 3)));
    for (std::size_t i = 0; i < records.size(); ++i) {
        const ProteinRecord& rec = records[i];
        if (rec.grid() != grid || rec.depth() != depth)
            throw ConfigError("cache: record " + rec.id + " shape differs from the first record");
        for (std::int64_t t = 0; t < grid; ++t) {
            float* row = a.data.data() + (static_cast<std::int64_t>(i) * grid + t) * (depth + 3);
            std::copy(rec.features.data() + t * depth, rec.features.data() + (t + 1) * depth, row);
            row[depth] = static_cast<float>(rec.labels[static_cast<std::size_t>(t)]);
            row[depth + 1] = rec.mask.at(t);
            row[depth + 2] = rec.normalized ? 1.0f : 0.0f;
        }
    }
    save_npy(path, a);
}

std::vector<ProteinRecord> load_records_cache(const std::string& path,
                                              const std::string& id_prefix) {
    NpyArray a = load_npy(path);
    if (a.shape.size() != 3 || a.shape[2] < 4)
        throw FormatError(path + ": not a record cache");
    const std::int64_t n = a.shape[0], grid = a.shape[1], depth = a.shape[2] - 3;
    std::vector<ProteinRecord> records;
    records.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        ProteinRecord rec;
        rec.id = id_prefix + "-" + std::to_string(i);
        rec.features = Tensor({grid, depth});
        rec.labels.assign(static_cast<std::size_t>(grid), -1);
        rec.mask = Tensor({grid});
        for (std::int64_t t = 0; t < grid; ++t) {
            const float* row = a.data.data() + (i * grid + t) * (depth + 3);
            std::copy(row, row + depth, rec.features.data() + t * depth);
            rec.labels[static_cast<std::size_t>(t)] = static_cast<int>(row[depth]);
            rec.mask.at(t) = row[depth + 1];
            rec.normalized = row[depth + 2] != 0.0f;
            if (rec.mask.at(t) != 0.0f) ++rec.length;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace octofold
