// Protein dataset handling: decoding the raw 57-column per-residue layout
// into feature/label records, profile normalization, train/validation
// splitting, batching, and synthetic corpora for desk-scale tests.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "octofold/npy.hpp"
#include "octofold/tensor.hpp"

namespace octofold {

/// One protein on a fixed-length grid (700 for the real data). Rows at
/// t >= length are padding: mask 0, label -1, features carrying only the
/// no-residue marker.
struct ProteinRecord {
    std::string id;
    int length = 0;
    Tensor features;          // [grid, depth]
    std::vector<int> labels;  // grid entries, -1 where mask is 0
    Tensor mask;              // [grid], {0,1}
    bool normalized = false;

    std::int64_t grid() const { return features.dim(0); }
    std::int64_t depth() const { return features.dim(1); }
};

/// Column offsets of the raw per-residue layout. The residue one-hot block
/// is `residue_count` columns starting at `residue_begin`, with the
/// dedicated no-residue column folded into the block's last channel so the
/// block stays one-hot on padding rows. All offsets live here so a layout
/// correction is a one-line change (or a JSON override).
struct ColumnLayout {
    int total = 57;
    int residue_begin = 0;
    int residue_count = 21;
    int noseq_residue = 21;
    int label_begin = 22;
    int label_count = 8;
    int noseq_label = 30;
    int pssm_begin = 35;
    int pssm_count = 21;

    int feature_depth() const { return residue_count + pssm_count; }
    void validate() const;
};

std::string to_json_text(const ColumnLayout& layout);
ColumnLayout column_layout_from_json_text(const std::string& text);

/// Decodes a raw array of shape (N, grid*total) or (N, grid, total) into
/// records named "{id_prefix}-{index}". Padding rows must carry the
/// no-residue marker; malformed one-hot blocks raise FormatError. A mask
/// that is not a contiguous prefix is kept (length = number of valid rows)
/// and reported on stderr.
std::vector<ProteinRecord> records_from_raw(const NpyArray& raw, const ColumnLayout& layout,
                                            const std::string& id_prefix);

/// Per-profile-channel standardization statistics, estimated on training
/// residues only.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

std::string to_json_text(const NormStats& stats);
NormStats norm_stats_from_json_text(const std::string& text);

/// Population mean/stddev of each profile channel over valid residues.
/// Needs at least two valid residues; a zero-variance channel is an error.
NormStats compute_norm_stats(const std::vector<ProteinRecord>& records,
                             const ColumnLayout& layout = ColumnLayout{});

/// Centers and scales the profile channels of every record in place,
/// leaving padding rows and the one-hot block untouched. Errors if any
/// record was already normalized.
void apply_norm_stats(const NormStats& stats, std::vector<ProteinRecord>& records,
                      const ColumnLayout& layout = ColumnLayout{});

/// Deterministic shuffle-and-cut. The canonical corpus size 5534 always
/// splits (5278, 256); other sizes reserve round(N * val_fraction) clamped
/// to [1, N-1] for validation.
void split_train_val(const std::vector<ProteinRecord>& records, std::uint64_t seed,
                     double val_fraction, std::vector<ProteinRecord>& train,
                     std::vector<ProteinRecord>& val);

struct Batch {
    Tensor features;          // [B, grid, depth]
    std::vector<int> labels;  // B*grid
    Tensor mask;              // [B, grid]
};

/// Stacks the selected records; all must share grid and depth.
Batch make_batch(const std::vector<ProteinRecord>& records,
                 const std::vector<std::int64_t>& indices);

enum class ToyRule {
    // Label at t is a fixed argmax-linear function of the residue tokens in
    // a +-2 window; exactly learnable by any model whose window covers it.
    kLocalWindow,
    // Labels form long runs (stay probability 0.9) and features reveal the
    // label only at occasional hint positions (probability 0.25), so free
    // decoding must propagate context while teacher forcing sees the truth.
    kCopyProne,
};

/// Synthetic records on a `length` grid with 10 feature channels: token
/// one-hot [0..8) plus a blank channel 8 (hint-free copy-prone positions)
/// and a no-residue channel 9. Protein lengths vary over
/// [3*length/4, length].
std::vector<ProteinRecord> synth_toy_dataset(std::uint64_t seed, int n_proteins, int length,
                                             ToyRule rule);
constexpr int kToyFeatureDepth = 10;
constexpr int kToyClasses = 8;

/// Binary cache of processed records (container format; one array of shape
/// (N, grid, depth+3) holding features, label, mask, normalized flag).
void save_records_cache(const std::string& path, const std::vector<ProteinRecord>& records);
std::vector<ProteinRecord> load_records_cache(const std::string& path,
                                              const std::string& id_prefix);

}  // namespace octofold
