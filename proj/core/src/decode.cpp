#include "octofold/decode.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "octofold/errors.hpp"

namespace octofold {

namespace {

constexpr double kLogFloor = 1e-12;

std::vector<std::int64_t> valid_positions(const ProteinRecord& record) {
    std::vector<std::int64_t> v;
    for (std::int64_t t = 0; t < record.grid(); ++t)
        if (record.mask.at(t) != 0.0f) v.push_back(t);
    return v;
}

Tensor record_batch(const ProteinRecord& record) {
    Tensor out({1, record.grid(), record.depth()});
    std::copy(record.features.data(), record.features.data() + record.features.size(), out.data());
    return out;
}

/// Floor-clamped log of the softmax row logits[row * classes ..].
std::vector<double> row_log_probs(const Tensor& logits, std::int64_t row) {
    const std::int64_t C = logits.dim(logits.rank() - 1);
    const float* lr = logits.data() + row * C;
    double mx = lr[0];
    for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(lr[c]));
    double sum = 0.0;
    for (std::int64_t c = 0; c < C; ++c) sum += std::exp(lr[c] - mx);
    std::vector<double> out(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c)
        out[static_cast<std::size_t>(c)] =
            std::log(std::max(std::exp(lr[c] - mx) / sum, kLogFloor));
    return out;
}

int argmax_lowest(const std::vector<double>& scores) {
    int best = 0;
    for (int c = 1; c < static_cast<int>(scores.size()); ++c)
        if (scores[static_cast<std::size_t>(c)] > scores[static_cast<std::size_t>(best)]) best = c;
    return best;
}

void require_feature_depth(const ModelGraph& model, const ProteinRecord& record) {
    const int want = model.config.conditioned
                         ? model.config.input_depth() - model.config.label_context_channels()
                         : model.config.input_depth();
    if (record.depth() != want)
        throw DimensionError("decode: record " + record.id + " has depth " +
                             std::to_string(record.depth()) + ", model wants " +
                             std::to_string(want));
}

/// log p(y_t = c | x) per valid position for an unconditional model.
std::vector<std::vector<double>> unconditional_table(const ModelGraph& model,
                                                     const ProteinRecord& record) {
    if (model.config.conditioned)
        throw ConfigError("decode: expected an unconditional model");
    require_feature_depth(model, record);
    const Tensor logits = infer_logits(model, record_batch(record));
    std::vector<std::vector<double>> table;
    for (std::int64_t pos : valid_positions(record)) table.push_back(row_log_probs(logits, pos));
    return table;
}

}  // namespace

std::vector<int> beam_decode(const StepScorer& scorer, int beam) {
    if (beam < 1) throw ConfigError("beam_decode: beam must be >= 1, got " + std::to_string(beam));
    const int L = scorer.length();
    const int C = scorer.num_labels();
    std::vector<Hypothesis> front{Hypothesis{}};
    for (int t = 0; t < L; ++t) {
        std::vector<Hypothesis> candidates;
        candidates.reserve(front.size() * static_cast<std::size_t>(C));
        for (const Hypothesis& h : front) {
            const std::vector<double> scores = scorer.step_log_probs(h.labels);
            if (static_cast<int>(scores.size()) != C)
                throw DimensionError("beam_decode: scorer returned " +
                                     std::to_string(scores.size()) + " scores for " +
                                     std::to_string(C) + " labels");
            for (int c = 0; c < C; ++c) {
                Hypothesis next = h;
                next.labels.push_back(c);
                next.log_prob += scores[static_cast<std::size_t>(c)];
                candidates.push_back(std::move(next));
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const Hypothesis& a, const Hypothesis& b) {
            if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
            return a.labels < b.labels;
        });
        if (static_cast<int>(candidates.size()) > beam) candidates.resize(static_cast<std::size_t>(beam));
        front = std::move(candidates);
    }
    return front.empty() ? std::vector<int>{} : front.front().labels;
}

ConditionalStepScorer::ConditionalStepScorer(const ModelGraph& model, const ProteinRecord& record,
                                             bool windowed)
    : model_(model),
      record_(record),
      valid_(valid_positions(record)),
      window_(effective_window(model.config)),
      shift_((window_ + 1) / 2),
      radius_((window_ - 1) / 2),
      windowed_(windowed) {
    if (!model.config.conditioned)
        throw ConfigError("decode: beam search needs a conditional model");
    require_feature_depth(model, record);
}

std::vector<double> ConditionalStepScorer::step_log_probs(const std::vector<int>& prefix) const {
    const std::size_t t = prefix.size();
    if (t >= valid_.size())
        throw DimensionError("decode: prefix longer than the protein");
    const std::int64_t pos = valid_[t];
    const std::int64_t grid = record_.grid();

    std::vector<int> labels(static_cast<std::size_t>(grid), -1);
    for (std::size_t i = 0; i < t; ++i)
        labels[static_cast<std::size_t>(valid_[i])] = prefix[i];

    if (!windowed_) {
        const Tensor feats =
            append_label_context(record_batch(record_), labels, record_.mask, window_);
        return row_log_probs(infer_logits(model_, feats), pos);
    }

    // Crop the in-grid part of [pos - radius, pos + radius]. The crop edge
    // must coincide with the grid edge wherever the window leaves the grid:
    // every layer re-pads with zeros at its own boundary, so a zero INPUT
    // row is not equivalent to an off-sequence row once a convolution has
    // spilled real data into it.
    const std::int64_t D = record_.depth();
    const std::int64_t ctx = model_.config.label_context_channels();
    const std::int64_t lo = std::max<std::int64_t>(0, pos - radius_);
    const std::int64_t hi = std::min<std::int64_t>(grid - 1, pos + radius_);
    Tensor crop({1, hi - lo + 1, D + ctx});
    for (std::int64_t g = lo; g <= hi; ++g) {
        float* row = crop.data() + (g - lo) * (D + ctx);
        std::copy(record_.features.data() + g * D, record_.features.data() + (g + 1) * D, row);
        const std::int64_t j = g - shift_;
        const int label =
            (j >= 0 && record_.mask.at(j) != 0.0f) ? labels[static_cast<std::size_t>(j)] : -1;
        if (label >= 0)
            row[D + label] = 1.0f;
        else
            row[D + ctx - 1] = 1.0f;
    }
    return row_log_probs(infer_logits(model_, crop), pos - lo);
}

std::vector<int> greedy_decode(const ModelGraph& model, const ProteinRecord& record) {
    const std::vector<std::vector<double>> table = unconditional_table(model, record);
    std::vector<int> out(static_cast<std::size_t>(record.grid()), -1);
    const std::vector<std::int64_t> valid = valid_positions(record);
    for (std::size_t i = 0; i < valid.size(); ++i)
        out[static_cast<std::size_t>(valid[i])] = argmax_lowest(table[i]);
    return out;
}

namespace {

std::vector<int> scatter_to_grid(const std::vector<int>& dense, const ProteinRecord& record) {
    std::vector<int> out(static_cast<std::size_t>(record.grid()), -1);
    const std::vector<std::int64_t> valid = valid_positions(record);
    for (std::size_t i = 0; i < dense.size() && i < valid.size(); ++i)
        out[static_cast<std::size_t>(valid[i])] = dense[i];
    return out;
}

class BlendedScorer : public StepScorer {
public:
    BlendedScorer(std::vector<std::vector<double>> uncond, const ConditionalStepScorer& cond,
                  double lambda)
        : uncond_(std::move(uncond)), cond_(cond), lambda_(lambda) {}
    int length() const override { return static_cast<int>(uncond_.size()); }
    int num_labels() const override { return cond_.num_labels(); }
    std::vector<double> step_log_probs(const std::vector<int>& prefix) const override {
        std::vector<double> scores = cond_.step_log_probs(prefix);
        const std::vector<double>& u = uncond_[prefix.size()];
        for (std::size_t c = 0; c < scores.size(); ++c)
            scores[c] = (1.0 - lambda_) * u[c] + lambda_ * scores[c];
        return scores;
    }

private:
    std::vector<std::vector<double>> uncond_;
    const ConditionalStepScorer& cond_;
    double lambda_;
};

}  // namespace

std::vector<int> beam_search(const ModelGraph& cond_model, const ProteinRecord& record, int beam,
                             bool windowed) {
    ConditionalStepScorer scorer(cond_model, record, windowed);
    return scatter_to_grid(beam_decode(scorer, beam), record);
}

std::vector<int> ensemble_beam_search(const ModelGraph& uncond_model, const ModelGraph& cond_model,
                                      const ProteinRecord& record, int beam, double lambda,
                                      bool windowed) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ConfigError("ensemble: blend factor must be in [0, 1], got " + std::to_string(lambda));
    ConditionalStepScorer cond(cond_model, record, windowed);
    BlendedScorer scorer(unconditional_table(uncond_model, record), cond, lambda);
    return scatter_to_grid(beam_decode(scorer, beam), record);
}

std::vector<int> ensemble_pair_uniform(const ModelGraph& model_a, const ModelGraph& model_b,
                                       const ProteinRecord& record) {
    const std::vector<std::vector<double>> ta = unconditional_table(model_a, record);
    const std::vector<std::vector<double>> tb = unconditional_table(model_b, record);
    std::vector<int> dense(ta.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
        std::vector<double> mean(ta[i].size());
        for (std::size_t c = 0; c < mean.size(); ++c) mean[c] = 0.5 * (ta[i][c] + tb[i][c]);
        dense[i] = argmax_lowest(mean);
    }
    return scatter_to_grid(dense, record);
}

double teacher_forced_accuracy(const ModelGraph& cond_model,
                               const std::vector<ProteinRecord>& records) {
    if (!cond_model.config.conditioned)
        throw ConfigError("teacher_forced_accuracy: model is not conditional");
    const int window = effective_window(cond_model.config);
    std::int64_t correct = 0, total = 0;
    for (const ProteinRecord& record : records) {
        require_feature_depth(cond_model, record);
        const Tensor feats =
            append_label_context(record_batch(record), record.labels, record.mask, window);
        const Tensor logits = infer_logits(cond_model, feats);
        for (std::int64_t pos : valid_positions(record)) {
            ++total;
            if (argmax_lowest(row_log_probs(logits, pos)) ==
                record.labels[static_cast<std::size_t>(pos)])
                ++correct;
        }
    }
    if (total == 0) throw NumericError("teacher_forced_accuracy: no valid residues");
    return static_cast<double>(correct) / static_cast<double>(total);
}

double q8_accuracy(const std::vector<int>& pred, const std::vector<int>& truth,
                   const Tensor& mask) {
    if (pred.size() != truth.size() || static_cast<std::int64_t>(pred.size()) != mask.size())
        throw DimensionError("q8_accuracy: prediction/truth/mask sizes disagree");
    std::int64_t correct = 0, total = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask.at(static_cast<std::int64_t>(i)) == 0.0f) continue;
        ++total;
        if (pred[i] == truth[i]) ++correct;
    }
    if (total == 0) throw NumericError("q8_accuracy: mask selects no residues");
    return static_cast<double>(correct) / static_cast<double>(total);
}

ConfusionCounts confusion(const std::vector<int>& pred, const std::vector<int>& truth,
                          const Tensor& mask) {
    if (pred.size() != truth.size() || static_cast<std::int64_t>(pred.size()) != mask.size())
        throw DimensionError("confusion: prediction/truth/mask sizes disagree");
    ConfusionCounts counts{};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask.at(static_cast<std::int64_t>(i)) == 0.0f) continue;
        const int p = pred[i], t = truth[i];
        if (p < 0 || p >= 8 || t < 0 || t >= 8)
            throw DimensionError("confusion: label outside [0, 8) at valid position " +
                                 std::to_string(i));
        ++counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }
    return counts;
}

std::string to_json_text(const EvalReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : report.counts) rows.push_back(row);
    nlohmann::json j{{"q8", report.q8}, {"residues", report.residues}, {"confusion", rows}};
    return j.dump(2) + "\n";
}

EvalReport pool_report(const std::vector<std::vector<int>>& preds,
                       const std::vector<ProteinRecord>& records) {
    if (preds.size() != records.size())
        throw DimensionError("pool_report: got " + std::to_string(preds.size()) +
                             " predictions for " + std::to_string(records.size()) + " records");
    EvalReport report;
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const ConfusionCounts c = confusion(preds[i], records[i].labels, records[i].mask);
        for (int a = 0; a < 8; ++a)
            for (int b = 0; b < 8; ++b) {
                report.counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
                    c[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
                report.residues += c[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
                if (a == b) correct += c[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
            }
    }
    if (report.residues == 0) throw NumericError("pool_report: no valid residues");
    report.q8 = static_cast<double>(correct) / static_cast<double>(report.residues);
    return report;
}

EvalReport evaluate_greedy(const ModelGraph& model, const std::vector<ProteinRecord>& records) {
    std::vector<std::vector<int>> preds;
    preds.reserve(records.size());
    for (const ProteinRecord& record : records) preds.push_back(greedy_decode(model, record));
    return pool_report(preds, records);
}

}  // namespace octofold
