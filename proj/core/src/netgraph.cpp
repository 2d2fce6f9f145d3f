#include "octofold/netgraph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "octofold/errors.hpp"

namespace octofold {

using nlohmann::json;

void ArchitectureConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("architecture: " + m); };
    if (num_blocks < 0) fail("num_blocks must be >= 0");
    if (fc_window < 1 || fc_window % 2 == 0) fail("fc_window must be odd and positive");
    if (fc_layers < 1) fail("fc_layers must be >= 1");
    if (fc_dim < 1) fail("fc_dim must be >= 1");
    if (num_blocks > 0 && multiscale_banks.empty())
        fail("blocks need at least one multiscale bank");
    std::set<int> widths;
    for (const ConvSpec& b : multiscale_banks) {
        if (b.width < 1 || b.width % 2 == 0) fail("multiscale widths must be odd and positive");
        if (b.depth < 1) fail("multiscale depths must be >= 1");
        if (!widths.insert(b.width).second) fail("multiscale widths must be distinct");
    }
    if (single_conv) {
        if (single_conv->width < 1 || single_conv->width % 2 == 0)
            fail("single_conv width must be odd and positive");
        if (single_conv->depth < 1) fail("single_conv depth must be >= 1");
    }
    if (residual_connections) {
        if (num_blocks < 2) fail("residual connections span blocks, need num_blocks >= 2");
        if (residual_projection_depth < 1) fail("residual_projection_depth must be >= 1");
        if (residual_source != "input" && residual_source != "output")
            fail("residual_source must be 'input' or 'output'");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
    if (!(maxnorm_cap >= 0.0)) fail("maxnorm_cap must be >= 0 (0 disables it)");
    if (feature_dim < 1) fail("feature_dim must be >= 1");
    if (num_classes < 2) fail("num_classes must be >= 2");
}

std::string to_json_text(const ArchitectureConfig& cfg) {
    json banks = json::array();
    for (const ConvSpec& b : cfg.multiscale_banks) banks.push_back({b.width, b.depth});
    json j{
        {"multiscale_banks", banks},
        {"single_conv",
         cfg.single_conv ? json{cfg.single_conv->width, cfg.single_conv->depth} : json()},
        {"num_blocks", cfg.num_blocks},
        {"fc_window", cfg.fc_window},
        {"fc_layers", cfg.fc_layers},
        {"fc_dim", cfg.fc_dim},
        {"residual_connections", cfg.residual_connections},
        {"residual_projection_depth", cfg.residual_projection_depth},
        {"residual_source", cfg.residual_source},
        {"dropout_rate", cfg.dropout_rate},
        {"maxnorm_cap", cfg.maxnorm_cap},
        {"conditioned", cfg.conditioned},
        {"feature_dim", cfg.feature_dim},
        {"num_classes", cfg.num_classes},
    };
    return j.dump(2) + "\n";
}

namespace {

ConvSpec conv_spec_from_json(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
        throw ConfigError("architecture: " + what + " must be a [width, depth] pair");
    return ConvSpec{j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

ArchitectureConfig architecture_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("architecture: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("architecture: document must be a JSON object");

    ArchitectureConfig cfg;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "multiscale_banks") {
                cfg.multiscale_banks.clear();
                for (const json& b : value)
                    cfg.multiscale_banks.push_back(conv_spec_from_json(b, "multiscale bank"));
            } else if (key == "single_conv") {
                if (value.is_null())
                    cfg.single_conv.reset();
                else
                    cfg.single_conv = conv_spec_from_json(value, "single_conv");
            } else if (key == "num_blocks") {
                cfg.num_blocks = value.get<int>();
            } else if (key == "fc_window") {
                cfg.fc_window = value.get<int>();
            } else if (key == "fc_layers") {
                cfg.fc_layers = value.get<int>();
            } else if (key == "fc_dim") {
                cfg.fc_dim = value.get<int>();
            } else if (key == "residual_connections") {
                cfg.residual_connections = value.get<bool>();
            } else if (key == "residual_projection_depth") {
                cfg.residual_projection_depth = value.get<int>();
            } else if (key == "residual_source") {
                cfg.residual_source = value.get<std::string>();
            } else if (key == "dropout_rate") {
                cfg.dropout_rate = value.get<double>();
            } else if (key == "maxnorm_cap") {
                cfg.maxnorm_cap = value.get<double>();
            } else if (key == "conditioned") {
                cfg.conditioned = value.get<bool>();
            } else if (key == "feature_dim") {
                cfg.feature_dim = value.get<int>();
            } else if (key == "num_classes") {
                cfg.num_classes = value.get<int>();
            } else {
                throw ConfigError("architecture: unknown key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("architecture: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

Tensor& ParamMap::add(const std::string& name, Tensor value) {
    if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    entries_.emplace_back(name, std::move(value));
    return entries_.back().second;
}

bool ParamMap::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const auto& e) { return e.first == name; });
}

Tensor& ParamMap::at(const std::string& name) {
    for (auto& e : entries_)
        if (e.first == name) return e.second;
    throw ConfigError("unknown parameter name '" + name + "'");
}

const Tensor& ParamMap::at(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.first == name) return e.second;
    throw ConfigError("unknown parameter name '" + name + "'");
}

namespace {

Tensor uniform_init(std::vector<std::int64_t> shape, std::int64_t fan_in, RngStream& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    float* p = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i)
        p[i] = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

void add_batchnorm(ModelGraph& m, const std::string& prefix, std::int64_t channels) {
    m.params.add(prefix + ".gamma", Tensor::full({channels}, 1.0f));
    m.params.add(prefix + ".beta", Tensor::zeros({channels}));
    m.state.add(prefix + ".running_mean", Tensor::zeros({channels}));
    m.state.add(prefix + ".running_var", Tensor::full({channels}, 1.0f));
}

}  // namespace

ModelGraph build_model(const ArchitectureConfig& cfg, RngStream& rng) {
    cfg.validate();
    ModelGraph m;
    m.config = cfg;

    std::int64_t depth = cfg.input_depth();
    for (int k = 1; k <= cfg.num_blocks; ++k) {
        const std::string block = "block" + std::to_string(k);
        const std::int64_t block_in = depth;
        std::int64_t ms_depth = 0;
        for (const ConvSpec& b : cfg.multiscale_banks) {
            const std::string suffix = std::to_string(b.width);
            m.params.add(block + ".ms.w" + suffix,
                         uniform_init({b.width, block_in, b.depth}, b.width * block_in, rng));
            m.params.add(block + ".ms.b" + suffix, Tensor::zeros({b.depth}));
            ms_depth += b.depth;
        }
        add_batchnorm(m, block + ".ms_bn", ms_depth);
        depth = ms_depth;
        if (cfg.single_conv) {
            m.params.add(block + ".single.w",
                         uniform_init({cfg.single_conv->width, depth, cfg.single_conv->depth},
                                      cfg.single_conv->width * depth, rng));
            m.params.add(block + ".single.b", Tensor::zeros({cfg.single_conv->depth}));
            add_batchnorm(m, block + ".single_bn", cfg.single_conv->depth);
            depth = cfg.single_conv->depth;
        }
        if (cfg.residual_connections && k < cfg.num_blocks) {
            const std::int64_t src = cfg.residual_source == "input" ? block_in : depth;
            m.params.add(block + ".res.w",
                         uniform_init({1, src, cfg.residual_projection_depth}, src, rng));
            m.params.add(block + ".res.b", Tensor::zeros({cfg.residual_projection_depth}));
            depth += cfg.residual_projection_depth;
        }
    }

    std::int64_t fc_in = depth * cfg.fc_window;
    for (int j = 1; j <= cfg.fc_layers; ++j) {
        const std::string name = "fc" + std::to_string(j);
        m.params.add(name + ".w", uniform_init({fc_in, cfg.fc_dim}, fc_in, rng));
        m.params.add(name + ".b", Tensor::zeros({cfg.fc_dim}));
        fc_in = cfg.fc_dim;
    }
    m.params.add("out.w", uniform_init({fc_in, cfg.num_classes}, fc_in, rng));
    m.params.add("out.b", Tensor::zeros({cfg.num_classes}));
    return m;
}

int effective_window(const ArchitectureConfig& cfg) {
    int per_block = 0;
    if (!cfg.multiscale_banks.empty()) {
        int max_width = 0;
        for (const ConvSpec& b : cfg.multiscale_banks) max_width = std::max(max_width, b.width);
        per_block += max_width - 1;
    }
    if (cfg.single_conv) per_block += cfg.single_conv->width - 1;
    return cfg.fc_window + cfg.num_blocks * per_block;
}

NodeId model_forward(Tape& tape, ModelGraph& model, const Tensor& features,
                     const Tensor* mask, Mode mode, RngStream& rng) {
    const ArchitectureConfig& cfg = model.config;
    if (features.rank() != 3 || features.dim(2) != cfg.input_depth())
        throw DimensionError("model_forward: features " + features.shape_str() + " do not match input depth " +
                             std::to_string(cfg.input_depth()));
    if (mask != nullptr && mask->size() != features.dim(0) * features.dim(1))
        throw DimensionError("model_forward: mask " + mask->shape_str() + " does not cover features " +
                             features.shape_str());

    std::map<std::string, NodeId> p;
    for (const auto& [name, value] : model.params) p.emplace(name, tape.param(name, value));

    auto bn = [&](NodeId x, const std::string& prefix) {
        return tape.batchnorm(x, p.at(prefix + ".gamma"), p.at(prefix + ".beta"), mode,
                              model.state.at(prefix + ".running_mean"),
                              model.state.at(prefix + ".running_var"), mask);
    };
    auto drop = [&](NodeId x) { return tape.dropout(x, cfg.dropout_rate, mode, rng); };

    NodeId h = tape.leaf(features);
    for (int k = 1; k <= cfg.num_blocks; ++k) {
        const std::string block = "block" + std::to_string(k);
        const NodeId block_in = h;
        std::vector<std::pair<NodeId, NodeId>> banks;
        for (const ConvSpec& b : cfg.multiscale_banks) {
            const std::string suffix = std::to_string(b.width);
            banks.emplace_back(p.at(block + ".ms.w" + suffix), p.at(block + ".ms.b" + suffix));
        }
        h = drop(tape.relu(bn(tape.multiscale(h, banks), block + ".ms_bn")));
        if (cfg.single_conv)
            h = drop(tape.relu(bn(tape.conv1d(h, p.at(block + ".single.w"), p.at(block + ".single.b")),
                                  block + ".single_bn")));
        if (cfg.residual_connections && k < cfg.num_blocks) {
            const NodeId src = cfg.residual_source == "input" ? block_in : h;
            h = tape.depth_concat({h, tape.conv1d(src, p.at(block + ".res.w"), p.at(block + ".res.b"))});
        }
    }

    h = tape.window_gather(h, cfg.fc_window);
    for (int j = 1; j <= cfg.fc_layers; ++j) {
        const std::string name = "fc" + std::to_string(j);
        h = drop(tape.relu(tape.dense(h, p.at(name + ".w"), p.at(name + ".b"))));
    }
    return tape.dense(h, p.at("out.w"), p.at("out.b"));
}

Tensor infer_logits(const ModelGraph& model, const Tensor& features) {
    // Inference touches neither parameters nor running statistics.
    ModelGraph& m = const_cast<ModelGraph&>(model);
    Tape tape;
    RngStream rng(0);
    NodeId logits = model_forward(tape, m, features, nullptr, Mode::kInfer, rng);
    return tape.value(logits);
}

Tensor append_label_context(const Tensor& features, const std::vector<int>& labels,
                            const Tensor& mask, int effective_window) {
    if (features.rank() != 3)
        throw DimensionError("append_label_context: features must be [batch, length, depth], got " +
                             features.shape_str());
    if (effective_window < 1)
        throw DimensionError("append_label_context: window must be >= 1, got " +
                             std::to_string(effective_window));
    const std::int64_t B = features.dim(0), L = features.dim(1), D = features.dim(2);
    if (mask.size() != B * L)
        throw DimensionError("append_label_context: mask " + mask.shape_str() +
                             " does not cover features " + features.shape_str());
    if (static_cast<std::int64_t>(labels.size()) != B * L)
        throw DimensionError("append_label_context: got " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(B * L) + " positions");

    constexpr std::int64_t kClasses = 8;
    const std::int64_t shift = (effective_window + 1) / 2;
    Tensor out({B, L, D + kClasses + 1});
    const float* fp = features.data();
    const float* mp = mask.data();
    float* op = out.data();
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t t = 0; t < L; ++t) {
            float* row = op + (b * L + t) * (D + kClasses + 1);
            std::copy(fp + (b * L + t) * D, fp + (b * L + t + 1) * D, row);
            const std::int64_t j = t - shift;
            int label = -1;
            if (j >= 0 && mp[b * L + j] != 0.0f) label = labels[static_cast<std::size_t>(b * L + j)];
            if (label >= 0) {
                if (label >= kClasses)
                    throw DimensionError("append_label_context: label " + std::to_string(label) +
                                         " outside [0, 8)");
                row[D + label] = 1.0f;
            } else {
                row[D + kClasses] = 1.0f;
            }
        }
    }
    return out;
}

std::int64_t param_count(const ModelGraph& model) {
    std::int64_t n = 0;
    for (const auto& [name, value] : model.params) n += value.size();
    return n;
}

std::vector<std::string> maxnorm_param_names(const ModelGraph& model) {
    std::vector<std::string> names;
    for (int j = 1; j <= model.config.fc_layers; ++j)
        names.push_back("fc" + std::to_string(j) + ".w");
    names.push_back("out.w");
    return names;
}

}  // namespace octofold
