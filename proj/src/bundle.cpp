#include "streamgate/bundle.hpp"

#include <cmath>

#include "streamgate/error.hpp"

namespace streamgate {

std::string vocab_path_for(const std::string &checkpoint_path) { return checkpoint_path + ".vocab"; }

namespace {

Parameter meta(const std::string &name, std::vector<double> values) {
    return Parameter("meta." + name, Tensor::vector(std::move(values)));
}

const std::vector<double> *find_meta(const std::vector<Parameter> &tensors, const std::string &name,
                                     std::size_t expected) {
    for (const auto &p : tensors)
        if (p.name == "meta." + name) {
            if (p.value.size() != expected)
                throw FormatError("meta." + name + " has " + std::to_string(p.value.size()) + " entries, expected " +
                                  std::to_string(expected));
            for (double v : p.value.data)
                if (!(v >= 0.0) || v != std::floor(v)) throw FormatError("meta." + name + " holds a non-integer entry");
            return &p.value.data;
        }
    return nullptr;
}

std::size_t as_size(double v) { return static_cast<std::size_t>(v); }

} // namespace

void save_bundle(const std::string &path, const Bundle &b) {
    const auto &e = b.epfe.config;
    const auto &d = b.decoder.config;
    if (d.vocab_size != b.vocab.size())
        throw ConfigError("decoder vocabulary (" + std::to_string(d.vocab_size) + ") and vocab file (" +
                          std::to_string(b.vocab.size()) + ") disagree");
    std::vector<Parameter> metas;
    metas.push_back(meta("epfe", {e.mode == SsmMode::selective ? 1.0 : 0.0, double(e.d_spat), double(e.d_in),
                                  double(e.d_state), double(e.d_out), double(e.seed)}));
    metas.push_back(meta("llm", {double(d.vocab_size), double(d.d_model), double(d.layers), double(d.heads),
                                 double(d.d_ff), double(d.d_perc), double(d.max_seq_len), double(d.seed)}));
    if (b.gate) {
        const auto &g = *b.gate;
        metas.push_back(meta("gate", {double(static_cast<int>(g.config.arch)), double(g.config.layers),
                                      double(static_cast<int>(g.config.init)), double(g.config.seed),
                                      double(g.config.mlp_hidden), double(g.d_token)}));
    }
    ConstParameterList all;
    for (const auto &m : metas) all.push_back(&m);
    for (const auto *p : b.epfe.parameters()) all.push_back(p);
    for (const auto *p : b.decoder.parameters()) all.push_back(p);
    if (b.gate)
        for (const auto *p : b.gate->parameters()) all.push_back(p);
    save_checkpoint(path, all);
    b.vocab.save(vocab_path_for(path));
}

Bundle load_bundle(const std::string &path) {
    const auto tensors = load_checkpoint(path);
    const auto *me = find_meta(tensors, "epfe", 6);
    const auto *ml = find_meta(tensors, "llm", 8);
    if (!me || !ml) throw FormatError(path + ": not a system checkpoint (meta.epfe / meta.llm missing)");
    EpfeConfig ec;
    ec.mode = (*me)[0] == 1.0 ? SsmMode::selective : SsmMode::lti;
    ec.d_spat = as_size((*me)[1]);
    ec.d_in = as_size((*me)[2]);
    ec.d_state = as_size((*me)[3]);
    ec.d_out = as_size((*me)[4]);
    ec.seed = static_cast<std::uint64_t>((*me)[5]);
    DecoderConfig dc;
    dc.vocab_size = as_size((*ml)[0]);
    dc.d_model = as_size((*ml)[1]);
    dc.layers = as_size((*ml)[2]);
    dc.heads = as_size((*ml)[3]);
    dc.d_ff = as_size((*ml)[4]);
    dc.d_perc = as_size((*ml)[5]);
    dc.max_seq_len = as_size((*ml)[6]);
    dc.seed = static_cast<std::uint64_t>((*ml)[7]);
    Bundle b{ssm_params_from(ec, tensors), decoder_from(dc, tensors), Vocab::load(vocab_path_for(path)), std::nullopt};
    if (b.vocab.size() != dc.vocab_size)
        throw FormatError(vocab_path_for(path) + " holds " + std::to_string(b.vocab.size()) + " tokens, checkpoint expects " +
                          std::to_string(dc.vocab_size));
    if (const auto *mg = find_meta(tensors, "gate", 6)) {
        GateConfig gc;
        const int arch = static_cast<int>((*mg)[0]), init = static_cast<int>((*mg)[2]);
        if (arch > static_cast<int>(GateArch::cross_attention) || init > static_cast<int>(InitStrategy::early_block))
            throw FormatError("meta.gate names an unknown gate layout");
        gc.arch = static_cast<GateArch>(arch);
        gc.layers = as_size((*mg)[1]);
        gc.init = static_cast<InitStrategy>(init);
        gc.seed = static_cast<std::uint64_t>((*mg)[3]);
        gc.mlp_hidden = as_size((*mg)[4]);
        b.gate = gate_from(gc, dc, as_size((*mg)[5]), tensors);
    }
    return b;
}

} // namespace streamgate
