// streamgate command-line front end.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <utility>

#include "streamgate/bundle.hpp"
#include "streamgate/datagen.hpp"
#include "streamgate/error.hpp"
#include "streamgate/metrics.hpp"
#include "streamgate/pipeline.hpp"
#include "streamgate/remote_backend.hpp"
#include "streamgate/training.hpp"

using namespace streamgate;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const std::string &path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path + "'");
    return out;
}

json read_json(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw FormatError(path + ": " + e.what());
    }
}

std::vector<double> parse_list(const std::string &s) {
    std::vector<double> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception &) {
            throw ConfigError("bad number '" + item + "' in list");
        }
    }
    return out;
}

const char *decision_name(Decision d) { return d == Decision::respond ? "respond" : "silence"; }

struct GateFlags {
    std::string arch = "shallow";
    std::size_t layers = 4;
    std::string init = "early";
    std::uint64_t seed = 3;

    GateConfig config() const {
        GateConfig g;
        g.arch = parse_gate_arch(arch);
        g.layers = layers;
        g.init = parse_init_strategy(init);
        g.seed = seed;
        return g;
    }
};

void add_gate_flags(CLI::App *app, GateFlags &g) {
    app->add_option("--gate-arch", g.arch, "shallow, linear, mlp, transformer or xattn")
        ->check(CLI::IsMember({"shallow", "linear", "mlp", "transformer", "xattn"}));
    app->add_option("--gate-layers", g.layers, "decoder layers copied into the shallow gate");
    app->add_option("--gate-init", g.init, "random, skip or early")->check(CLI::IsMember({"random", "skip", "early"}));
    app->add_option("--gate-seed", g.seed, "seed for freshly initialized gate weights");
}

// ---- subcommands -----------------------------------------------------------------

void cmd_gen_stream(const std::string &spec_path, const std::string &out, const std::string &captions_out) {
    const auto spec = read_json(spec_path).get<SyntheticStreamSpec>();
    const auto frames = generate_synthetic_stream(spec);
    write_feature_file(out, frames);
    if (!captions_out.empty()) write_captions_jsonl(captions_out, synthetic_captions(spec));
    std::cout << "wrote " << frames.size() << " frames to " << out << '\n';
}

void cmd_synth_corpus(const SyntheticCorpusConfig &cfg, const std::string &dir) {
    fs::create_directories(dir);
    std::vector<StreamSample> samples;
    for (std::size_t i = 0; i < cfg.num_streams; ++i) {
        const auto spec = random_stream_spec(cfg, i);
        const std::string stem = "stream_" + std::to_string(i);
        const auto captions = synthetic_captions(spec);
        write_captions_jsonl((fs::path(dir) / (stem + ".captions.jsonl")).string(), captions);
        auto frames = generate_synthetic_stream(spec);
        write_feature_file((fs::path(dir) / (stem + ".sgf")).string(), frames);
        samples.push_back(build_stream_sample(captions, std::move(frames), cfg.prompt, stem + ".sgf"));
    }
    write_dataset_jsonl((fs::path(dir) / "dataset.jsonl").string(), samples);
    const auto st = imbalance_stats(samples);
    std::cout << "wrote " << samples.size() << " streams to " << dir << " (silence:respond = " << st.ratio_r << ":1)\n";
}

void cmd_build_dataset(const std::string &captions, const std::string &features, const std::string &prompt,
                       const std::string &out, bool append) {
    auto frames = load_feature_file(features);
    std::string ref = features;
    const auto out_dir = fs::absolute(out).parent_path();
    const auto rel = fs::relative(fs::absolute(features), out_dir);
    if (!rel.empty() && rel.native().rfind("..", 0) != 0) ref = rel.string();
    auto sample = build_stream_sample(read_captions_jsonl(captions), std::move(frames), prompt, ref);
    std::vector<StreamSample> all;
    if (append && fs::exists(out)) all = read_dataset_jsonl(out, false);
    all.push_back(std::move(sample));
    write_dataset_jsonl(out, all);
    const auto &s = all.back();
    std::cout << "events: " << s.events.size() << ", frames: " << s.labels.size() << '\n';
}

void cmd_train(int stage, const std::string &dataset, const std::string &config, const std::string &out,
               const std::string &init, const GateFlags &gf, const std::string &epfe_mode) {
    TrainConfig cfg = config.empty() ? TrainConfig{} : load_train_config(config);
    cfg.stage = stage;
    validate(cfg);
    const auto data = read_dataset_jsonl(dataset);
    const auto stats = imbalance_stats(data);
    std::cout << "dataset: " << data.size() << " streams, silence:respond = " << stats.ratio_r << ":1\n";
    TrainReport report;
    if (stage == 1) {
        Bundle b;
        if (!init.empty()) {
            b = load_bundle(init);
        } else {
            b.vocab = Vocab::from_corpus(corpus_texts(data));
            EpfeConfig ec;
            ec.mode = parse_ssm_mode(epfe_mode);
            if (!data.empty() && !data.front().frames.empty()) ec.d_spat = data.front().frames.front().features.size();
            b.epfe = make_ssm_params(ec);
            DecoderConfig dc;
            dc.vocab_size = b.vocab.size();
            dc.d_perc = ec.d_out;
            b.decoder = make_decoder(dc);
        }
        report = train_stage1(b.epfe, b.decoder, b.vocab, data, cfg);
        save_bundle(out, b);
    } else {
        if (init.empty()) throw ConfigError("stage 2 needs --init <stage-1 checkpoint>");
        Bundle b = load_bundle(init);
        const auto before = parameter_checksum(std::as_const(b.epfe).parameters());
        b.gate = make_gate(gf.config(), b.decoder);
        report = train_stage2(*b.gate, b.epfe, b.vocab, data, cfg);
        if (parameter_checksum(std::as_const(b.epfe).parameters()) != before) throw TrainingError("stage 2 changed the extractor");
        std::cout << "W_s = " << report.w_s << '\n';
        save_bundle(out, b);
    }
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
        std::cout << "epoch " << e + 1 << " loss " << report.epoch_loss[e] << '\n';
    std::cout << "steps " << report.steps << ", " << report.wall_s << " s, checksum " << std::hex << report.checksum
              << std::dec << '\n';
}

void write_run(const std::string &out, const RunResult &r) {
    auto f = open_out(out);
    for (const auto &e : r.log) {
        json j{{"type", "frame"},          {"frame_index", e.frame_index}, {"timestamp_s", e.timestamp_s},
               {"decision", decision_name(e.decision)}, {"logits", e.logits},
               {"perception_us", e.perception_us}, {"gate_us", e.gate_us}};
        j["cognition_us"] = e.cognition_us ? json(*e.cognition_us) : json(nullptr);
        f << j.dump() << '\n';
    }
    for (const auto &t : r.turns)
        f << json{{"type", "turn"}, {"trigger_frame", t.trigger_frame}, {"trigger_time_s", t.trigger_time_s}, {"text", t.text}}
                 .dump()
          << '\n';
}

StreamRun read_run(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    StreamRun run;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            const auto type = j.at("type").get<std::string>();
            if (type == "frame") run.decisions.push_back(j.at("decision").get<std::string>() == "respond" ? 1 : 0);
            else if (type == "turn")
                run.turns.push_back({j.at("trigger_frame").get<std::uint64_t>(), j.at("trigger_time_s").get<double>(),
                                     j.at("text").get<std::string>()});
        } catch (const json::exception &e) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return run;
}

std::pair<std::string, int> parse_url(const std::string &url) {
    std::string rest = url;
    if (auto p = rest.find("://"); p != std::string::npos) rest = rest.substr(p + 3);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw ConfigError("backend URL needs host:port, got '" + url + "'");
    return {rest.substr(0, colon), std::stoi(rest.substr(colon + 1))};
}

void cmd_run(const std::string &ckpt, const std::string &stream, const std::string &prompt, const std::string &out,
             const std::string &cognition, const std::string &pool_strategy, std::size_t pool_k,
             const std::string &backend_url, std::size_t max_len) {
    const Bundle b = load_bundle(ckpt);
    if (!b.gate) throw ConfigError(ckpt + " has no gate; train stage 2 first");
    const auto frames = load_feature_file(stream);
    SessionOptions so;
    so.cognition = parse_cognition_mode(cognition);
    so.pooling = {parse_pool_strategy(pool_strategy), pool_k};
    so.max_response_len = max_len;
    std::unique_ptr<CognitionBackend> backend;
    if (backend_url.empty()) {
        backend = std::make_unique<ToyDecoderBackend>(b.decoder, b.vocab);
    } else {
        const auto [host, port] = parse_url(backend_url);
        backend = std::make_unique<RemoteBackend>(host, port, b.vocab);
    }
    StreamSession session(b.epfe, model_gate(*b.gate), backend.get(), b.vocab.encode(prompt), so);
    const auto r = run_stream(session, frames);
    write_run(out, r);
    std::cout << frames.size() << " frames, " << r.turns.size() << " turns\n";
}

void cmd_eval(const std::string &run_path, const std::string &truth_path, std::size_t sample, const std::string &out,
              std::size_t window, const std::string &ckpt) {
    const auto run = read_run(run_path);
    const auto data = read_dataset_jsonl(truth_path, true);
    if (sample >= data.size()) throw InputError("dataset has only " + std::to_string(data.size()) + " samples");
    const auto &s = data[sample];
    StreamTruth truth;
    truth.labels = s.labels;
    for (const auto &f : s.frames) truth.frame_times.push_back(f.timestamp_s);
    for (const auto &e : s.events) {
        truth.event_frames.push_back(e.anchor_frame);
        truth.event_texts.push_back(e.text);
    }
    EvalOptions opts;
    opts.window_w = window;
    EvalReport r = evaluate_stream(run, truth, opts);
    if (!ckpt.empty()) {
        const Bundle b = load_bundle(ckpt);
        r.ppl = std::exp(stage1_loss(b.epfe, b.decoder, b.vocab, std::span<const StreamSample>(&s, 1), PoolingPolicy{}));
    }
    const json j = r;
    open_out(out) << j.dump(2) << '\n';
    std::cout << j.dump(2) << '\n';
}

void cmd_heatmap(const std::string &ckpt, const std::string &stream, const std::string &out) {
    const Bundle b = load_bundle(ckpt);
    const auto frames = load_feature_file(stream);
    const auto tokens = epfe_run(b.epfe, frames);
    const Tensor m = token_similarity_matrix(tokens);
    auto f = open_out(out);
    f.precision(6);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) f << (j ? "," : "") << m.at(i, j);
        f << '\n';
    }
    std::cout << "wrote " << m.rows() << "x" << m.cols() << " similarity matrix\n";
}

void cmd_bench(const std::string &ckpt, const std::string &mode, const std::string &fps, double duration,
               const std::string &out, const std::string &cognition, const std::string &prompt) {
    Bundle b;
    if (!ckpt.empty()) {
        b = load_bundle(ckpt);
    } else {
        SyntheticCorpusConfig cc;
        b.vocab = Vocab::from_corpus(std::vector<std::string>{cc.prompt, class_caption(0), class_caption(1), class_caption(2)});
        b.epfe = make_ssm_params(EpfeConfig{});
        DecoderConfig dc;
        dc.vocab_size = b.vocab.size();
        b.decoder = make_decoder(dc);
    }
    if (!b.gate) b.gate = gate_init(b.decoder, 4, InitStrategy::early_block);
    BenchOptions o;
    o.modes.clear();
    if (mode == "gated" || mode == "both") o.modes.push_back(BenchMode::event_gated);
    if (mode == "perstep" || mode == "both") o.modes.push_back(BenchMode::per_step);
    o.fps = parse_list(fps);
    o.duration_s = duration;
    o.cognition = parse_cognition_mode(cognition);
    BenchSystem sys{&b.epfe, &*b.gate, &b.decoder, &b.vocab, prompt.empty() ? SyntheticCorpusConfig{}.prompt : prompt};
    const auto results = bench_throughput(sys, o);
    auto f = open_out(out);
    f << "mode,fps,wall_s_per_video_second\n";
    for (const auto &r : results) {
        f << to_string(r.mode) << ',' << r.fps_in << ',' << r.wall_s_per_video_second << '\n';
        std::cout << to_string(r.mode) << " @" << r.fps_in << " fps: " << r.wall_s_per_video_second
                  << " s per video second" << (r.realtime() ? " (real time)" : "") << '\n';
    }
}

void cmd_serve(const std::string &ckpt, const std::string &host, int port) {
    const Bundle b = load_bundle(ckpt);
    ToyDecoderBackend backend(b.decoder, b.vocab);
    BackendServer server(backend);
    const int bound = server.bind(host, port);
    std::cout << "serving on " << host << ':' << bound << std::endl;
    server.listen();
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Event-gated streaming video dialogue toolkit"};
    app.require_subcommand(1);

    std::string spec, out, captions_out;
    auto *gen = app.add_subcommand("gen-stream", "generate a synthetic feature stream");
    gen->add_option("--spec", spec, "stream spec JSON")->required();
    gen->add_option("--out", out, "SGF1 feature file")->required();
    gen->add_option("--captions", captions_out, "also write the stream's captions (JSONL)");

    SyntheticCorpusConfig corpus;
    std::string corpus_dir;
    auto *synth = app.add_subcommand("synth-corpus", "write a synthetic benchmark corpus");
    synth->add_option("--out-dir", corpus_dir, "output directory")->required();
    synth->add_option("--streams", corpus.num_streams);
    synth->add_option("--frames", corpus.frames_per_stream);
    synth->add_option("--events", corpus.events_per_stream);
    synth->add_option("--noise", corpus.noise_std);
    synth->add_option("--seed", corpus.seed);
    synth->add_option("--prompt", corpus.prompt);

    std::string captions, features, prompt;
    bool append = false;
    auto *build = app.add_subcommand("build-dataset", "label a captioned stream");
    build->add_option("--captions", captions, "caption JSONL")->required();
    build->add_option("--features", features, "SGF1 feature file")->required();
    build->add_option("--prompt", prompt, "user query")->required();
    build->add_option("--out", out, "dataset JSONL")->required();
    build->add_flag("--append", append, "append to an existing dataset");

    int stage = 1;
    std::string dataset, config, init, epfe_mode = "selective";
    GateFlags gate_flags;
    auto *train = app.add_subcommand("train", "run a training stage");
    train->add_option("--stage", stage)->required()->check(CLI::IsMember({1, 2}));
    train->add_option("--dataset", dataset)->required();
    train->add_option("--config", config, "key = value training config");
    train->add_option("--out", out, "output checkpoint")->required();
    train->add_option("--init", init, "checkpoint to start from (required for stage 2)");
    train->add_option("--epfe-mode", epfe_mode)->check(CLI::IsMember({"lti", "selective"}));
    add_gate_flags(train, gate_flags);

    std::string ckpt, stream, cognition = "blocking", pool_strategy = "uniform", backend_url;
    std::size_t pool_k = 16, max_len = 8;
    auto *run = app.add_subcommand("run", "stream a feature file through the gated system");
    run->add_option("--checkpoint", ckpt)->required();
    run->add_option("--stream", stream)->required();
    run->add_option("--prompt", prompt)->required();
    run->add_option("--out", out, "JSONL of frames and turns")->required();
    run->add_option("--cognition", cognition)->check(CLI::IsMember({"blocking", "async"}));
    run->add_option("--pool-strategy", pool_strategy)->check(CLI::IsMember({"uniform", "last_k", "stride"}));
    run->add_option("--pool-k", pool_k);
    run->add_option("--max-len", max_len);
    run->add_option("--backend-url", backend_url, "remote cognition backend host:port");

    std::string run_path, truth;
    std::size_t sample = 0, window = 0;
    auto *eval = app.add_subcommand("eval", "score a run against a labelled stream");
    eval->add_option("--run", run_path)->required();
    eval->add_option("--truth", truth, "dataset JSONL")->required();
    eval->add_option("--sample", sample, "line of the dataset to compare with");
    eval->add_option("--window", window, "TriggerAcc window in frames");
    eval->add_option("--checkpoint", ckpt, "enables perplexity");
    eval->add_option("--out", out, "report JSON")->required();

    auto *heat = app.add_subcommand("heatmap", "perception-token cosine similarity CSV");
    heat->add_option("--checkpoint", ckpt)->required();
    heat->add_option("--stream", stream)->required();
    heat->add_option("--out", out)->required();

    std::string mode = "gated", fps = "5,10,30,60,100";
    double duration = 10.0;
    auto *bench = app.add_subcommand("bench", "throughput across frame rates");
    bench->add_option("--mode", mode)->check(CLI::IsMember({"gated", "perstep", "both"}));
    bench->add_option("--fps", fps);
    bench->add_option("--duration", duration);
    bench->add_option("--checkpoint", ckpt, "trained system (untrained toy weights otherwise)");
    bench->add_option("--cognition", cognition)->check(CLI::IsMember({"blocking", "async"}));
    bench->add_option("--prompt", prompt);
    bench->add_option("--out", out, "CSV")->required();

    std::string host = "127.0.0.1";
    int port = 8080;
    auto *serve = app.add_subcommand("serve-backend", "serve the checkpoint's decoder over HTTP");
    serve->add_option("--checkpoint", ckpt)->required();
    serve->add_option("--host", host);
    serve->add_option("--port", port);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) cmd_gen_stream(spec, out, captions_out);
        else if (*synth) cmd_synth_corpus(corpus, corpus_dir);
        else if (*build) cmd_build_dataset(captions, features, prompt, out, append);
        else if (*train) cmd_train(stage, dataset, config, out, init, gate_flags, epfe_mode);
        else if (*run) cmd_run(ckpt, stream, prompt, out, cognition, pool_strategy, pool_k, backend_url, max_len);
        else if (*eval) cmd_eval(run_path, truth, sample, out, window, ckpt);
        else if (*heat) cmd_heatmap(ckpt, stream, out);
        else if (*bench) cmd_bench(ckpt, mode, fps, duration, out, cognition, prompt);
        else if (*serve) cmd_serve(ckpt, host, port);
    } catch (const Error &e) {
        std::cerr << "error (" << e.kind() << "): " << e.what() << '\n';
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
