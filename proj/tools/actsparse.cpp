// actsparse: command-line driver for the activation-sparsity pipeline.
//
// Exit codes: 0 success, 1 library error, 2 usage error. Every report is
// written atomically. Options may also come from a JSON file given with
// --config: top-level keys set global options, and an object keyed by a
// subcommand name sets that subcommand's options.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "actsparse/actsparse.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace actsparse;

namespace {

// Top-level keys are global options; each nested object holds the options of
// the subcommand with that name. Only the invoked subcommand's section is
// applied. The other sections are checked for unknown keys.
class JsonConfig : public CLI::Config {
 public:
  JsonConfig(const CLI::App& root, std::string active) : root_(root), active_(std::move(active)) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j;
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (opt->count() > 0)
        j[name] = opt->results().size() == 1 ? json(opt->results()[0]) : json(opt->results());
      else if (default_also && !opt->get_default_str().empty())
        j[name] = opt->get_default_str();
    }
    for (const CLI::App* sub : app->get_subcommands({})) {
      json s = json::parse(to_config(sub, default_also, false, ""));
      if (!s.empty()) j[sub->get_name()] = s;
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    json applied = json::object();
    for (const auto& [key, v] : j.items()) {
      if (!v.is_object() || key == active_) {
        applied[key] = v;
        continue;
      }
      const CLI::App* sub = root_.get_subcommand_no_throw(key);
      if (!sub) throw CLI::ConfigError("unknown config section: " + key);
      for (const auto& [opt, unused] : v.items())
        if (!sub->get_option_no_throw("--" + opt)) throw CLI::ConfigError("unknown config key: " + key + "." + opt);
    }
    std::vector<CLI::ConfigItem> items;
    add_items(applied, {}, items);
    return items;
  }

 private:
  const CLI::App& root_;
  std::string active_;

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }

  static void add_items(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, v] : obj.items()) {
      if (v.is_object()) {
        auto p = parents;
        p.push_back(key);
        add_items(v, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (v.is_array())
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      else
        item.inputs.push_back(scalar(v));
      out.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::uint64_t seed = 1;
  bool omit_timing = false;
};

TokenSeq read_tokens(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return TokenSeq(bytes.begin(), bytes.end());
}

// A single forward pass sees at most max_seq_len tokens; longer inputs are cut.
TokenSeq read_window(const fs::path& path, const ModelConfig& c) {
  TokenSeq t = read_tokens(path);
  if (t.size() > c.max_seq_len) t.resize(c.max_seq_len);
  return t;
}

void write_json(const fs::path& path, const json& j) { io::write_text_atomic(path, j.dump(2) + "\n"); }

std::set<Component> components_of(const std::vector<std::string>& names) {
  std::set<Component> out;
  for (const auto& n : names) out.insert(parse_component(n));
  return out;
}

// FFN-hidden enforcement from a threshold file; no enforcement without one.
SparsityConfig sparsity_from(const std::string& thresholds) {
  SparsityConfig cfg;
  if (thresholds.empty())
    cfg.enforce_at.clear();
  else
    cfg.table = load_thresholds(thresholds);
  return cfg;
}

std::vector<std::size_t> all_layers(const ModelConfig& c) {
  std::vector<std::size_t> v(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) v[l] = l;
  return v;
}

std::vector<VariantSpec> variant_specs(const std::vector<double>& similarities, std::uint64_t seed) {
  std::vector<VariantSpec> out;
  for (double s : similarities) out.push_back({s, seed, Perturbation::RandomByteReplace});
  return out;
}

std::string fmt_similarity(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

// Each subcommand registers its options and runs after a successful parse.
struct Command {
  CLI::App* app = nullptr;
  virtual ~Command() = default;
  virtual void run(const Globals& g) = 0;
};

struct Train : Command {
  std::string corpus, out, report, loss_csv;
  std::size_t steps = 2000, layers = 2, d_model = 64, heads = 4, d_ff = 256, max_seq_len = 256;
  std::string ffn = "swiglu";
  TrainHyperparams hp;
  double holdout = 0.1;

  explicit Train(CLI::App& root) {
    app = root.add_subcommand("train", "train a byte-level model on a text corpus");
    app->add_option("--corpus", corpus, "training text")->required()->check(CLI::ExistingFile);
    app->add_option("--out", out, "weights file to write")->required();
    app->add_option("--report", report, "JSON training report");
    app->add_option("--loss-csv", loss_csv, "per-step loss CSV");
    app->add_option("--steps", steps)->capture_default_str();
    app->add_option("--layers", layers)->capture_default_str();
    app->add_option("--d-model", d_model)->capture_default_str();
    app->add_option("--heads", heads)->capture_default_str();
    app->add_option("--d-ff", d_ff)->capture_default_str();
    app->add_option("--max-seq-len", max_seq_len)->capture_default_str();
    app->add_option("--ffn", ffn, "relu | new_gelu | swiglu")->capture_default_str();
    app->add_option("--lr", hp.lr)->capture_default_str();
    app->add_option("--batch", hp.batch)->capture_default_str();
    app->add_option("--context", hp.context)->capture_default_str();
    app->add_option("--holdout", holdout, "trailing corpus fraction kept out of training")
        ->check(CLI::Range(0.0, 0.5))
        ->capture_default_str();
  }

  void run(const Globals& g) override {
    ModelConfig c;
    c.n_layers = layers;
    c.d_model = d_model;
    c.n_heads = heads;
    c.d_ff = d_ff;
    c.max_seq_len = max_seq_len;
    c.ffn_variant = parse_ffn_variant(ffn);
    c.seed = g.seed;
    validate(c);
    const TokenSeq all = read_tokens(corpus);
    const auto cut = static_cast<std::size_t>(static_cast<double>(all.size()) * (1.0 - holdout));
    const std::span<const Token> train_part(all.data(), cut), held(all.data() + cut, all.size() - cut);

    std::ostringstream losses;
    losses.precision(9);
    losses << "step,loss\n";
    const WeightSet w = train(c, train_part, steps, hp, [&](std::size_t step, double loss) {
      losses << step << "," << loss << "\n";
    });
    save_weights(out, c, w);
    if (!loss_csv.empty()) io::write_text_atomic(loss_csv, losses.str());
    if (!report.empty()) {
      json r = {{"model_hash", model_fingerprint(c, w)},
                {"config", to_json(c)},
                {"steps", steps},
                {"lr", hp.lr},
                {"batch", hp.batch},
                {"context", hp.context},
                {"train_bytes", train_part.size()},
                {"heldout_bytes", held.size()}};
      if (held.size() >= 2) {
        r["heldout_ppl_init"] = perplexity(c, init_weights(c), held).perplexity;
        r["heldout_ppl"] = perplexity(c, w, held).perplexity;
      }
      write_json(report, r);
    }
  }
};

struct Collect : Command {
  std::string weights, corpus, out, sparsity_report;
  std::size_t segment_len = kDefaultSegmentLen, max_segments = 0;
  std::vector<std::string> taps{"ffn_hidden"};
  std::vector<std::size_t> layers;
  bool append = false;

  explicit Collect(CLI::App& root) {
    app = root.add_subcommand("collect", "record activations at FFN hook points");
    app->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
    app->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
    app->add_option("--out", out, "activation store to write")->required();
    app->add_option("--segment-len", segment_len)->capture_default_str();
    app->add_option("--max-segments", max_segments, "0 = all");
    app->add_option("--taps", taps, "components to record")->delimiter(',')->capture_default_str();
    app->add_option("--layers", layers, "default: all")->delimiter(',');
    app->add_flag("--append", append, "add records to an existing store");
    app->add_option("--sparsity-report", sparsity_report, "JSON natural sparsity per hook point");
  }

  void run(const Globals&) override {
    const auto [c, w] = load_weights(weights);
    auto segments = segment_tokens(read_tokens(corpus), segment_len);
    if (max_segments > 0 && segments.size() > max_segments) segments.resize(max_segments);
    const auto use_layers = layers.empty() ? all_layers(c) : layers;
    std::set<HookPoint> hooks;
    for (auto l : use_layers)
      for (auto comp : components_of(taps)) hooks.insert({l, comp});
    ActivationStore s = collect(c, w, segments, hooks, segment_len);
    if (append) {
      s = append_to_store(out, s);
    } else {
      save_store(out, s);
    }
    if (!sparsity_report.empty()) {
      json rows = json::array();
      for (const auto& hp : s.hook_points())
        rows.push_back({{"layer", hp.layer},
                        {"component", std::string(to_string(hp.component))},
                        {"natural_sparsity", natural_sparsity(s, hp.layer, hp.component)}});
      write_json(sparsity_report, {{"model_hash", s.model_config_hash},
                                   {"corpus_hash", s.corpus_hash},
                                   {"segments", segments.size()},
                                   {"hooks", rows}});
    }
  }
};

struct WeightHist : Command {
  std::string weights, bins, out;

  explicit WeightHist(CLI::App& root) {
    app = root.add_subcommand("weight-hist", "histogram of signed weight values per tensor group");
    app->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
    app->add_option("--bins", bins, "JSON {\"edges\": [...]}")->check(CLI::ExistingFile);
    app->add_option("--out", out, "CSV to write")->required();
  }

  void run(const Globals&) override {
    const auto [c, w] = load_weights(weights);
    HistogramSpec spec = default_weight_bins();
    if (!bins.empty()) {
      const auto bytes = io::read_file(bins);
      spec = histogram_spec_from_json(json::parse(bytes.begin(), bytes.end()));
    }
    io::write_text_atomic(out, histogram_csv(weight_histogram(c, w, spec)));
  }
};

struct ActCdf : Command {
  std::string store, component = "ffn_hidden", out;
  std::size_t layer = 0, points = 1000;

  explicit ActCdf(CLI::App& root) {
    app = root.add_subcommand("act-cdf", "CDF of activation magnitudes at one hook point");
    app->add_option("--store", store)->required()->check(CLI::ExistingFile);
    app->add_option("--layer", layer)->capture_default_str();
    app->add_option("--component", component)->capture_default_str();
    app->add_option("--points", points)->capture_default_str();
    app->add_option("--out", out, "CSV to write")->required();
  }

  void run(const Globals&) override {
    const auto s = load_store(store);
    io::write_text_atomic(out, cdf_csv(activation_cdf(s, layer, parse_component(component)), points));
  }
};

struct Calibrate : Command {
  std::string store, out;
  double alpha = 0.5;
  std::vector<std::string> components{"ffn_hidden"};

  explicit Calibrate(CLI::App& root) {
    app = root.add_subcommand("calibrate", "percentile thresholds from an activation store");
    app->add_option("--store", store)->required()->check(CLI::ExistingFile);
    app->add_option("--alpha", alpha)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    app->add_option("--components", components)->delimiter(',')->capture_default_str();
    app->add_option("--out", out, "threshold JSON to write")->required();
  }

  void run(const Globals&) override {
    save_thresholds(out, compute_thresholds(load_store(store), alpha, components_of(components)));
  }
};

struct EvalPpl : Command {
  std::string weights, corpus, thresholds, out;
  std::vector<std::string> enforce_at{"ffn_hidden"};
  bool skip = false;
  std::size_t window = 0;

  explicit EvalPpl(CLI::App& root) {
    app = root.add_subcommand("eval-ppl", "perplexity, optionally with threshold enforcement");
    app->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
    app->add_option("--corpus", corpus)->required()->check(CLI::ExistingFile);
    app->add_option("--thresholds", thresholds, "threshold JSON; dense when absent")->check(CLI::ExistingFile);
    app->add_option("--enforce-at", enforce_at)->delimiter(',')->capture_default_str();
    app->add_flag("--skip-compute", skip, "skip inactive neurons in the down projection");
    app->add_option("--window", window, "evaluation window, default max_seq_len");
    app->add_option("--out", out, "JSON report to write")->required();
  }

  void run(const Globals&) override {
    const auto [c, w] = load_weights(weights);
    const TokenSeq toks = read_tokens(corpus);
    std::optional<SparsityConfig> cfg;
    if (!thresholds.empty()) {
      cfg.emplace();
      cfg->table = load_thresholds(thresholds);
      cfg->enforce_at = components_of(enforce_at);
      cfg->skip_compute = skip;
    }
    write_json(out, to_json(perplexity(c, w, toks, cfg ? &*cfg : nullptr, window)));
  }
};

struct Sweep : Command {
  std::string weights, store, corpus, out, report;
  std::vector<double> alphas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<std::string> enforce_at{"ffn_hidden"};
  bool skip = false;
  std::size_t window = 0;

  explicit Sweep(CLI::App& root) {
    app = root.add_subcommand("sweep", "perplexity across sparsity levels");
    app->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
    app->add_option("--store", store, "calibration activations")->required()->check(CLI::ExistingFile);
    app->add_option("--corpus", corpus, "evaluation text")->required()->check(CLI::ExistingFile);
    app->add_option("--alphas", alphas, "ascending, starting at 0")->delimiter(',')->capture_default_str();
    app->add_option("--enforce-at", enforce_at)->delimiter(',')->capture_default_str();
    app->add_flag("--skip-compute", skip);
    app->add_option("--window", window);
    app->add_option("--out", out, "CSV to write")->required();
    app->add_option("--report", report, "full JSON report");
  }

  void run(const Globals& g) override {
    const auto [c, w] = load_weights(weights);
    const auto rep = actsparse::sweep(c, w, load_store(store), read_tokens(corpus), alphas,
                                      components_of(enforce_at), skip, window);
    io::write_text_atomic(out, sweep_csv(rep, !g.omit_timing));
    if (!report.empty()) write_json(report, to_json(rep, !g.omit_timing));
  }
};

struct Variants : Command {
  std::string input, out_dir;
  std::vector<double> similarities{0.95, 0.9, 0.85, 0.8, 0.75, 0.7};

  explicit Variants(CLI::App& root) {
    app = root.add_subcommand("variants", "write perturbed copies of an input");
    app->add_option("--input", input)->required()->check(CLI::ExistingFile);
    app->add_option("--similarities", similarities)->delimiter(',')->capture_default_str();
    app->add_option("--out-dir", out_dir)->required();
  }

  void run(const Globals& g) override {
    const TokenSeq base = read_tokens(input);
    fs::create_directories(out_dir);
    json listing = json::array();
    for (const auto& spec : variant_specs(similarities, g.seed)) {
      const TokenSeq v = make_variant(base, spec);
      const std::string name = "variant_" + fmt_similarity(spec.similarity) + ".txt";
      io::write_file_atomic(fs::path(out_dir) / name, v);
      listing.push_back({{"similarity", spec.similarity},
                         {"file", name},
                         {"edits", variant_edit_count(spec.similarity, base.size())}});
    }
    write_json(fs::path(out_dir) / "variants.json",
               {{"input_hash", hash_bytes_hex(base)}, {"seed", g.seed}, {"variants", listing}});
  }
};

struct Match : Command {
  std::string mask_a, mask_b;
  std::string weights, corpus, thresholds, out, cache, layer1, masks_dir;
  std::size_t samples = 12, sample_len = 0;
  double alpha = 0.5;
  std::vector<double> similarities{1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7};
  std::vector<std::size_t> layers;

  explicit Match(CLI::App& root) {
    app = root.add_subcommand("match", "activation-pattern match rates (two masks, or a full study)");
    auto* a = app->add_option("--mask-a", mask_a)->check(CLI::ExistingFile);
    app->add_option("--mask-b", mask_b)->check(CLI::ExistingFile)->needs(a);
    a->needs(app->get_option("--mask-b"));
    auto* wt = app->add_option("--weights", weights)->check(CLI::ExistingFile)->excludes(a);
    app->add_option("--corpus", corpus, "samples are its first full segments")->check(CLI::ExistingFile)->needs(wt);
    wt->needs(app->get_option("--corpus"));
    app->add_option("--samples", samples)->capture_default_str();
    app->add_option("--sample-len", sample_len, "default: max_seq_len");
    app->add_option("--alpha", alpha, "calibrated on the samples when no thresholds are given")->capture_default_str();
    app->add_option("--thresholds", thresholds)->check(CLI::ExistingFile);
    app->add_option("--similarities", similarities)->delimiter(',')->capture_default_str();
    app->add_option("--layers", layers)->delimiter(',');
    app->add_option("--out", out, "CSV (study) or JSON (two masks)")->required();
    app->add_option("--cache", cache, "write a pattern-cache predictor built from the samples");
    app->add_option("--layer1", layer1, "write a first-layer association predictor");
    app->add_option("--masks-dir", masks_dir, "write every sample's and variant's per-layer masks");
  }

  void run(const Globals& g) override {
    if (!mask_a.empty()) {
      const auto e = match_rate(load_mask(mask_a), load_mask(mask_b));
      write_json(out, {{"match", e.match}, {"recall", e.recall}});
      return;
    }
    require(!weights.empty(), ErrorCode::InvalidArgument, "match needs --mask-a/--mask-b or --weights/--corpus");
    const auto [c, w] = load_weights(weights);
    const std::size_t len = sample_len ? sample_len : c.max_seq_len;
    std::vector<TokenSeq> picked;
    for (auto& seg : segment_tokens(read_tokens(corpus), len))
      if (seg.size() == len && picked.size() < samples) picked.push_back(std::move(seg));
    require(!picked.empty(), ErrorCode::InvalidArgument, "corpus shorter than one sample");
    const auto specs = variant_specs(similarities, g.seed);
    const auto study = thresholds.empty() ? pattern_study(c, w, picked, specs, alpha, layers)
                                          : pattern_study(c, w, picked, specs, load_thresholds(thresholds), layers);
    io::write_text_atomic(out, study_csv(study));
    if (!cache.empty()) write_json(cache, to_json(build_pattern_cache(study)));
    if (!layer1.empty()) write_json(layer1, to_json(build_layer1_predictor(study)));
    if (!masks_dir.empty()) {
      fs::create_directories(masks_dir);
      auto dump = [&](const PatternRecord& r, const std::string& stem) {
        for (std::size_t i = 0; i < r.masks.size(); ++i)
          save_mask(fs::path(masks_dir) / (stem + "_layer" + std::to_string(r.layers[i]) + ".mask"), r.masks[i]);
        io::write_file_atomic(fs::path(masks_dir) / (stem + ".txt"), r.tokens);
      };
      for (const auto& r : study.baselines) dump(r, "sample" + std::to_string(r.sample_id));
      for (const auto& r : study.variants)
        dump(r, "sample" + std::to_string(r.sample_id) + "_s" + fmt_similarity(r.similarity));
    }
  }
};

struct Heatmap : Command {
  std::string mask, weights, input, thresholds, mode = "mask", out;
  std::size_t layer = 0, token_start = 0, neuron_start = 0, size = 25;

  explicit Heatmap(CLI::App& root) {
    app = root.add_subcommand("heatmap", "token-by-neuron crop of a mask or of hidden activations");
    auto* m = app->add_option("--mask", mask, "per-token mask file")->check(CLI::ExistingFile);
    auto* wt = app->add_option("--weights", weights)->check(CLI::ExistingFile)->excludes(m);
    app->add_option("--input", input, "first max_seq_len bytes are used")->check(CLI::ExistingFile)->needs(wt);
    wt->needs(app->get_option("--input"));
    app->add_option("--thresholds", thresholds, "enforce before cropping")->check(CLI::ExistingFile)->needs(wt);
    app->add_option("--layer", layer)->capture_default_str();
    app->add_option("--mode", mode, "mask | magnitude")->check(CLI::IsMember({"mask", "magnitude"}))->capture_default_str();
    app->add_option("--token-start", token_start)->capture_default_str();
    app->add_option("--neuron-start", neuron_start)->capture_default_str();
    app->add_option("--size", size, "window edge length")->capture_default_str();
    app->add_option("--out", out, "CSV grid to write")->required();
  }

  void run(const Globals&) override {
    const HeatmapWindow win{token_start, neuron_start, size, size};
    if (!mask.empty()) {
      require(mode == "mask", ErrorCode::InvalidArgument, "a mask file only supports --mode mask");
      heatmap_export(load_mask(mask), win, out);
      return;
    }
    require(!weights.empty(), ErrorCode::InvalidArgument, "heatmap needs --mask or --weights/--input");
    const auto [c, w] = load_weights(weights);
    validate(c, HookPoint{layer, Component::FFNHidden});
    const SparsityConfig cfg = sparsity_from(thresholds);
    const TokenSeq toks = read_window(input, c);
    auto fr = forward(c, w, toks, {{layer, Component::FFNHidden}}, &cfg);
    Matrix h = fr.taps.at({layer, Component::FFNHidden});
    if (auto t = cfg.table.find({layer, Component::FFNHidden})) enforce_in_place(h.data, *t);
    if (mode == "mask")
      heatmap_export(extract_mask(h, layer, Component::FFNHidden, MaskGranularity::PerToken), win, out);
    else
      heatmap_export(h, win, out);
  }
};

struct Simulate : Command {
  std::vector<std::string> masks;
  std::string weights, input, thresholds, predictor = "oracle", cache, out, recall_sweep;
  HierarchyParams hp;

  explicit Simulate(CLI::App& root) {
    app = root.add_subcommand("simulate", "predictor-driven FFN weight prefetch simulation");
    auto* m = app->add_option("--masks", masks, "one mask file per layer, in layer order")
                  ->delimiter(',')
                  ->check(CLI::ExistingFile);
    auto* wt = app->add_option("--weights", weights, "derive the trace from a run")->check(CLI::ExistingFile)->excludes(m);
    app->add_option("--input", input, "input text; with --weights, its first max_seq_len bytes are run")->check(CLI::ExistingFile);
    app->add_option("--thresholds", thresholds)->check(CLI::ExistingFile)->needs(wt);
    app->add_option("--predictor", predictor, "oracle | null | pattern-cache | layer1")
        ->check(CLI::IsMember({"oracle", "null", "pattern-cache", "layer1"}))
        ->capture_default_str();
    app->add_option("--cache", cache, "predictor file from `match --cache/--layer1`")->check(CLI::ExistingFile);
    app->add_option("--bandwidth", hp.bandwidth_bytes_per_s, "bytes/s")->capture_default_str();
    app->add_option("--latency", hp.request_latency_s, "seconds per request")->capture_default_str();
    app->add_option("--capacity", hp.memory_capacity_bytes, "bytes")->capture_default_str();
    app->add_option("--bytes-per-neuron", hp.bytes_per_neuron, "default: from the model");
    app->add_option("--compute-cost", hp.compute_s_per_token_neuron, "seconds per token x active neuron")
        ->capture_default_str();
    app->add_option("--lookahead", hp.lookahead_layers, "layers a prefetch may run ahead")->capture_default_str();
    app->add_option("--out", out, "JSON report to write")->required();
    app->add_option("--recall-sweep", recall_sweep, "latency-vs-recall CSV");
  }

  void run(const Globals& g) override {
    Trace trace;
    if (!masks.empty()) {
      std::vector<ActivationMask> ms;
      for (const auto& f : masks) ms.push_back(load_mask(f));
      trace = trace_from_masks(ms);
      if (!input.empty()) trace.tokens = read_tokens(input);
    } else {
      require(!weights.empty() && !input.empty(), ErrorCode::InvalidArgument,
              "simulate needs --masks or --weights with --input");
      const auto [c, w] = load_weights(weights);
      const SparsityConfig cfg = sparsity_from(thresholds);
      const TokenSeq toks = read_window(input, c);
      trace = trace_from_masks(hidden_masks(c, w, toks, cfg, all_layers(c)));
      trace.tokens = toks;
      if (hp.bytes_per_neuron == 0) hp.bytes_per_neuron = bytes_per_neuron(c);
    }
    require(hp.bytes_per_neuron > 0, ErrorCode::InvalidArgument, "--bytes-per-neuron is required with --masks");

    const auto kind = parse_predictor_kind(predictor);
    Predictor pred(kind);
    if (kind == PredictorKind::PatternCache || kind == PredictorKind::Layer1Propagation) {
      require(!cache.empty(), ErrorCode::InvalidArgument, "--cache is required for " + predictor);
      const auto bytes = io::read_file(cache);
      pred = predictor_from_json(json::parse(bytes.begin(), bytes.end()));
      require(pred.kind() == kind, ErrorCode::InvalidArgument, "predictor file holds a different predictor kind");
      require(kind != PredictorKind::PatternCache || !trace.tokens.empty(), ErrorCode::InvalidArgument,
              "pattern-cache needs the input tokens (--input)");
    }
    json j = to_json(simulate(trace, pred, hp));
    j["predictor"] = predictor;
    write_json(out, j);
    if (!recall_sweep.empty()) io::write_text_atomic(recall_sweep, recall_sweep_csv(trace, hp, g.seed));
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Activation sparsity toolkit for small transformer FFNs"};
  app.set_config("--config", "", "JSON file of option values");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Globals g;
  app.add_option("--seed", g.seed, "seeds every random stream")->capture_default_str();
  app.add_flag("--omit-timing", g.omit_timing, "write wall times as 0 so reports are byte-reproducible");

  std::vector<std::unique_ptr<Command>> commands;
  commands.push_back(std::make_unique<Train>(app));
  commands.push_back(std::make_unique<Collect>(app));
  commands.push_back(std::make_unique<WeightHist>(app));
  commands.push_back(std::make_unique<ActCdf>(app));
  commands.push_back(std::make_unique<Calibrate>(app));
  commands.push_back(std::make_unique<EvalPpl>(app));
  commands.push_back(std::make_unique<Sweep>(app));
  commands.push_back(std::make_unique<Variants>(app));
  commands.push_back(std::make_unique<Match>(app));
  commands.push_back(std::make_unique<Heatmap>(app));
  commands.push_back(std::make_unique<Simulate>(app));

  std::string active;
  for (int i = 1; i < argc && active.empty(); ++i)
    if (app.get_subcommand_no_throw(argv[i])) active = argv[i];
  app.config_formatter(std::make_shared<JsonConfig>(app, active));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    for (auto& cmd : commands)
      if (cmd->app->parsed()) cmd->run(g);
  } catch (const Error& e) {
    std::cerr << "actsparse: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "actsparse: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
