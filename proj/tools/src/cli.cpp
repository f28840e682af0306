#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>

#include "manifest.hpp"
#include "report.hpp"
#include "tss/checkpoint.hpp"
#include "tss/clustering.hpp"
#include "tss/corpus.hpp"
#include "tss/curriculum.hpp"
#include "tss/embeddings.hpp"
#include "tss/error.hpp"
#include "tss/eval.hpp"
#include "tss/fusion.hpp"
#include "tss/io.hpp"
#include "tss/labeling.hpp"
#include "tss/synthetic.hpp"

namespace tss::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kOutputRootEnv = "TSS_OUTPUT_ROOT";

struct Context {
  std::string out_root = "tss_out";
  CLI::App* app = nullptr;
  CLI::App* sub = nullptr;

  fs::path root() const { return fs::path(out_root); }
  // An explicit path as given, else `default_rel` under the output root.
  fs::path resolve(const std::string& given, const fs::path& default_rel) const {
    return given.empty() ? root() / default_rel : fs::path(given);
  }
  std::string config_text() const {
    return "out-root=\"" + out_root + "\"\n" + sub->config_to_str(true, false);
  }
  void manifest(const std::string& name, std::uint64_t seed, std::vector<fs::path> inputs,
                std::vector<fs::path> outputs) const {
    RunManifest m;
    m.command = sub->get_name();
    m.config_text = config_text();
    m.seed = seed;
    m.inputs = std::move(inputs);
    m.outputs = std::move(outputs);
    const fs::path path = root() / "manifests" / (name + ".json");
    write_manifest(m, path);
    std::cout << "manifest: " << path.generic_string() << "\n";
  }
};

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw DataError(std::string(what) + " not found: " + p.string());
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  SynthSpec spec;
  std::string out;
};

void add_synth(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto o = std::make_shared<SynthOptions>();
  CLI::App* s = app.add_subcommand("synth", "Generate a planted task/step/state corpus with clip and text embeddings");
  s->add_option("--seed", o->spec.seed, "Generator seed")->capture_default_str();
  s->add_option("--tasks", o->spec.n_tasks, "Number of tasks")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--steps", o->spec.steps_per_task, "Steps per task")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--clips", o->spec.clips_per_step, "Clips per step (one video per task and clip index)")
      ->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--noise", o->spec.noise, "Per-dimension Gaussian noise sigma on clip features")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  s->add_option("--step-spread", o->spec.step_spread, "Length of the step offset from its task prototype")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  s->add_option("--state-spread", o->spec.state_spread, "Length of the state offset from its step prototype")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  s->add_option("--match-dim", o->spec.match_dim, "Joint video/text embedding dimension")
      ->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--cluster-dim", o->spec.cluster_dim, "Text clustering embedding dimension")
      ->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--out", o->out, "Output directory [default: <out-root>/synth]");
  s->callback([&ctx, &action, o, s] {
    ctx.sub = s;
    action = [&ctx, o] {
      const fs::path dir = ctx.resolve(o->out, "synth");
      SynthCorpus corpus = generate(o->spec);
      write_synthetic(corpus, o->spec, dir);
      std::cout << "synth: " << corpus.base.tasks().size() << " tasks, " << corpus.base.steps().size()
                << " steps, " << corpus.clips.size() << " clips -> " << dir.generic_string() << "\n";
      ctx.manifest("synth", o->spec.seed, {}, {dir});
    };
  });
}

// ---------------------------------------------------------------- pool

struct PoolOptions {
  std::string subclips;
  std::string out;
};

void add_pool(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto o = std::make_shared<PoolOptions>();
  CLI::App* s = app.add_subcommand("pool", "Average the three sub-clip features of every segment into a clip store");
  s->add_option("--subclips", o->subclips, "Sub-clip feature file (.tssfeat)")->required();
  s->add_option("--out", o->out, "Pooled clip store [default: <out-root>/clips.tssfeat]");
  s->callback([&ctx, &action, o, s] {
    ctx.sub = s;
    action = [&ctx, o] {
      const fs::path in = o->subclips;
      require_file(in, "sub-clip file");
      const fs::path out = ctx.resolve(o->out, "clips.tssfeat");
      ClipStore clips = load_and_pool_subclips(in);
      save_clip_store(clips, out);
      std::cout << "pool: " << clips.size() << " clips -> " << out.generic_string() << "\n";
      ctx.manifest("pool", 0, {in}, {out});
    };
  });
}

// ---------------------------------------------------------------- build-kb

struct BuildKbOptions {
  std::string corpus;
  std::string states;
  bool template_states = false;
  std::string prompts;
  std::string out;
};

void add_build_kb(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto o = std::make_shared<BuildKbOptions>();
  CLI::App* s = app.add_subcommand("build-kb", "Validate the task/step corpus and attach before/mid/after state texts");
  s->add_option("--corpus", o->corpus, "Task/step JSONL [default: <out-root>/synth/corpus.jsonl]");
  s->add_option("--states", o->states, "State JSONL served by the file provider [default: <out-root>/synth/states.jsonl]");
  s->add_flag("--template-states", o->template_states, "Use the deterministic template provider instead of a state file");
  s->add_option("--prompts", o->prompts, "Also write the rendered state prompt of every step to this JSONL file");
  s->add_option("--out", o->out, "Knowledge base JSONL [default: <out-root>/kb.jsonl]");
  s->callback([&ctx, &action, o, s] {
    ctx.sub = s;
    action = [&ctx, o] {
      const fs::path corpus = ctx.resolve(o->corpus, "synth/corpus.jsonl");
      require_file(corpus, "corpus");
      KnowledgeBase base = load_knowledge_base(corpus);
      std::vector<fs::path> inputs{corpus};
      KnowledgeBase full;
      if (o->template_states) {
        TemplateStateProvider provider;
        full = attach_states(base, provider);
      } else {
        const fs::path states = ctx.resolve(o->states, "synth/states.jsonl");
        require_file(states, "state file");
        FileStateProvider provider(states);
        full = attach_states(base, provider);
        inputs.push_back(states);
      }
      const fs::path out = ctx.resolve(o->out, "kb.jsonl");
      save_knowledge_base(full, out);
      std::vector<fs::path> outputs{out};
      if (!o->prompts.empty()) {
        std::string lines;
        for (const TaskEntry& t : full.tasks()) {
          for (std::int64_t sid : t.step_ids) {
            json r;
            r["step"] = sid;
            r["prompt"] = render_state_prompt(t.title, full.step(sid).headline);
            lines += r.dump() + "\n";
          }
        }
        io::write_file_atomic(o->prompts, lines);
        outputs.emplace_back(o->prompts);
      }
      std::cout << "build-kb: " << full.tasks().size() << " tasks, " << full.steps().size()
                << " steps, " << full.state_text_count() << " state texts -> " << out.generic_string()
                << "\n";
      ctx.manifest("build-kb", 0, inputs, outputs);
    };
  });
}

// ---------------------------------------------------------------- cluster

struct ClusterOptions {
  std::string kb;
  std::string texts;
  double threshold = kDefaultClusterThreshold;
  std::string linkage = "average";
  std::string out;
};

void add_cluster(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto o = std::make_shared<ClusterOptions>();
  CLI::App* s = app.add_subcommand("cluster", "Cluster step and state texts into semantic nodes");
  s->add_option("--kb", o->kb, "Knowledge base JSONL [default: <out-root>/kb.jsonl]");
  s->add_option("--texts", o->texts, "Text embedding store [default: <out-root>/synth/texts.tssfeat]");
  s->add_option("--threshold", o->threshold, "Merge while linkage distance (1 - cosine) <= threshold")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  s->add_option("--linkage", o->linkage, "average, single or complete")->capture_default_str();
  s->add_option("--out", o->out, "Node space directory [default: <out-root>/nodes]");
  s->callback([&ctx, &action, o, s] {
    ctx.sub = s;
    action = [&ctx, o] {
      const Linkage linkage = parse_linkage(o->linkage);
      const fs::path kb = ctx.resolve(o->kb, "kb.jsonl");
      const fs::path texts = ctx.resolve(o->texts, "synth/texts.tssfeat");
      require_file(kb, "knowledge base");
      require_file(texts, "text store");
      KnowledgeBase base = load_knowledge_base(kb);
      TextStore store = load_text_store(texts);
      NodeSpaces spaces = build_node_spaces(base, store, o->threshold, linkage);
      const fs::path out = ctx.resolve(o->out, "nodes");
      save_node_spaces(spaces, out);
      std::cout << "cluster: nodes task " << spaces.task.node_count() << ", step "
                << spaces.step.node_count() << ", before " << spaces.before.node_count() << ", mid "
                << spaces.mid.node_count() << ", after " << spaces.after.node_count() << " -> "
                << out.generic_string() << "\n";
      ctx.manifest("cluster", 0, {kb, texts}, {out});
    };
  });
}

// ---------------------------------------------------------------- gen-labels

struct LabelOptions {
  std::string kb;
  std::string texts;
  std::string nodes;
  std::string clips;
  std::size_t k = kDefaultTopK;
  std::string scoring = "summed";
  std::string out;
};

void add_gen_labels(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto o = std::make_shared<LabelOptions>();
  CLI::App* s = app.add_subcommand("gen-labels", "Generate the five pseudo-label families for every clip");
  s->add_option("--kb", o->kb, "Knowledge base JSONL [default: <out-root>/kb.jsonl]");
  s->add_option("--texts", o->texts, "Text embedding store [default: <out-root>/synth/texts.tssfeat]");
  s->add_option("--nodes", o->nodes, "Node space directory [default: <out-root>/nodes]");
  s->add_option("--clips", o->clips, "Clip store [default: <out-root>/synth/clips.tssfeat]");
  s->add_option("--k", o->k, "Labels per top-k family")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--scoring", o->scoring, "summed (sum over a node's raw texts) or centroid")->capture_default_str();
  s->add_option("--out", o->out, "Pseudo-label JSONL [default: <out-root>/labels.jsonl]");
  s->callback([&ctx, &action, o, s] {
    ctx.sub = s;
    action = [&ctx, o] {
      LabelingConfig cfg;
      cfg.k = o->k;
      if (o->scoring == "summed") {
        cfg.scoring = NodeScoring::summed_texts;
      } else if (o->scoring == "centroid") {
        cfg.scoring = NodeScoring::centroid;
      } else {
        throw ConfigError("unknown scoring '" + o->scoring + "' (expected summed or centroid)");
      }
      const fs::path kb = ctx.resolve(o->kb, "kb.jsonl");
      const fs::path texts = ctx.resolve(o->texts, "synth/texts.tssfeat");
      const fs::path nodes = ctx.resolve(o->nodes, "nodes");
      const fs::path clips = ctx.resolve(o->clips, "synth/clips.tssfeat");
      require_file(kb, "knowledge base");
      require_file(texts, "text store");
      require_file(clips, "clip store");
      KnowledgeBase base = load_knowledge_base(kb);
      TextStore store = load_text_store(texts);
      NodeSpaces spaces = load_node_spaces(nodes);
      ClipStore clip_store = load_clip_store(clips);
      auto labels = generate_all(clip_store, spaces, base, store, cfg);
      const fs::path out = ctx.resolve(o->out, "labels.jsonl");
      save_labels(labels, out);
      std::cout << "gen-labels: " << labels.size() << " records -> " << out.generic_string() << "\n";
      ctx.manifest("gen-labels", 0, {kb, texts, nodes, clips}, {out});
    };
  });
}

// ---------------------------------------------------------------- pretrain / mix-train

struct TrainOptions {
  std::string pathway;
  std::string clips;
  std::string labels;
  std::string nodes;
  std::size_t epochs = 10;
  std::size_t total_epochs = 0;
  std::uint64_t seed = 0;
  double lr = 1e-4;
  std::size_t batch = 256;
  double weight_decay = 0.0;
  std::string state_head = "union";
  std::vector<std::string> loss_weights;
  std::string out;
};

void add_train_options(CLI::App* s, TrainOptions& o) {
  s->add_option("--clips", o.clips, "Clip store [default: <out-root>/synth/clips.tssfeat]");
  s->add_option("--labels", o.labels, "Pseudo-label JSONL [default: <out-root>/labels.jsonl]");
  s->add_option("--nodes", o.nodes, "Node space directory [default: <out-root>/nodes]");
  s->add_option("--epochs", o.epochs, "Epochs per stage")->capture_default_str();
  s->add_option("--total-epochs", o.total_epochs,
                "Total epoch budget split equally over the stages (overrides --epochs when > 0)")
      ->capture_default_str();
  s->add_option("--seed", o.seed, "Training seed (adapter, heads, batch order)")->capture_default_str();
  s->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--batch", o.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--weight-decay", o.weight_decay, "L2 weight decay")->capture_default_str()->check(CLI::NonNegativeNumber);
  s->add_option("--state-head", o.state_head, "union (one masked head) or per-type (three heads)")->capture_default_str();
  s->add_option("--loss-weight", o.loss_weights,
                "FAMILY=WEIGHT, repeatable; families: task_vnm step_vnm step_nrl_in step_nrl_out "
                "step_tcl state_vnm state_vnm_before state_vnm_mid state_vnm_after");
}

TrainConfig train_config(const TrainOptions& o, std::size_t stages) {
  TrainConfig c;
  c.adam.lr = o.lr;
  c.adam.weight_decay = o.weight_decay;
  c.batch_size = o.batch;
  c.seed = o.seed;
  c.epochs_per_stage = o.epochs;
  if (o.total_epochs > 0) {
    if (o.total_epochs % stages != 0) {
      throw ConfigError("--total-epochs " + std::to_string(o.total_epochs) + " is not divisible by " +
                        std::to_string(stages) + " stages");
    }
    c.epochs_per_stage = o.total_epochs / stages;
  }
  if (o.state_head == "union") {
    c.state_layout = StateHeadLayout::union_masked;
  } else if (o.state_head == "per-type") {
    c.state_layout = StateHeadLayout::per_type;
  } else {
    throw ConfigError("unknown state head layout '" + o.state_head + "' (expected union or per-type)");
  }
  for (const std::string& kv : o.loss_weights) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--loss-weight expects FAMILY=WEIGHT, got '" + kv + "'");
    const Family f = parse_family(io::trim(std::string_view(kv).substr(0, eq)));
    double w = 0.0;
    try {
      std::size_t used = 0;
      const std::string num = io::trim(std::string_view(kv).substr(eq + 1));
      w = std::stod(num, &used);
      if (used != num.size()) throw std::invalid_argument(num);
    } catch (const std::exception&) {
      throw ConfigError("bad loss weight in '" + kv + "'");
    }
    if (!(w >= 0.0)) throw ConfigError("loss weights must be >= 0");
    c.loss_weights[f] = w;
  }
  return c;
}

struct TrainInputs {
  fs::path clips, labels, nodes;
  ClipStore clip_store;
  std::vector<PseudoLabelRecord> records;
  NodeCounts counts;
};

TrainInputs load_train_inputs(const Context& ctx, const TrainOptions& o) {
  TrainInputs in;
  in.clips = ctx.resolve(o.clips, "synth/clips.tssfeat");
  in.labels = ctx.resolve(o.labels, "labels.jsonl");
  in.nodes = ctx.resolve(o.nodes, "nodes");
  require_file(in.clips, "clip store");
  require_file(in.labels, "label file");
  in.clip_store = load_clip_store(in.clips);
  in.records = load_labels(in.labels);
  in.counts = NodeCounts::of(load_node_spaces(in.nodes));
  return in;
}

void print_stage_metrics(const StageOutcome& s) {
  if (s.metrics.empty()) return;
  std::printf("  stage %zu: loss %.6f -> %.6f over %zu epochs\n", s.metrics.front().stage,
              s.metrics.front().loss, s.metrics.back().loss, s.metrics.size());
}

void add_pretrain(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto o = std::make_shared<TrainOptions>();
  CLI::App* s = app.add_subcommand("pretrain", "Progressive pre-training of the adapter along a pathway");
  s->add_option("--pathway", o->pathway,
                "Preset path1..path6 or levels joined by ',' or '->', e.g. task,step,state")
      ->required();
  add_train_options(s, *o);
  s->add_option("--out", o->out, "Checkpoint directory [default: <out-root>/pretrain/<pathway>]");
  s->callback([&ctx, &action, o, s] {
    ctx.sub = s;
    action = [&ctx, o] {
      const Pathway pathway = parse_pathway(o->pathway);
      const TrainConfig cfg = train_config(*o, pathway.stages.size());
      TrainInputs in = load_train_inputs(ctx, *o);
      std::vector<Family> families;
      for (StageLevel l : pathway.stages) {
        for (Family f : families_for(l, cfg.state_layout)) {
          if (std::find(families.begin(), families.end(), f) == families.end()) families.push_back(f);
        }
      }
      TrainingData data = TrainingData::build(in.clip_store, in.records, in.counts, families);
      std::string name = pathway.name;
      if (name == "custom") {
        name.clear();
        for (StageLevel l : pathway.stages) name += (name.empty() ? "" : "-") + std::string(to_string(l));
      }
      const fs::path out = ctx.resolve(o->out, fs::path("pretrain") / name);
      std::cout << "pretrain " << name << ": " << pathway.stages.size() << " stages, "
                << cfg.epochs_per_stage << " epochs each\n";
      auto outcomes = run_pathway(pathway, data, cfg, out);
      for (const StageOutcome& st : outcomes) print_stage_metrics(st);
      std::cout << "checkpoints -> " << out.generic_string() << "\n";
      ctx.manifest("pretrain." + name, o->seed, {in.clips, in.labels, in.nodes}, {out});
    };
  });
}

void add_mix_train(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto o = std::make_shared<TrainOptions>();
  CLI::App* s = app.add_subcommand("mix-train", "Joint single-stage training on all label families");
  add_train_options(s, *o);
  s->add_option("--out", o->out, "Checkpoint directory [default: <out-root>/pretrain/mix]");
  s->callback([&ctx, &action, o, s] {
    ctx.sub = s;
    action = [&ctx, o] {
      const TrainConfig cfg = train_config(*o, 1);
      TrainInputs in = load_train_inputs(ctx, *o);
      const auto families = all_families(cfg.state_layout);
      TrainingData data = TrainingData::build(in.clip_store, in.records, in.counts, families);
      const fs::path out = ctx.resolve(o->out, fs::path("pretrain") / "mix");
      std::cout << "mix-train: " << families.size() << " heads, " << cfg.epochs_per_stage << " epochs\n";
      StageOutcome st = run_mix_train(data, cfg, out);
      print_stage_metrics(st);
      std::cout << "checkpoint -> " << out.generic_string() << "\n";
      ctx.manifest("mix-train", o->seed, {in.clips, in.labels, in.nodes}, {out});
    };
  });
}

// ---------------------------------------------------------------- fuse

struct FuseOptions {
  std::string mode;
  std::string layout = "interleave";
  std::string task_ckpt;
  std::string step_ckpt;
  std::string state_ckpt;
  std::string clips;
  std::string out;
};

void add_fuse(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto o = std::make_shared<FuseOptions>();
  CLI::App* s = app.add_subcommand("fuse", "Fuse clip representations of three checkpoints into one sequence store");
  s->add_option("--mode", o->mode, "concat (3T rows per video) or avgpool (elementwise mean)")->required();
  s->add_option("--layout", o->layout, "Concat layout: interleave (per timestep) or block")->capture_default_str();
  s->add_option("--task-ckpt", o->task_ckpt,
                "Task-level checkpoint [default: <out-root>/pretrain/path1/stage0.task.tssckpt]");
  s->add_option("--step-ckpt", o->step_ckpt,
                "Step-level checkpoint [default: <out-root>/pretrain/path2/stage1.step.tssckpt]");
  s->add_option("--state-ckpt", o->state_ckpt,
                "State-level checkpoint [default: <out-root>/pretrain/path3/stage2.state.tssckpt]");
  s->add_option("--clips", o->clips, "Clip store [default: <out-root>/synth/clips.tssfeat]");
  s->add_option("--out", o->out, "Sequence store [default: <out-root>/fused/<mode>.tssfeat]");
  s->callback([&ctx, &action, o, s] {
    ctx.sub = s;
    action = [&ctx, o] {
      const FusionMode mode = parse_fusion_mode(o->mode);
      const ConcatLayout layout = parse_concat_layout(o->layout);
      const fs::path ckpts[3] = {
          ctx.resolve(o->task_ckpt, "pretrain/path1/stage0.task.tssckpt"),
          ctx.resolve(o->step_ckpt, "pretrain/path2/stage1.step.tssckpt"),
          ctx.resolve(o->state_ckpt, "pretrain/path3/stage2.state.tssckpt"),
      };
      const fs::path clips = ctx.resolve(o->clips, "synth/clips.tssfeat");
      require_file(clips, "clip store");
      ClipStore raw = load_clip_store(clips);
      std::vector<ClipStore> encoded;
      for (const fs::path& p : ckpts) {
        require_file(p, "checkpoint");
        encoded.push_back(encode_clips(adapter_from_checkpoint(load_checkpoint(p)), raw));
      }
      SequenceStore fused = fuse_stores(encoded[0], encoded[1], encoded[2], mode, layout);
      const fs::path out =
          ctx.resolve(o->out, fs::path("fused") / (std::string(to_string(mode)) + ".tssfeat"));
      save_sequence_store(fused, out);
      std::cout << "fuse " << to_string(mode) << ": " << fused.size() << " rows -> "
                << out.generic_string() << "\n";
      ctx.manifest("fuse." + std::string(to_string(mode)), 0,
                   {ckpts[0], ckpts[1], ckpts[2], clips}, {out});
    };
  });
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string head;
  std::string task;
  std::string checkpoint;
  std::string sequences;
  bool raw = false;
  bool random_adapter = false;
  std::string clips;
  std::string annotations;
  std::uint64_t seed = 0;
  EvalConfig cfg;
  std::string mlp_order = "literal";
  std::size_t max_history = kDefaultMaxHistory;
  std::string dataset = "synthetic";
  std::string label;
  std::string out;
};

void add_eval(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto o = std::make_shared<EvalOptions>();
  CLI::App* s = app.add_subcommand("eval", "Fine-tune a downstream head on frozen features and report test top-1 accuracy");
  s->add_option("--head", o->head, "mlp or transformer")->required();
  s->add_option("--task", o->task, "TR (task recognition), SR (step recognition) or SF (step forecasting)")->required();
  auto* src_ckpt = s->add_option("--checkpoint", o->checkpoint, "Encode clips with the adapter of this checkpoint");
  auto* src_seq = s->add_option("--sequences", o->sequences, "Use a fused sequence store as features");
  auto* src_raw = s->add_flag("--raw", o->raw, "Use the raw clip features (no adapter)");
  auto* src_rnd = s->add_flag("--random-adapter", o->random_adapter,
                              "Encode clips with the untrained adapter a pre-training run with --seed starts from");
  src_ckpt->excludes(src_seq)->excludes(src_raw)->excludes(src_rnd);
  src_seq->excludes(src_raw)->excludes(src_rnd);
  src_raw->excludes(src_rnd);
  s->add_option("--clips", o->clips, "Clip store [default: <out-root>/synth/clips.tssfeat]");
  s->add_option("--annotations", o->annotations, "Annotation JSONL [default: <out-root>/synth/annotations.jsonl]");
  s->add_option("--seed", o->seed, "Seed for the split, head initialisation and batch order")->capture_default_str();
  s->add_option("--epochs", o->cfg.max_epochs, "Maximum fine-tuning epochs")->capture_default_str();
  s->add_option("--patience", o->cfg.patience, "Early-stopping patience in epochs")
      ->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--lr", o->cfg.adam.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--batch", o->cfg.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--weight-decay", o->cfg.adam.weight_decay, "L2 weight decay")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  s->add_option("--hidden", o->cfg.hidden, "Hidden width of the MLP (0: 128 for TR, 768 for SR/SF)")->capture_default_str();
  s->add_option("--mlp-order", o->mlp_order,
                "literal (posenc, ReLU, linear, linear) or standard (posenc, linear, ReLU, linear)")
      ->capture_default_str();
  s->add_option("--max-history", o->max_history, "Step forecasting history length in segments")
      ->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--dataset", o->dataset, "Dataset name recorded in the result row")->capture_default_str();
  s->add_option("--label", o->label, "Row name in the report [default: derived from the feature source]");
  s->add_option("--out", o->out, "Result JSONL [default: <out-root>/eval/<label>.<head>.<task>.jsonl]");
  s->callback([&ctx, &action, o, s] {
    ctx.sub = s;
    action = [&ctx, o] {
      EvalConfig cfg = o->cfg;
      cfg.head = parse_eval_head(o->head);
      cfg.seed = o->seed;
      if (o->mlp_order == "literal") {
        cfg.mlp_order = MlpOrder::literal;
      } else if (o->mlp_order == "standard") {
        cfg.mlp_order = MlpOrder::standard;
      } else {
        throw ConfigError("unknown MLP order '" + o->mlp_order + "' (expected literal or standard)");
      }
      const TaskKind kind = parse_task_kind(o->task);
      const fs::path ann_path = ctx.resolve(o->annotations, "synth/annotations.jsonl");
      require_file(ann_path, "annotation file");
      std::vector<fs::path> inputs{ann_path};

      SequenceStore features;
      std::string label = o->label;
      if (!o->sequences.empty()) {
        require_file(o->sequences, "sequence store");
        features = load_sequence_store(o->sequences);
        inputs.emplace_back(o->sequences);
        if (label.empty()) label = "fused-" + fs::path(o->sequences).stem().string();
      } else {
        if (o->checkpoint.empty() && !o->raw && !o->random_adapter) {
          throw ConfigError("choose a feature source: --checkpoint, --sequences, --raw or --random-adapter");
        }
        const fs::path clips = ctx.resolve(o->clips, "synth/clips.tssfeat");
        require_file(clips, "clip store");
        inputs.push_back(clips);
        ClipStore raw = load_clip_store(clips);
        if (o->raw) {
          features = SequenceStore::from_clips(raw);
          if (label.empty()) label = "no-pretrain";
        } else if (o->random_adapter) {
          features = SequenceStore::from_clips(encode_clips(Adapter::init(adapter_seed(o->seed), raw.dim()), raw));
          if (label.empty()) label = "random-adapter";
        } else {
          require_file(o->checkpoint, "checkpoint");
          Checkpoint ckpt = load_checkpoint(o->checkpoint);
          inputs.emplace_back(o->checkpoint);
          features = SequenceStore::from_clips(encode_clips(adapter_from_checkpoint(ckpt), raw));
          if (label.empty()) {
            const json meta = json::parse(ckpt.meta_json);
            label = meta.value("pathway", std::string());
            if (label.empty()) label = fs::path(o->checkpoint).stem().string();
          }
        }
      }
      auto samples = build_samples(features, load_annotations(ann_path), kind, o->max_history);
      EvalResult r = finetune_and_test(samples, cfg);
      ResultRow row{label, o->dataset, cfg.head, kind, o->seed, r};
      const std::string stem = label + "." + std::string(to_string(cfg.head)) + "." + std::string(to_string(kind));
      const fs::path out = ctx.resolve(o->out, fs::path("eval") / (stem + ".jsonl"));
      io::write_file_atomic(out, result_to_json(row) + "\n");
      std::printf("eval %s %s %s: top-1 %.4f (%zu/%zu), best epoch %zu of %zu\n", label.c_str(),
                  std::string(to_string(cfg.head)).c_str(), std::string(to_string(kind)).c_str(),
                  r.accuracy, r.correct, r.test_count, r.best_epoch, r.epochs_run);
      ctx.manifest("eval." + stem, o->seed, inputs, {out});
    };
  });
}

// ---------------------------------------------------------------- report

struct ReportOptions {
  std::string results;
  std::string out;
};

void add_report(CLI::App& app, Context& ctx, std::function<void()>& action) {
  auto o = std::make_shared<ReportOptions>();
  CLI::App* s = app.add_subcommand("report", "Aggregate evaluation results into a pathway x (dataset, head, task) table");
  s->add_option("--results", o->results, "Directory of result JSONL files [default: <out-root>/eval]");
  s->add_option("--out", o->out, "Markdown table [default: <out-root>/report.md]");
  s->callback([&ctx, &action, o, s] {
    ctx.sub = s;
    action = [&ctx, o] {
      const fs::path dir = ctx.resolve(o->results, "eval");
      if (!fs::is_directory(dir)) throw DataError("result directory not found: " + dir.string());
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      std::vector<ResultRow> rows;
      for (const fs::path& f : files) {
        auto r = load_results(f);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      if (rows.empty()) throw DataError("no evaluation results in " + dir.string());
      ReportTable table = build_report(rows);
      const std::string md = render_markdown(table);
      const fs::path out = ctx.resolve(o->out, "report.md");
      io::write_file_atomic(out, md);
      std::cout << md << table.filled() << " cells -> " << out.generic_string() << "\n";
      ctx.manifest("report", 0, {dir}, {out});
    };
  });
}

void print_error(ErrorKind kind, const std::string& message) {
  std::string one_line = message;
  std::replace(one_line.begin(), one_line.end(), '\n', ' ');
  std::cerr << "tss: error code=" << static_cast<int>(kind) << " kind=" << to_string(kind) << ": "
            << one_line << "\n";
}

}  // namespace

int run(int argc, char** argv) {
  Context ctx;
  CLI::App app{"Task-step-state procedural pipeline on precomputed embedding features.", "tss"};
  app.set_config("--config", "", "Read options from a TOML/INI file ([subcommand] sections)");
  app.add_option("--out-root", ctx.out_root, "Root directory for default input and output paths")
      ->envname(kOutputRootEnv)
      ->capture_default_str();
  app.require_subcommand(1);
  app.footer(std::string("Environment:\n  ") + kOutputRootEnv +
             "  output root when --out-root is not given\n"
             "Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure");
  ctx.app = &app;

  std::function<void()> action;
  add_synth(app, ctx, action);
  add_pool(app, ctx, action);
  add_build_kb(app, ctx, action);
  add_cluster(app, ctx, action);
  add_gen_labels(app, ctx, action);
  add_pretrain(app, ctx, action);
  add_mix_train(app, ctx, action);
  add_fuse(app, ctx, action);
  add_eval(app, ctx, action);
  add_report(app, ctx, action);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(ErrorKind::config, e.what());
    return static_cast<int>(ErrorKind::config);
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return e.exit_code();
  }

  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    print_error(e.kind(), e.what());
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    print_error(ErrorKind::data, e.what());
    return static_cast<int>(ErrorKind::data);
  } catch (const std::filesystem::filesystem_error& e) {
    print_error(ErrorKind::data, e.what());
    return static_cast<int>(ErrorKind::data);
  }
}

}  // namespace tss::cli
