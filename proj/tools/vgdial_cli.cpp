#include <Eigen/Core>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vgdial/corpus.h"
#include "vgdial/detector.h"
#include "vgdial/generator.h"
#include "vgdial/io.h"
#include "vgdial/metrics.h"
#include "vgdial/mips_index.h"
#include "vgdial/regions.h"
#include "vgdial/retriever.h"

namespace fs = std::filesystem;
using namespace vgdial;

namespace {

void guard_output(const std::string& path, bool force) {
  if (fs::exists(path) && !force)
    throw std::runtime_error("output already exists (use --force): " + path);
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path))
    throw std::runtime_error("missing " + what + ": " + path);
}

bool has_prefix(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

std::map<std::string, const Dialog*> dialogs_by_id(
    const std::vector<Dialog>& dialogs) {
  std::map<std::string, const Dialog*> out;
  for (const auto& d : dialogs) out[d.id] = &d;
  return out;
}

int detect_d_obj(const std::map<std::string, RegionSet>& regions) {
  if (regions.empty()) throw std::runtime_error("regions file is empty");
  return regions.begin()->second.d_obj();
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  std::string out_dir = "data";
  int n_concepts = 40;
  int n_images = 50;
  int n_dialogs = 250;
  int n_test = 50;
  int d_obj = 16;
  int k = 36;
  double noise = 0.05;
  uint64_t seed = 1;
  bool force = false;
};

void run_synth(const SynthOpts& o) {
  fs::create_directories(o.out_dir);
  const std::string dialogs_path = o.out_dir + "/dialogs.jsonl";
  const std::string regions_path = o.out_dir + "/regions.jsonl";
  const std::string tags_path = o.out_dir + "/tags.txt";
  const std::string truth_path = o.out_dir + "/ground_truth.jsonl";
  for (const auto& p : {dialogs_path, regions_path, tags_path, truth_path})
    guard_output(p, o.force);

  SyntheticWorld world =
      generate_synthetic_world(o.n_concepts, o.n_images, o.n_dialogs, o.d_obj,
                               o.k, o.noise, o.seed, o.n_test);

  std::vector<RegionSet> detected;
  for (const auto& img : world.images)
    detected.push_back(synthetic_detect(img, world, o.k, o.noise,
                                        o.seed ^ fnv1a(img.id)));
  std::vector<const RegionSet*> region_ptrs;
  for (const auto& r : detected) region_ptrs.push_back(&r);

  save_dialogs(dialogs_path, world.dialogs);
  save_regions(regions_path, region_ptrs);
  save_tags(tags_path, world.concept_tags);
  save_quadruple_pairs(truth_path, world.ground_truth);
  std::cout << "wrote " << world.dialogs.size() << " dialogs, "
            << detected.size() << " images, " << world.concept_tags.size()
            << " tags to " << o.out_dir << "\n";
}

// ---------------------------------------------------------------------------
// train-retriever

struct TrainRetrieverOpts {
  std::string dialogs, regions, tags, pairs;
  std::string out = "retriever.mrt";
  std::string vocab_out = "vocab.txt";
  int min_count = 1;
  bool include_test = false;
  TowerConfig tower;
  bool force = false;
};

void run_train_retriever(const TrainRetrieverOpts& o) {
  require_file(o.dialogs, "dialogs file");
  require_file(o.regions, "regions file");
  require_file(o.tags, "tags file");
  require_file(o.pairs, "pairs file");
  guard_output(o.out, o.force);
  guard_output(o.vocab_out, o.force);

  auto dialogs = load_dialogs(o.dialogs);
  auto regions = load_regions(o.regions);
  auto tags = load_tags(o.tags);
  auto pairs = load_quadruple_pairs(o.pairs);

  Tokenizer tok = build_vocabulary(dialogs, tags, o.min_count);
  tok.save(o.vocab_out);

  TowerConfig cfg = o.tower;
  cfg.image_encoder_dim = detect_d_obj(regions);

  auto by_id = dialogs_by_id(dialogs);
  std::vector<RetrievalPair> training;
  for (const auto& [did, iid] : pairs) {
    if (!o.include_test && has_prefix(did, "test_")) continue;
    auto dit = by_id.find(did);
    if (dit == by_id.end())
      throw std::runtime_error("pairing references unknown dialog '" + did +
                               "'");
    auto rit = regions.find(iid);
    if (rit == regions.end())
      throw std::runtime_error("pairing references unknown image '" + iid +
                               "'");
    RetrievalPair p;
    p.text = Retriever::build_query(*dit->second, QueryMode::kTrain);
    p.image_feature = rit->second.features.colwise().mean().transpose();
    p.image_id = iid;
    training.push_back(std::move(p));
  }

  Retriever retriever(tok, cfg);
  auto curve = retriever.train(training);
  retriever.save(o.out);
  std::cout << "trained on " << training.size() << " pairs; epoch loss "
            << curve.front() << " -> " << curve.back() << "\n"
            << "checkpoint: " << o.out << "\nvocabulary: " << o.vocab_out
            << "\n";
}

// ---------------------------------------------------------------------------
// build-index

struct BuildIndexOpts {
  std::string regions, checkpoint, vocab;
  std::string out = "index.midx";
  bool force = false;
};

void run_build_index(const BuildIndexOpts& o) {
  require_file(o.regions, "regions file");
  require_file(o.checkpoint, "retriever checkpoint");
  require_file(o.vocab, "vocabulary file");
  guard_output(o.out, o.force);

  Tokenizer tok = Tokenizer::load(o.vocab);
  Retriever retriever = Retriever::load(o.checkpoint, tok);
  auto regions = load_regions(o.regions);

  VectorIndex index(retriever.config().projection_dims.back());
  for (const auto& [id, rs] : regions) {
    ImageRecord img{id, rs};
    index.add(id, retriever.encode_image(img));
  }
  index.freeze();
  index.save(o.out);
  std::cout << "indexed " << index.count() << " images into " << o.out
            << "\n";
}

// ---------------------------------------------------------------------------
// retrieve

struct RetrieveOpts {
  std::string dialogs, checkpoint, vocab, index;
  std::string split = "all";
  int top_k = 1;
  std::string out = "quadruples.jsonl";
  std::string audit_log;
  bool force = false;
};

void run_retrieve(const RetrieveOpts& o) {
  require_file(o.dialogs, "dialogs file");
  require_file(o.checkpoint, "retriever checkpoint");
  require_file(o.vocab, "vocabulary file");
  require_file(o.index, "index file");
  guard_output(o.out, o.force);
  if (o.split != "train" && o.split != "test" && o.split != "all")
    throw std::runtime_error("split must be train, test or all");
  if (o.top_k < 1) throw std::runtime_error("top-k must be >= 1");

  Tokenizer tok = Tokenizer::load(o.vocab);
  Retriever retriever = Retriever::load(o.checkpoint, tok);
  VectorIndex index = VectorIndex::load(o.index);
  auto dialogs = load_dialogs(o.dialogs);

  std::ofstream out(o.out);
  if (!out) throw std::runtime_error("cannot write: " + o.out);
  std::ofstream audit;
  if (!o.audit_log.empty()) {
    guard_output(o.audit_log, o.force);
    audit.open(o.audit_log);
    if (!audit) throw std::runtime_error("cannot write: " + o.audit_log);
  }

  long written = 0;
  for (const auto& d : dialogs) {
    if (o.split == "train" && !has_prefix(d.id, "train_")) continue;
    if (o.split == "test" && !has_prefix(d.id, "test_")) continue;
    const QueryMode mode = has_prefix(d.id, "train_") ? QueryMode::kTrain
                                                      : QueryMode::kInfer;
    const std::string query = Retriever::build_query(d, mode);
    if (audit.is_open())
      audit << d.id << "\t"
            << (mode == QueryMode::kTrain ? "train" : "infer") << "\t"
            << query << "\n";
    auto hits = index.search_top_k(retriever.encode_text(query), o.top_k);
    nlohmann::json j;
    j["dialog_id"] = d.id;
    j["image_id"] = hits.front().first;
    if (o.top_k > 1) {
      nlohmann::json alts = nlohmann::json::array();
      for (const auto& [id, score] : hits) alts.push_back({id, score});
      j["alternatives"] = alts;
    }
    out << j.dump() << "\n";
    ++written;
  }
  std::cout << "retrieved images for " << written << " dialogs into " << o.out
            << "\n";
}

// ---------------------------------------------------------------------------
// train-generator

struct TrainGeneratorOpts {
  std::string quadruples, dialogs, regions, vocab, tags;
  std::string out = "generator.mgen";
  GeneratorConfig gen;
  bool no_mcp = false;
  bool no_vkb = false;
  bool force = false;
};

void run_train_generator(const TrainGeneratorOpts& o) {
  require_file(o.quadruples, "quadruples file");
  require_file(o.dialogs, "dialogs file");
  require_file(o.regions, "regions file");
  require_file(o.vocab, "vocabulary file");
  guard_output(o.out, o.force);

  Tokenizer tok = Tokenizer::load(o.vocab);
  auto dialogs = load_dialogs(o.dialogs);
  auto regions = load_regions(o.regions);
  auto pairs = load_quadruple_pairs(o.quadruples);

  long unk_tags = 0;
  auto quads = assemble_quadruples(pairs, dialogs, regions, tok, &unk_tags);
  if (unk_tags > 0)
    std::cout << "note: " << unk_tags
              << " concept tags are out of vocabulary\n";

  GeneratorConfig cfg = o.gen;
  cfg.d_obj = detect_d_obj(regions);
  cfg.mcp_enabled = !o.no_mcp;
  cfg.vkb_enabled = !o.no_vkb;
  for (const auto& q : quads)
    if (q.regions.k() > cfg.region_len)
      throw std::runtime_error(
          "image '" + q.image_id +
          "' has more regions than --region-len allows");

  Generator gen(tok, cfg);
  if (cfg.global_concept_vocab) {
    require_file(o.tags, "tags file (needed with --global-concept-vocab)");
    std::vector<int> ids;
    for (const auto& t : load_tags(o.tags)) {
      int id = tok.id_of(normalize_tag(t));
      if (id != tok.unk()) ids.push_back(id);
    }
    gen.set_global_concept_ids(std::move(ids));
  }

  auto curve = gen.train(quads);
  gen.save(o.out);
  std::cout << "trained on " << quads.size() << " quadruples; epoch loss "
            << curve.front() << " -> " << curve.back() << "\n"
            << "checkpoint: " << o.out << "\n";
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOpts {
  std::string checkpoint, vocab, quadruples, dialogs, regions;
  std::string out = "responses.jsonl";
  std::string decode = "greedy";
  double temperature = 1.0;
  int top_k_tokens = 0;
  int max_len = 40;
  uint64_t seed = 1;
  bool force = false;
};

void run_generate(const GenerateOpts& o) {
  require_file(o.checkpoint, "generator checkpoint");
  require_file(o.vocab, "vocabulary file");
  require_file(o.quadruples, "quadruples file");
  require_file(o.dialogs, "dialogs file");
  require_file(o.regions, "regions file");
  guard_output(o.out, o.force);
  if (o.decode != "greedy" && o.decode != "sample")
    throw std::runtime_error("decode must be greedy or sample");

  Tokenizer tok = Tokenizer::load(o.vocab);
  Generator gen = Generator::load(o.checkpoint, tok);
  auto dialogs = load_dialogs(o.dialogs);
  auto regions = load_regions(o.regions);
  auto pairs = load_quadruple_pairs(o.quadruples);
  auto quads = assemble_quadruples(pairs, dialogs, regions, tok);

  DecodeOptions opts;
  opts.greedy = o.decode == "greedy";
  opts.temperature = o.temperature;
  opts.top_k = o.top_k_tokens;
  opts.max_len = std::min(o.max_len, gen.config().max_response_len);

  std::ofstream out(o.out);
  if (!out) throw std::runtime_error("cannot write: " + o.out);
  for (const auto& q : quads) {
    opts.seed = o.seed ^ fnv1a(q.dialog_id);
    GenerationResult res = gen.generate(q.regions, q.context, opts);
    nlohmann::json j;
    j["dialog_id"] = q.dialog_id;
    j["image_id"] = q.image_id;
    j["response"] = tok.decode(res.tokens);
    out << j.dump() << "\n";
  }
  std::cout << "generated " << quads.size() << " responses into " << o.out
            << "\n";
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
  std::string checkpoint, vocab, quadruples, dialogs, regions;
  std::string out = "report.json";
  bool force = false;
};

void run_evaluate(const EvaluateOpts& o) {
  require_file(o.checkpoint, "generator checkpoint");
  require_file(o.vocab, "vocabulary file");
  require_file(o.quadruples, "quadruples file");
  require_file(o.dialogs, "dialogs file");
  require_file(o.regions, "regions file");
  guard_output(o.out, o.force);

  Tokenizer tok = Tokenizer::load(o.vocab);
  Generator gen = Generator::load(o.checkpoint, tok);
  auto dialogs = load_dialogs(o.dialogs);
  auto regions = load_regions(o.regions);
  auto pairs = load_quadruple_pairs(o.quadruples);
  auto quads = assemble_quadruples(pairs, dialogs, regions, tok);

  EvalReport report = evaluate_generator(gen, quads);
  std::cout << eval_report_to_text(report);
  std::ofstream out(o.out);
  if (!out) throw std::runtime_error("cannot write: " + o.out);
  out << eval_report_to_json(report) << "\n";
  std::cout << "report: " << o.out << "\n";
}

// ---------------------------------------------------------------------------
// export-attention

struct ExportAttentionOpts {
  std::string checkpoint, vocab, dialogs, regions;
  std::string dialog_id, image_id;
  int layer = 0;
  int head = 0;
  std::string out = "attention.json";
  bool force = false;
};

void run_export_attention(const ExportAttentionOpts& o) {
  require_file(o.checkpoint, "generator checkpoint");
  require_file(o.vocab, "vocabulary file");
  require_file(o.dialogs, "dialogs file");
  require_file(o.regions, "regions file");
  guard_output(o.out, o.force);

  Tokenizer tok = Tokenizer::load(o.vocab);
  Generator gen = Generator::load(o.checkpoint, tok);
  auto dialogs = load_dialogs(o.dialogs);
  auto regions = load_regions(o.regions);

  std::vector<IdPair> pair = {{o.dialog_id, o.image_id}};
  auto quads = assemble_quadruples(pair, dialogs, regions, tok);
  const Quadruple& q = quads.front();

  std::vector<int> words = q.response;
  if (static_cast<int>(words.size()) > gen.config().max_response_len)
    words.resize(static_cast<size_t>(gen.config().max_response_len));
  words.push_back(tok.eos());
  InputBatch b = gen.build_decode_inputs(q.regions, q.context, words, false);
  AttentionExport e = gen.export_attention(b, o.layer, o.head);

  std::ofstream out(o.out);
  if (!out) throw std::runtime_error("cannot write: " + o.out);
  out << attention_export_to_json(e) << "\n";
  std::cout << "attention for layer " << o.layer << " head " << o.head
            << " written to " << o.out << "\n";
}

// ---------------------------------------------------------------------------
// chat

struct ChatOpts {
  std::string gen_checkpoint, retriever_checkpoint, vocab, index, regions;
  int max_len = 40;
  int context_window = 6;
  uint64_t seed = 1;
};

void run_chat(const ChatOpts& o) {
  require_file(o.gen_checkpoint, "generator checkpoint");
  require_file(o.retriever_checkpoint, "retriever checkpoint");
  require_file(o.vocab, "vocabulary file");
  require_file(o.index, "index file");
  require_file(o.regions, "regions file");

  Tokenizer tok = Tokenizer::load(o.vocab);
  Generator gen = Generator::load(o.gen_checkpoint, tok);
  Retriever retriever = Retriever::load(o.retriever_checkpoint, tok);
  VectorIndex index = VectorIndex::load(o.index);
  auto regions = load_regions(o.regions);

  DecodeOptions opts;
  opts.greedy = true;
  opts.max_len = std::min(o.max_len, gen.config().max_response_len);
  opts.seed = o.seed;

  std::vector<std::string> context;
  std::cout << "type an utterance (/quit to exit)\n";
  std::string line;
  while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
    line = normalize_whitespace(line);
    if (line == "/quit") break;
    if (line.empty()) continue;
    context.push_back(line);
    while (static_cast<int>(context.size()) > o.context_window)
      context.erase(context.begin());

    Dialog d;
    d.id = "chat";
    d.context = context;
    d.response = "-";
    const std::string query =
        Retriever::build_query(d, QueryMode::kInfer);
    auto hits = index.search_top_k(retriever.encode_text(query), 1);
    auto rit = regions.find(hits.front().first);
    if (rit == regions.end())
      throw std::runtime_error("index entry '" + hits.front().first +
                               "' missing from regions file");

    std::cout << "image: " << rit->first << " (score "
              << hits.front().second << ")\nconcepts:";
    for (const auto& c : rit->second.concepts) std::cout << " " << c;
    std::cout << "\n";

    std::vector<std::vector<int>> ctx_tokens;
    for (const auto& u : context) ctx_tokens.push_back(tok.encode(u));
    GenerationResult res = gen.generate(rit->second, ctx_tokens, opts);
    const std::string reply = tok.decode(res.tokens);
    std::cout << "reply: " << reply << "\n";
    context.push_back(reply);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image-grounded dialog pipeline"};
  app.require_subcommand(1);
  app.set_config("--config");

  SynthOpts synth;
  auto* s = app.add_subcommand("synth", "Generate the synthetic corpus");
  s->add_option("--out-dir", synth.out_dir, "Output directory");
  s->add_option("--n-concepts", synth.n_concepts, "Number of concepts");
  s->add_option("--n-images", synth.n_images, "Number of images");
  s->add_option("--n-dialogs", synth.n_dialogs, "Number of dialogs");
  s->add_option("--n-test", synth.n_test, "Dialogs held out as test split");
  s->add_option("--d-obj", synth.d_obj, "Region feature dimension");
  s->add_option("--k", synth.k, "Regions per image");
  s->add_option("--noise", synth.noise, "Feature noise stddev");
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_flag("--force", synth.force, "Overwrite existing outputs");
  s->callback([&synth] { run_synth(synth); });

  TrainRetrieverOpts tr;
  auto* t = app.add_subcommand("train-retriever", "Train the two-tower matcher");
  t->add_option("--dialogs", tr.dialogs, "Dialogs JSONL")->required();
  t->add_option("--regions", tr.regions, "Regions JSONL")->required();
  t->add_option("--tags", tr.tags, "Tag list")->required();
  t->add_option("--pairs", tr.pairs, "Dialog-image pairs JSONL")->required();
  t->add_option("--out", tr.out, "Checkpoint output path");
  t->add_option("--vocab-out", tr.vocab_out, "Vocabulary output path");
  t->add_option("--min-count", tr.min_count, "Vocabulary frequency cutoff");
  t->add_flag("--include-test", tr.include_test,
              "Also train on test_-prefixed dialogs");
  t->add_option("--text-dim", tr.tower.text_encoder_dim,
                "Token embedding width");
  t->add_option("--proj-dims", tr.tower.projection_dims,
                "Projection layer widths")
      ->delimiter(',');
  t->add_option("--margin", tr.tower.margin, "Hinge margin");
  t->add_option("--lr", tr.tower.learning_rate, "Learning rate");
  t->add_option("--epochs", tr.tower.epochs, "Training epochs");
  t->add_option("--batch-size", tr.tower.batch_size, "Batch size");
  t->add_flag("--freeze-embeddings", tr.tower.freeze_embeddings,
              "Train only the projection heads");
  t->add_option("--seed", tr.tower.seed, "Random seed");
  t->add_flag("--force", tr.force, "Overwrite existing outputs");
  t->callback([&tr] { run_train_retriever(tr); });

  BuildIndexOpts bi;
  auto* b = app.add_subcommand("build-index", "Embed and index all images");
  b->add_option("--regions", bi.regions, "Regions JSONL")->required();
  b->add_option("--checkpoint", bi.checkpoint, "Retriever checkpoint")
      ->required();
  b->add_option("--vocab", bi.vocab, "Vocabulary file")->required();
  b->add_option("--out", bi.out, "Index output path");
  b->add_flag("--force", bi.force, "Overwrite existing outputs");
  b->callback([&bi] { run_build_index(bi); });

  RetrieveOpts re;
  auto* r = app.add_subcommand("retrieve", "Pair each dialog with an image");
  r->add_option("--dialogs", re.dialogs, "Dialogs JSONL")->required();
  r->add_option("--checkpoint", re.checkpoint, "Retriever checkpoint")
      ->required();
  r->add_option("--vocab", re.vocab, "Vocabulary file")->required();
  r->add_option("--index", re.index, "Image index")->required();
  r->add_option("--split", re.split, "Dialog split: train, test or all");
  r->add_option("--top-k", re.top_k, "Alternatives to record per dialog");
  r->add_option("--out", re.out, "Pairs output path");
  r->add_option("--audit-log", re.audit_log, "Query audit log path");
  r->add_flag("--force", re.force, "Overwrite existing outputs");
  r->callback([&re] { run_retrieve(re); });

  TrainGeneratorOpts tg;
  auto* g = app.add_subcommand("train-generator", "Train the response model");
  g->add_option("--quadruples", tg.quadruples, "Dialog-image pairs JSONL")
      ->required();
  g->add_option("--dialogs", tg.dialogs, "Dialogs JSONL")->required();
  g->add_option("--regions", tg.regions, "Regions JSONL")->required();
  g->add_option("--vocab", tg.vocab, "Vocabulary file")->required();
  g->add_option("--tags", tg.tags, "Tag list (for --global-concept-vocab)");
  g->add_option("--out", tg.out, "Checkpoint output path");
  g->add_option("--layers", tg.gen.layers, "Transformer layers");
  g->add_option("--hidden", tg.gen.hidden, "Hidden width");
  g->add_option("--heads", tg.gen.heads, "Attention heads");
  g->add_option("--max-context-len", tg.gen.max_context_len,
                "Context token budget");
  g->add_option("--max-response-len", tg.gen.max_response_len,
                "Response word budget");
  g->add_option("--region-len", tg.gen.region_len, "Region slots per image");
  g->add_option("--max-turns", tg.gen.max_turns, "Turn embedding table size");
  g->add_option("--mcp-rate", tg.gen.mcp_rate, "Concept masking rate");
  g->add_option("--mrp-rate", tg.gen.mrp_rate, "Response masking rate");
  g->add_flag("--no-mcp", tg.no_mcp, "Disable the concept objective");
  g->add_flag("--no-vkb", tg.no_vkb, "Disable the vocabulary bias");
  g->add_flag("--global-concept-vocab", tg.gen.global_concept_vocab,
              "Bias over the full tag vocabulary instead of per image");
  g->add_option("--lr", tg.gen.learning_rate, "Learning rate");
  g->add_option("--epochs", tg.gen.epochs, "Training epochs");
  g->add_option("--batch-size", tg.gen.batch_size, "Batch size");
  g->add_option("--seed", tg.gen.seed, "Random seed");
  g->add_flag("--force", tg.force, "Overwrite existing outputs");
  g->callback([&tg] { run_train_generator(tg); });

  GenerateOpts ge;
  auto* gen = app.add_subcommand("generate", "Decode responses for pairs");
  gen->add_option("--checkpoint", ge.checkpoint, "Generator checkpoint")
      ->required();
  gen->add_option("--vocab", ge.vocab, "Vocabulary file")->required();
  gen->add_option("--quadruples", ge.quadruples, "Dialog-image pairs JSONL")
      ->required();
  gen->add_option("--dialogs", ge.dialogs, "Dialogs JSONL")->required();
  gen->add_option("--regions", ge.regions, "Regions JSONL")->required();
  gen->add_option("--out", ge.out, "Responses output path");
  gen->add_option("--decode", ge.decode, "greedy or sample");
  gen->add_option("--temperature", ge.temperature, "Sampling temperature");
  gen->add_option("--top-k-tokens", ge.top_k_tokens,
                  "Sampling pool size (0 = all)");
  gen->add_option("--max-len", ge.max_len, "Maximum words per response");
  gen->add_option("--seed", ge.seed, "Random seed");
  gen->add_flag("--force", ge.force, "Overwrite existing outputs");
  gen->callback([&ge] { run_generate(ge); });

  EvaluateOpts ev;
  auto* e = app.add_subcommand("evaluate", "Score the generator on pairs");
  e->add_option("--checkpoint", ev.checkpoint, "Generator checkpoint")
      ->required();
  e->add_option("--vocab", ev.vocab, "Vocabulary file")->required();
  e->add_option("--quadruples", ev.quadruples, "Dialog-image pairs JSONL")
      ->required();
  e->add_option("--dialogs", ev.dialogs, "Dialogs JSONL")->required();
  e->add_option("--regions", ev.regions, "Regions JSONL")->required();
  e->add_option("--out", ev.out, "Report output path");
  e->add_flag("--force", ev.force, "Overwrite existing outputs");
  e->callback([&ev] { run_evaluate(ev); });

  ExportAttentionOpts ex;
  auto* x = app.add_subcommand("export-attention",
                               "Dump response-to-region attention");
  x->add_option("--checkpoint", ex.checkpoint, "Generator checkpoint")
      ->required();
  x->add_option("--vocab", ex.vocab, "Vocabulary file")->required();
  x->add_option("--dialogs", ex.dialogs, "Dialogs JSONL")->required();
  x->add_option("--regions", ex.regions, "Regions JSONL")->required();
  x->add_option("--dialog-id", ex.dialog_id, "Dialog to visualize")
      ->required();
  x->add_option("--image-id", ex.image_id, "Image to visualize")->required();
  x->add_option("--layer", ex.layer, "Layer index");
  x->add_option("--head", ex.head, "Head index");
  x->add_option("--out", ex.out, "JSON output path");
  x->add_flag("--force", ex.force, "Overwrite existing outputs");
  x->callback([&ex] { run_export_attention(ex); });

  ChatOpts ch;
  auto* c = app.add_subcommand("chat", "Interactive demo loop");
  c->add_option("--gen-checkpoint", ch.gen_checkpoint, "Generator checkpoint")
      ->required();
  c->add_option("--retriever-checkpoint", ch.retriever_checkpoint,
                "Retriever checkpoint")
      ->required();
  c->add_option("--vocab", ch.vocab, "Vocabulary file")->required();
  c->add_option("--index", ch.index, "Image index")->required();
  c->add_option("--regions", ch.regions, "Regions JSONL")->required();
  c->add_option("--max-len", ch.max_len, "Maximum words per reply");
  c->add_option("--context-window", ch.context_window,
                "Utterances of rolling context");
  c->add_option("--seed", ch.seed, "Random seed");
  c->callback([&ch] { run_chat(ch); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 0;
}
