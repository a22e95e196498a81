#include "protofuse/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "protofuse/errors.hpp"

namespace protofuse {

std::string to_string(FillStrategy s) { return s == FillStrategy::sgi ? "sgi" : "mean_fill"; }

FillStrategy parse_fill_strategy(const std::string& text) {
  if (text == "sgi") return FillStrategy::sgi;
  if (text == "mean_fill" || text == "mean") return FillStrategy::mean_fill;
  throw ConfigError("unknown fill strategy '" + text + "' (expected sgi or mean_fill)");
}

std::string to_string(Modality m) { return m == Modality::multimodal ? "multimodal" : "histology_only"; }

Modality parse_modality(const std::string& text) {
  if (text == "multimodal") return Modality::multimodal;
  if (text == "histology_only" || text == "histology") return Modality::histology_only;
  throw ConfigError("unknown modality '" + text + "' (expected multimodal or histology_only)");
}

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::prototyping: return "prototyping";
    case ParamGroup::alignment: return "alignment";
    case ParamGroup::imputation: return "imputation";
    case ParamGroup::fusion: return "fusion";
    case ParamGroup::heads: return "heads";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// TrainConfig

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
  }
}

long parse_long(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects an integer, got '" + value + "'");
  }
}

int parse_int(const std::string& key, const std::string& value) { return static_cast<int>(parse_long(key, value)); }

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
  };
  require(batch_size >= 1, "batch_size must be positive");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
  require(epochs >= 1, "epochs must be positive");
  require(phase1_epochs >= 0 && phase1_epochs <= epochs, "phase1_epochs must lie in [0, epochs]");
  require(lambda_reg >= 0.0, "lambda_reg must be non-negative");
  require(lambda_cycle >= 0.0, "lambda_cycle must be non-negative");
  require(top_k >= 0 && top_k <= 6, "top_k must lie in [0, 6]");
  require(accumulation >= 1, "accumulation must be positive");
  require(schedule_total_steps >= 0, "schedule_total_steps must be non-negative");
  require(survival_bins >= 1, "survival_bins must be positive");
  require(attention_iterations >= 1, "attention_iterations must be positive");
  require(temperature > 0.0, "temperature must be positive");
  require(max_train_missing_rate >= 0.0 && max_train_missing_rate <= 1.0, "max_train_missing_rate must lie in [0, 1]");
  require(freeze_tolerance >= 0.0, "freeze_tolerance must be non-negative");
  require(freeze_patience >= 1, "freeze_patience must be positive");
  require(early_stopping_patience >= 1, "early_stopping_patience must be positive");
  require(discriminator_hidden >= 1, "discriminator_hidden must be positive");
  if (missingness) {
    require(missingness->rate >= 0.0 && missingness->rate <= 1.0, "missingness_rate must lie in [0, 1]");
  }
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::map<std::string, std::string> m{
      {"task", to_string(task)},
      {"seed", std::to_string(seed)},
      {"batch_size", std::to_string(batch_size)},
      {"learning_rate", num(learning_rate)},
      {"epochs", std::to_string(epochs)},
      {"phase1_epochs", std::to_string(phase1_epochs)},
      {"lambda_reg", num(lambda_reg)},
      {"lambda_cycle", num(lambda_cycle)},
      {"top_k", std::to_string(top_k)},
      {"accumulation", std::to_string(accumulation)},
      {"schedule_total_steps", std::to_string(schedule_total_steps)},
      {"fill_strategy", to_string(fill_strategy)},
      {"modality", to_string(modality)},
      {"survival_bins", std::to_string(survival_bins)},
      {"attention_iterations", std::to_string(attention_iterations)},
      {"temperature", num(temperature)},
      {"mi_denominator", mi_denominator == MiDenominator::cross_pair ? "cross_pair" : "paired_only"},
      {"max_train_missing_rate", num(max_train_missing_rate)},
      {"freeze_tolerance", num(freeze_tolerance)},
      {"freeze_patience", std::to_string(freeze_patience)},
      {"early_stopping_patience", std::to_string(early_stopping_patience)},
      {"discriminator_hidden", std::to_string(discriminator_hidden)},
      {"prompt_embeddings", prompt_embeddings},
  };
  if (missingness) {
    m["missingness_mode"] = to_string(missingness->mode);
    m["missingness_rate"] = num(missingness->rate);
    m["missingness_seed"] = std::to_string(missingness->seed);
  }
  return m;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "task") {
    task = parse_task(value);
  } else if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_long(key, value));
  } else if (key == "batch_size") {
    batch_size = parse_int(key, value);
  } else if (key == "learning_rate") {
    learning_rate = parse_double(key, value);
  } else if (key == "epochs") {
    epochs = parse_int(key, value);
  } else if (key == "phase1_epochs") {
    phase1_epochs = parse_int(key, value);
  } else if (key == "lambda_reg") {
    lambda_reg = parse_double(key, value);
  } else if (key == "lambda_cycle") {
    lambda_cycle = parse_double(key, value);
  } else if (key == "top_k" || key == "K") {
    top_k = parse_int(key, value);
  } else if (key == "accumulation") {
    accumulation = parse_int(key, value);
  } else if (key == "schedule_total_steps") {
    schedule_total_steps = parse_long(key, value);
  } else if (key == "fill_strategy") {
    fill_strategy = parse_fill_strategy(value);
  } else if (key == "modality") {
    modality = parse_modality(value);
  } else if (key == "survival_bins") {
    survival_bins = parse_int(key, value);
  } else if (key == "attention_iterations") {
    attention_iterations = parse_int(key, value);
  } else if (key == "temperature") {
    temperature = parse_double(key, value);
  } else if (key == "mi_denominator") {
    if (value == "cross_pair") {
      mi_denominator = MiDenominator::cross_pair;
    } else if (value == "paired_only") {
      mi_denominator = MiDenominator::paired_only;
    } else {
      throw ConfigError("mi_denominator must be cross_pair or paired_only");
    }
  } else if (key == "max_train_missing_rate") {
    max_train_missing_rate = parse_double(key, value);
  } else if (key == "freeze_tolerance") {
    freeze_tolerance = parse_double(key, value);
  } else if (key == "freeze_patience") {
    freeze_patience = parse_int(key, value);
  } else if (key == "early_stopping_patience") {
    early_stopping_patience = parse_int(key, value);
  } else if (key == "discriminator_hidden") {
    discriminator_hidden = parse_int(key, value);
  } else if (key == "prompt_embeddings") {
    prompt_embeddings = value;
  } else if (key == "missingness_mode") {
    if (!missingness) missingness.emplace();
    missingness->mode = parse_missingness_mode(value);
  } else if (key == "missingness_rate") {
    if (!missingness) missingness.emplace();
    missingness->rate = parse_double(key, value);
  } else if (key == "missingness_seed") {
    if (!missingness) missingness.emplace();
    missingness->seed = static_cast<std::uint64_t>(parse_long(key, value));
  } else {
    throw ConfigError("unknown configuration key '" + key + "'");
  }
}

std::uint64_t TrainConfig::hash() const {
  std::string text;
  for (const auto& [k, v] : to_map()) text += k + "=" + v + "\n";
  return fnv1a(text.data(), text.size());
}

void apply_config_file(const std::string& path, TrainConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

// ---------------------------------------------------------------------------
// ModelState

Parameter& ModelState::param(const std::string& name) { return params[index_of(name)]; }
const Parameter& ModelState::param(const std::string& name) const { return params[index_of(name)]; }

std::size_t ModelState::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw PreconditionError("model has no parameter '" + name + "'");
  return it->second;
}

std::uint64_t ModelState::checksum(ParamGroup g) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (groups[i] != g) continue;
    const Matrix& v = params[i].value;
    h = fnv1a(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()), h);
  }
  return h;
}

void ModelState::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < params.size(); ++i) index_[params[i].name] = i;
}

void ModelState::add(std::string name, ParamGroup group, Matrix value) {
  Parameter p;
  p.name = std::move(name);
  p.value = std::move(value);
  p.zero_grad();
  p.adam_m = Matrix::Zero(p.value.rows(), p.value.cols());
  p.adam_v = Matrix::Zero(p.value.rows(), p.value.cols());
  index_[p.name] = params.size();
  params.push_back(std::move(p));
  groups.push_back(group);
}

AttentionParams ModelState::histology_attention() const {
  return {param("hist.w_q").value, param("hist.w_k").value, param("hist.w_v").value, config.attention_iterations};
}

ImportanceHead ModelState::histology_importance() const {
  return {param("importance_p.weight").value, param("importance_p.bias").value(0, 0)};
}

ImportanceHead ModelState::genomic_importance() const {
  return {param("importance_g.weight").value, param("importance_g.bias").value(0, 0)};
}

CriticParams ModelState::critic() const {
  return {param("critic.proj_p").value, param("critic.bias_p").value, param("critic.proj_g").value,
          param("critic.bias_g").value, config.temperature, true};
}

namespace {

Translator translator_from(const ModelState& s, const std::string& prefix) {
  Translator t;
  t.w1 = s.param(prefix + ".w1").value;
  t.b1 = s.param(prefix + ".b1").value;
  t.w2 = s.param(prefix + ".w2").value;
  t.b2 = s.param(prefix + ".b2").value;
  t.row_bias = s.param(prefix + ".row_bias").value;
  return t;
}

Discriminator discriminator_from(const ModelState& s, const std::string& prefix) {
  return {s.param(prefix + ".u").value, s.param(prefix + ".c").value, s.param(prefix + ".v").value,
          s.param(prefix + ".d").value(0, 0)};
}

}  // namespace

TranslatorPair ModelState::translators() const { return {translator_from(*this, "pg"), translator_from(*this, "gp")}; }

DiscriminatorPair ModelState::discriminators() const {
  return {discriminator_from(*this, "dg"), discriminator_from(*this, "dp")};
}

FusionParams ModelState::fusion() const { return {param("fusion.weight").value, param("fusion.bias").value}; }

// ---------------------------------------------------------------------------
// Initialisation

namespace {

Matrix randn(Eigen::Index rows, Eigen::Index cols, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

}  // namespace

ModelState init_model(const Cohort& cohort, const TrainConfig& cfg) {
  cfg.validate();
  if (cohort.size() == 0) throw PreconditionError("cannot initialise a model from an empty cohort");
  ModelState s;
  s.config = cfg;
  s.dim = cohort.embedding_dim();
  s.histology_names = cohort.histology_category_names;
  s.gene_group_names = cohort.gene_group_names;
  const Eigen::Index d = s.dim;
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  const EmbeddingProvider provider = cfg.prompt_embeddings.empty()
                                         ? EmbeddingProvider::deterministic_hash(d)
                                         : EmbeddingProvider::from_file(cfg.prompt_embeddings);
  const std::vector<std::string> names(s.histology_names.begin(), s.histology_names.end());
  PrototypeSet init = init_histology_prototypes(names, provider);
  if (init.dim() != d) throw InitializationError("prompt embeddings do not match the patch embedding dimension");

  using G = ParamGroup;
  const Matrix eye = Matrix::Identity(d, d);
  // Unit prompt vectors are rescaled to the typical patch norm so the first
  // attention step is not uniform.
  s.add("hist.init", G::prototyping, init.tokens * std::sqrt(static_cast<double>(d)));
  s.add("hist.w_q", G::prototyping, randn(d, d, inv, rng));
  s.add("hist.w_k", G::prototyping, randn(d, d, inv, rng));
  s.add("hist.w_v", G::prototyping, eye + randn(d, d, 0.1 * inv, rng));
  s.add("gene.scale", G::prototyping, randn(kNumGeneGroups, d, 1.0, rng));
  s.add("gene.bias", G::prototyping, randn(kNumGeneGroups, d, 1.0, rng));
  s.add("gene.w_q", G::prototyping, randn(d, d, inv, rng));
  s.add("gene.w_k", G::prototyping, randn(d, d, inv, rng));
  s.add("gene.w_v", G::prototyping, randn(d, d, 0.1 * inv, rng));
  s.add("importance_p.weight", G::prototyping, Matrix::Zero(d, 1));
  s.add("importance_p.bias", G::prototyping, Matrix::Zero(1, 1));
  s.add("importance_g.weight", G::prototyping, Matrix::Zero(d, 1));
  s.add("importance_g.bias", G::prototyping, Matrix::Zero(1, 1));

  s.add("critic.proj_p", G::alignment, randn(d, d, inv, rng));
  s.add("critic.bias_p", G::alignment, Matrix::Zero(1, d));
  s.add("critic.proj_g", G::alignment, randn(d, d, inv, rng));
  s.add("critic.bias_g", G::alignment, Matrix::Zero(1, d));
  for (const char* side : {"cls_p", "cls_g"}) {
    const std::string p(side);
    s.add(p + ".token", G::alignment, randn(1, d, 0.1, rng));
    s.add(p + ".w_q", G::alignment, randn(d, d, inv, rng));
    s.add(p + ".w_k", G::alignment, randn(d, d, inv, rng));
    s.add(p + ".w_v", G::alignment, randn(d, d, 0.1 * inv, rng));
  }

  for (const char* side : {"pg", "gp"}) {
    const std::string p(side);
    s.add(p + ".w1", G::imputation, randn(d, d, inv, rng));
    s.add(p + ".b1", G::imputation, Matrix::Zero(1, d));
    s.add(p + ".w2", G::imputation, randn(d, d, 0.1 * inv, rng));
    s.add(p + ".b2", G::imputation, Matrix::Zero(1, d));
    s.add(p + ".row_bias", G::imputation, Matrix::Zero(kNumGeneGroups, d));
  }
  const int h = cfg.discriminator_hidden;
  for (const char* side : {"dg", "dp"}) {
    const std::string p(side);
    s.add(p + ".u", G::imputation, randn(d, h, inv, rng));
    s.add(p + ".c", G::imputation, Matrix::Zero(1, h));
    s.add(p + ".v", G::imputation, randn(h, 1, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    s.add(p + ".d", G::imputation, Matrix::Zero(1, 1));
  }

  Matrix mix(2 * d, d);
  mix << 0.5 * eye, 0.5 * eye;
  s.add("fusion.weight", G::fusion, mix + randn(2 * d, d, 0.01 * inv, rng));
  s.add("fusion.bias", G::fusion, Matrix::Zero(1, d));

  const int c = num_outputs(cfg.task, cfg.survival_bins);
  s.add("head.weight", G::heads, randn(d, c, 0.01, rng));
  s.add("head.bias", G::heads, Matrix::Zero(1, c));

  if (cfg.task == Task::survival) {
    std::vector<double> times;
    for (const auto& p : cohort.patients) times.push_back(p.survival_time);
    s.cut_points = quantile_cut_points(times, cfg.survival_bins);
  }
  s.mean_fill_tokens = compute_mean_fill_tokens(s, cohort);
  return s;
}

// ---------------------------------------------------------------------------
// Forward pass

ParamVars bind_parameters(ad::Tape& tape, ModelState& state, const std::array<bool, 5>& trainable) {
  ParamVars out;
  out.vars.reserve(state.params.size());
  for (std::size_t i = 0; i < state.params.size(); ++i) {
    const bool train = trainable[static_cast<std::size_t>(state.groups[i])];
    out.vars.push_back(train ? tape.parameter(state.params[i]) : tape.constant(state.params[i].value));
  }
  return out;
}

ParamVars bind_constants(ad::Tape& tape, const ModelState& state) {
  ParamVars out;
  out.vars.reserve(state.params.size());
  for (const auto& p : state.params) out.vars.push_back(tape.constant(p.value));
  return out;
}

namespace {

struct Binder {
  const ModelState& state;
  const ParamVars& vars;
  const ad::Var& operator()(const std::string& name) const { return vars[state.index_of(name)]; }

  ops::AttentionVars attention(const std::string& prefix) const {
    return {(*this)(prefix + ".w_q"), (*this)(prefix + ".w_k"), (*this)(prefix + ".w_v")};
  }
  ops::TranslatorVars translator(const std::string& prefix) const {
    ops::TranslatorVars t;
    t.w1 = (*this)(prefix + ".w1");
    t.b1 = (*this)(prefix + ".b1");
    t.w2 = (*this)(prefix + ".w2");
    t.b2 = (*this)(prefix + ".b2");
    t.row_bias = (*this)(prefix + ".row_bias");
    return t;
  }
};

ad::Var mean_rows(const ad::Var& x) { return ad::scale(ad::col_sum(x), 1.0 / static_cast<double>(x.rows())); }

Vector column(const ad::Var& v) { return v.value().col(0); }

}  // namespace

ForwardResult forward(ad::Tape& tape, const ModelState& state, const ParamVars& vars, const SlideBag& slide,
                      const GenomicView& genomics) {
  if (slide.n_patches() == 0) throw PreconditionError("slide " + slide.slide_id + " has no patches");
  if (slide.dim() != state.dim) throw PreconditionError("slide " + slide.slide_id + " has the wrong embedding width");
  const Binder v{state, vars};
  const TrainConfig& cfg = state.config;
  ForwardResult r;

  const ad::Var patches = tape.constant(slide.patch_embeddings);
  const ad::Var refined =
      ops::refine_prototypes(v("hist.init"), patches, v.attention("hist"), cfg.attention_iterations, &r.attention);
  const ad::Var wp = ops::importance(refined, v("importance_p.weight"), v("importance_p.bias"));
  r.hist_tokens = ad::scale_rows(refined, wp);
  r.hist_pooled = ops::pool(refined, wp);
  r.hist_importance = column(wp);

  const auto [cls_p, p_ctx] = ops::aggregate_with_cls(r.hist_tokens, v("cls_p.token"), v.attention("cls_p"));

  ad::Var rep;
  if (cfg.modality == Modality::histology_only) {
    rep = ad::add(mean_rows(p_ctx), cls_p);
  } else {
    const bool has_real = genomics.kind != GenomicView::Kind::missing;
    if (has_real && genomics.summary == nullptr) throw PreconditionError("genomic view is missing its summary");
    ad::Var g_used;
    ad::Var generated;
    auto get_generated = [&]() {
      if (!generated.valid()) generated = ops::translate(r.hist_tokens, v.translator("pg"));
      r.used_generated = true;
      return generated;
    };
    if (has_real) {
      const ad::Var tokens = ops::group_tokens(*genomics.summary, v("gene.scale"), v("gene.bias"));
      const ad::Var g_ref = ops::self_attention(tokens, v.attention("gene"));
      const ad::Var wg = ops::importance(g_ref, v("importance_g.weight"), v("importance_g.bias"));
      r.gen_real = ad::scale_rows(g_ref, wg);
      r.gen_pooled = ops::pool(g_ref, wg);
      r.gen_importance = column(wg);
      r.empty_groups = genomics.summary->empty;
      g_used = r.gen_real;
      if (genomics.kind == GenomicView::Kind::interpolated) {
        g_used = ad::add(ad::scale(r.gen_real, genomics.m), ad::scale(get_generated(), 1.0 - genomics.m));
      }
      bool any_empty = false;
      for (bool e : r.empty_groups) any_empty = any_empty || e;
      if (any_empty) {
        std::vector<ad::Var> rows;
        const ad::Var filler =
            genomics.fill == FillStrategy::sgi ? get_generated() : tape.constant(state.mean_fill_tokens);
        for (int k = 0; k < kNumGeneGroups; ++k) {
          rows.push_back(ad::slice_rows(r.empty_groups[k] ? filler : g_used, k, 1));
        }
        g_used = ad::concat_rows(rows);
      }
    } else {
      g_used = genomics.fill == FillStrategy::sgi ? get_generated() : tape.constant(state.mean_fill_tokens);
      r.empty_groups.fill(true);
    }
    r.gen_tokens = g_used;
    if (!has_real) {
      const ImportanceHead head = state.genomic_importance();
      r.gen_importance =
          (1.0 / (1.0 + (-(g_used.value() * head.weight).array() - head.bias).exp())).matrix().col(0);
    }

    const auto [cls_g, g_ctx] = ops::aggregate_with_cls(g_used, v("cls_g.token"), v.attention("cls_g"));
    r.affinity = affinity_matrix(p_ctx.value(), g_ctx.value()).values;
    r.selection = select_top_k(AffinityMatrix{r.affinity}, cfg.top_k);
    const ad::Var fused = ops::fuse(p_ctx, g_ctx, r.selection, v("fusion.weight"), v("fusion.bias"));
    rep = ad::add(mean_rows(fused), ad::scale(ad::add(cls_p, cls_g), 0.5));
  }
  r.outputs = ad::add_row(ad::matmul(rep, v("head.weight")), v("head.bias"));
  return r;
}

Matrix compute_mean_fill_tokens(const ModelState& state, const Cohort& cohort) {
  Matrix sum = Matrix::Zero(kNumGeneGroups, state.dim);
  std::array<int, 6> count{};
  for (const auto& p : cohort.patients) {
    if (!p.has_genomics()) continue;
    const GroupSummary summary = summarize_groups(*p.genomic);
    ad::Tape tape;
    const ParamVars vars = bind_constants(tape, state);
    const Binder v{state, vars};
    const ad::Var tokens = ops::group_tokens(summary, v("gene.scale"), v("gene.bias"));
    const ad::Var g_ref = ops::self_attention(tokens, v.attention("gene"));
    const ad::Var wg = ops::importance(g_ref, v("importance_g.weight"), v("importance_g.bias"));
    const Matrix g = ad::scale_rows(g_ref, wg).value();
    for (int k = 0; k < kNumGeneGroups; ++k) {
      if (summary.empty[k]) continue;
      sum.row(k) += g.row(k);
      ++count[k];
    }
  }
  for (int k = 0; k < kNumGeneGroups; ++k) {
    if (count[k] > 0) {
      sum.row(k) /= count[k];
    } else {
      // No observation of this group anywhere: fall back to its bias token.
      sum.row(k) = state.param("gene.bias").value.row(k);
    }
  }
  return sum;
}

Vector class_probabilities(const RowVector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp().transpose();
  return e / e.sum();
}

}  // namespace protofuse
