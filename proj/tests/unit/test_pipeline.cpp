#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "protofuse/errors.hpp"
#include "protofuse/pipeline.hpp"

using namespace protofuse;

namespace {

const Cohort& small_cohort() {
  static const Cohort c = generate_synthetic(24, 8, 24, 3);
  return c;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 4;
  cfg.phase1_epochs = 2;
  cfg.accumulation = 2;
  return cfg;
}

std::string trace(const TrainLog& log) {
  std::string out = TrainLog::header() + "\n";
  for (const auto& e : log.epochs) out += log.row(e) + "\n";
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_metrics(const MetricsReport& a, const MetricsReport& b) {
  return a.c_index == b.c_index && a.auc == b.auc && a.accuracy == b.accuracy && a.n_samples == b.n_samples;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config validation and flat view") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.phase1_epochs = cfg.epochs + 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    TrainConfig a;
    for (const auto& [k, v] : TrainConfig{}.to_map()) a.set(k, v);
    CHECK(a.hash() == TrainConfig{}.hash());
    a.set("top_k", "2");
    CHECK(a.top_k == 2);
    CHECK(a.hash() != TrainConfig{}.hash());
    CHECK_THROWS_AS(a.set("no_such_key", "1"), ConfigError);
    CHECK_THROWS_AS(a.set("fill_strategy", "zeros"), ConfigError);

    oracle::ScratchDir dir("cfg");
    std::ofstream(dir.path() / "train.cfg") << "# comment\nepochs = 12\nlearning_rate=0.002  # trailing\n";
    TrainConfig from_file;
    apply_config_file((dir.path() / "train.cfg").string(), from_file);
    CHECK(from_file.epochs == 12);
    CHECK(from_file.learning_rate == 0.002);
  }

  TEST_CASE("training is deterministic") {
    const TrainResult a = train(small_cohort(), small_config());
    const TrainResult b = train(small_cohort(), small_config());
    CHECK(trace(a.log) == trace(b.log));
    for (std::size_t i = 0; i < a.state.params.size(); ++i) CHECK(a.state.params[i].value == b.state.params[i].value);
    CHECK(a.log.epochs.size() == 5);
    CHECK(a.log.epochs.front().epoch == 0);
  }

  TEST_CASE("phase discipline") {
    const TrainResult r = train(small_cohort(), small_config());
    const EpochLog& init = r.log.epochs.front();
    for (const auto& e : r.log.epochs) {
      if (e.phase != 1) continue;
      CHECK(e.checksum_alignment == init.checksum_alignment);
      CHECK(e.checksum_imputation == init.checksum_imputation);
    }
    CHECK(r.log.epochs.back().phase == 2);
    CHECK(r.log.epochs.back().checksum_imputation != init.checksum_imputation);
    CHECK(r.log.epochs.back().checksum_alignment != init.checksum_alignment);
  }

  TEST_CASE("frozen alignment parameters never change") {
    TrainConfig cfg = small_config();
    cfg.epochs = 6;
    cfg.freeze_patience = 1;
    cfg.freeze_tolerance = 100.0;
    const TrainResult r = train(small_cohort(), cfg);
    REQUIRE(r.log.freeze_epoch > cfg.phase1_epochs);
    CHECK(r.state.alignment_frozen);
    const EpochLog* at_freeze = nullptr;
    for (const auto& e : r.log.epochs) {
      if (e.epoch == r.log.freeze_epoch) at_freeze = &e;
      if (at_freeze && e.epoch > r.log.freeze_epoch) {
        CHECK(e.alignment_frozen);
        CHECK(e.checksum_alignment == at_freeze->checksum_alignment);
        CHECK(e.ma_total == 0.0);
      }
    }
    REQUIRE(at_freeze != nullptr);
    CHECK(r.state.checksum(ParamGroup::alignment) == at_freeze->checksum_alignment);
  }

  TEST_CASE("phase-1-only schedule leaves the cross-modal groups untouched") {
    TrainConfig cfg = small_config();
    cfg.phase1_epochs = cfg.epochs;
    const TrainResult r = train(small_cohort(), cfg);
    const ModelState init = init_model(small_cohort(), cfg);
    for (ParamGroup g : {ParamGroup::alignment, ParamGroup::imputation, ParamGroup::fusion})
      CHECK(r.state.checksum(g) == init.checksum(g));
    CHECK(r.state.checksum(ParamGroup::prototyping) != init.checksum(ParamGroup::prototyping));
    for (const auto& e : r.log.epochs) CHECK(e.phase == 1);
  }

  TEST_CASE("evaluation tags, zero-rate masking and per-patient averaging") {
    const TrainResult r = train(small_cohort(), small_config());
    const EvalResult none = evaluate(r.state, small_cohort());
    const EvalResult zero = evaluate(r.state, small_cohort(), {MissingnessSpec{MissingnessMode::patient_wise, 0.0, 1}});
    CHECK(same_metrics(none.report, zero.report));
    CHECK(none.report.mode == "none");
    CHECK(none.report.c_index.has_value());

    for (const auto& pred : none.predictions) {
      REQUIRE(!pred.per_slide.empty());
      Vector mean = Vector::Zero(pred.scores.size());
      for (const auto& s : pred.per_slide) mean += s;
      mean /= static_cast<double>(pred.per_slide.size());
      CHECK((mean - pred.scores).norm() < 1e-12);
    }

    const MissingnessSpec full{MissingnessMode::patient_wise, 1.0, 1};
    const EvalResult sgi = evaluate(r.state, small_cohort(), {full, FillStrategy::sgi});
    const EvalResult mf = evaluate(r.state, small_cohort(), {full, FillStrategy::mean_fill});
    CHECK(sgi.report.strategy == "sgi");
    CHECK(mf.report.strategy == "mean_fill");
    CHECK(sgi.report.row() != mf.report.row());
  }

  TEST_CASE("sweep counts and rate-zero rows") {
    const TrainResult r = train(small_cohort(), small_config());
    std::vector<SweepUnit> units{{&r.state, small_cohort(), "0"}};
    const auto rows = sweep_units(units, {MissingnessMode::patient_wise, MissingnessMode::feature_wise},
                                  default_sweep_rates(), {FillStrategy::sgi, FillStrategy::mean_fill}, 5);
    REQUIRE(rows.size() == 20);
    std::set<std::string> keys;
    for (const auto& row : rows) keys.insert(row.mode + "/" + std::to_string(row.rate) + "/" + row.strategy);
    CHECK(keys.size() == 20);
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
      if (rows[i].rate == 0.0 && rows[i + 1].rate == 0.0 && rows[i].mode == rows[i + 1].mode)
        CHECK(same_metrics(rows[i], rows[i + 1]));
    }
  }

  TEST_CASE("checkpoint round trip") {
    const TrainResult r = train(small_cohort(), small_config());
    oracle::ScratchDir a("ckpt_a"), b("ckpt_b");
    save_checkpoint(r.state, a.path());
    const ModelState loaded = load_checkpoint(a.path());
    CHECK(loaded.config.hash() == r.state.config.hash());
    CHECK(loaded.step == r.state.step);
    CHECK(loaded.phase == r.state.phase);
    CHECK(loaded.cut_points == r.state.cut_points);
    REQUIRE(loaded.params.size() == r.state.params.size());
    for (std::size_t i = 0; i < loaded.params.size(); ++i) {
      CHECK(loaded.params[i].name == r.state.params[i].name);
      CHECK(loaded.params[i].value == r.state.params[i].value.cast<float>().cast<double>());
    }
    save_checkpoint(loaded, b.path());
    for (const auto& entry : std::filesystem::directory_iterator(a.path()))
      CHECK(slurp(entry.path()) == slurp(b.path() / entry.path().filename()));

    std::ofstream(a.path() / "checkpoint.json") << "{ not json";
    CHECK_THROWS_AS(load_checkpoint(a.path()), SchemaError);
  }

  TEST_CASE("explain exports satisfy their contracts") {
    const TrainResult r = train(small_cohort(), small_config());
    const ExplainBundle bundle = explain(r.state, small_cohort(), &r.log);
    REQUIRE(bundle.importance.rows() == static_cast<Eigen::Index>(small_cohort().size()));
    REQUIRE(bundle.importance.cols() == 12);
    for (Eigen::Index i = 0; i < bundle.importance.rows(); ++i) {
      CHECK(bundle.importance.row(i).minCoeff() >= 0.0);
      CHECK(bundle.importance.row(i).maxCoeff() <= 1.0);
      CHECK((bundle.importance.row(i).minCoeff() == 0.0));
    }
    for (const auto& a : bundle.affinity) {
      CHECK(a.rows() == 6);
      CHECK(a.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    }
    for (const auto& s : bundle.attention)
      for (Eigen::Index k = 0; k < s.attention.rows(); ++k) CHECK(std::abs(s.attention.row(k).sum() - 1.0) < 1e-6);
    CHECK(bundle.alignment_trace.size() == r.log.epochs.size());

    oracle::ScratchDir dir("explain");
    write_explain(bundle, dir.path());
    for (const char* f : {"importance.tsv", "affinity.tsv", "attention.tsv", "alignment_trace.tsv", "index.json"})
      CHECK(std::filesystem::exists(dir.path() / f));
  }

  TEST_CASE("non-finite losses are reported by component") {
    Cohort c = small_cohort();
    for (auto& p : c.patients)
      for (auto& s : p.slides) s.patch_embeddings *= 1e200;
    bool diverged = false;
    try {
      train(c, small_config());
    } catch (const DivergenceError& e) {
      diverged = true;
      CHECK(std::string(e.what()).find("component 'task'") != std::string::npos);
    }
    CHECK(diverged);

    TrainConfig cfg = small_config();
    cfg.learning_rate = 1e12;
    CHECK_THROWS_AS(train(small_cohort(), cfg), Error);
  }
}
