#include "torch_doctest.hpp"

#include <filesystem>

#include "cfseg/causal.hpp"
#include "cfseg/checkpoint.hpp"
#include "cfseg/classifier.hpp"
#include "cfseg/evaluation.hpp"
#include "cfseg/hvae.hpp"
#include "cfseg/pipeline.hpp"
#include "cfseg/segmenter.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace cfseg;

namespace {

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / "cfseg_test_models" / name; }

// A 100-sample 16x16 dataset, built once.
const synth::Manifest& tiny_dataset() {
  static const synth::Manifest m = [] {
    synth::DatasetConfig c;
    c.n = 100;
    c.size = 16;
    c.disease_prevalence = 0.3;
    fs::remove_all(scratch("data"));
    return synth::build_dataset(c, scratch("data"));
  }();
  return m;
}

hvae::HvaeConfig tiny_hvae() {
  hvae::HvaeConfig c;
  c.size = 16;
  c.levels = 2;
  c.latent_channels = {4, 2};
  c.width = 8;
  c.embed_dim = 4;
  return c;
}

hvae::TrainConfig one_epoch() {
  hvae::TrainConfig t;
  t.epochs = 1;
  t.batch_size = 16;
  t.verbose = false;
  return t;
}

seg::SegModelConfig tiny_seg() { return {16, 3, 4}; }

const hvae::HvaeModel& trained_hvae() {
  static const hvae::HvaeModel m = hvae::train(tiny_dataset(), tiny_hvae(), one_epoch()).model;
  return m;
}

}  // namespace

TEST_SUITE("hvae") {
  TEST_CASE("ELBO gradient matches finite differences") {
    const auto r = gradcheck::hvae_elbo();
    CHECK(r.checked == 60);
    CHECK(r.max_rel_error <= 1e-3);
  }

  TEST_CASE("config validation") {
    auto c = tiny_hvae();
    c.beta = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_hvae();
    c.levels = 1;
    c.latent_channels = {4};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(hvae::hvae_config_from_json({{"beta", 0.0}}), ConfigError);
  }

  TEST_CASE("a one-epoch run reports exactly one epoch") {
    const auto r = hvae::train(tiny_dataset(), tiny_hvae(), one_epoch());
    CHECK(r.report.epochs.size() == 1);
    CHECK(std::isfinite(r.report.epochs[0].val_elbo));
  }

  TEST_CASE("abduction is deterministic and shape-checked") {
    auto model = trained_hvae();
    const auto& rec = tiny_dataset().records[0];
    const auto img = io::read_image_png(tiny_dataset().path_of(rec.image_path));
    const auto a = hvae::encode(model, img, rec.attributes);
    const auto b = hvae::encode(model, img, rec.attributes);
    REQUIRE(a.depth() == 2);
    for (std::size_t i = 0; i < a.depth(); ++i) CHECK(torch::equal(a.levels[i], b.levels[i]));
    CHECK_THROWS_AS(hvae::encode(model, Image(8, 8), rec.attributes), ArgumentError);
    auto bad = a;
    bad.levels.pop_back();
    CHECK_THROWS_AS(hvae::decode(model, bad, rec.attributes), ArgumentError);
  }

  TEST_CASE("decoding an all-zero latent stack is repeatable") {
    auto model = trained_hvae();
    hvae::LatentStack zeros;
    for (int i = 0; i < 2; ++i) {
      const int r = tiny_hvae().latent_resolution(i);
      zeros.levels.push_back(torch::zeros({1, tiny_hvae().latent_channels[static_cast<std::size_t>(i)], r, r}));
    }
    const synth::AttributeVector pa{1, 0, 0, 0.0};
    const auto x = hvae::decode(model, zeros, pa);
    CHECK(x == hvae::decode(model, zeros, pa));
    for (float v : x.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  TEST_CASE("checkpoint round trip and version mismatch") {
    const auto path = scratch("hvae.pt");
    hvae::save(path, trained_hvae());
    const auto loaded = hvae::load(path);
    CHECK(checkpoint::parameter_checksum(*loaded) == checkpoint::parameter_checksum(*trained_hvae()));
    CHECK_THROWS_AS(checkpoint::read_header(path, "hvae", hvae::kCheckpointVersion + 1), checkpoint::CheckpointError);
    CHECK_THROWS_AS(seg::load(path), checkpoint::CheckpointError);
  }
}

TEST_SUITE("causal") {
  TEST_CASE("graph validation") {
    using causal::VariableSpec;
    CHECK_THROWS_AS(causal::CausalGraph({{"a", {"b"}, "identity"}, {"b", {"a"}, "identity"}}), ValidationError);
    CHECK_THROWS_AS(causal::CausalGraph({{"a", {"zz"}, "identity"}}), ValidationError);
    const auto g = causal::CausalGraph::standard();
    CHECK(g.variables().back().name == "image");
    CHECK(g.is_descendant("image", "disease"));
    CHECK_FALSE(g.is_descendant("sex", "disease"));
    CHECK(causal::CausalGraph::from_json(g.to_json()).variables().size() == 5);
  }

  TEST_CASE("abduction and counterfactuals") {
    const auto engine = causal::CausalEngine::with_hvae(trained_hvae());
    const auto& m = tiny_dataset();
    const synth::ManifestRecord* sick = nullptr;
    const synth::ManifestRecord* well = nullptr;
    for (const auto& r : m.records) (r.attributes.disease ? sick : well) = &r;
    REQUIRE(sick);
    REQUIRE(well);

    const auto obs_well = causal::observation_of(well->attributes, io::read_image_png(m.path_of(well->image_path)));
    const auto null = engine.counterfactual(obs_well, {});
    CHECK(causal::attributes_of(null) == well->attributes);

    const auto obs_sick = causal::observation_of(sick->attributes, io::read_image_png(m.path_of(sick->image_path)));
    const auto post = engine.abduct(obs_sick);
    CHECK(std::holds_alternative<hvae::LatentStack>(post.noise.at("image")));

    const auto cf = engine.counterfactual(obs_sick, causal::pseudo_healthy());
    CHECK(causal::attributes_of(cf).disease == 0);
    CHECK(causal::attributes_of(cf).severity == 0.0);
    CHECK(causal::attributes_of(cf).sex == sick->attributes.sex);

    // do(disease := 0) alone also zeroes severity through its mechanism.
    const auto cf2 = engine.counterfactual(obs_sick, {{"disease", 0.0}});
    CHECK(causal::attributes_of(cf2).severity == 0.0);
    CHECK(causal::image_of(cf2) == causal::image_of(cf));

    // On a healthy record, do(disease := 0) is the null intervention.
    CHECK(causal::image_of(engine.counterfactual(obs_well, {{"disease", 0.0}})) == causal::image_of(null));

    auto missing = obs_sick;
    missing.erase("scanner");
    CHECK_THROWS_AS(engine.abduct(missing), IncompleteEvidenceError);
    CHECK_THROWS_AS(engine.counterfactual(obs_sick, {{"age", 1.0}}), ArgumentError);
    CHECK_THROWS_AS(engine.counterfactual(obs_sick, {{"disease", 0.5}}), ArgumentError);
  }

  TEST_CASE("sampling abduction is reproducible under a seed") {
    const auto a = causal::CausalEngine::with_hvae(trained_hvae(), causal::AbductionMode::Sample, 5);
    const auto& r = tiny_dataset().records[1];
    const auto obs = causal::observation_of(r.attributes, io::read_image_png(tiny_dataset().path_of(r.image_path)));
    CHECK(causal::image_of(a.counterfactual(obs, {})) == causal::image_of(a.counterfactual(obs, {})));
  }
}

TEST_SUITE("segmenter") {
  TEST_CASE("training reads silver labels only") {
    seg::SegTrainConfig t;
    t.label_field = "gt_mask_path";
    CHECK_THROWS_AS(t.validate(), ConfigError);
    auto m = tiny_dataset();
    m.records[0].silver_mask_path = m.records[0].gt_mask_path;
    seg::SegTrainConfig ok;
    ok.epochs = 1;
    ok.verbose = false;
    CHECK_THROWS_AS(seg::train_seg(m, tiny_seg(), ok), ConfigError);
    t = {};
    t.epochs = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
  }

  TEST_CASE("training without diseased samples succeeds and segmentation is deterministic") {
    auto m = tiny_dataset();
    std::erase_if(m.records, [](const auto& r) { return r.attributes.disease == 1; });
    seg::SegTrainConfig t;
    t.epochs = 1;
    t.batch_size = 16;
    t.verbose = false;
    auto r = seg::train_seg(m, tiny_seg(), t);
    CHECK(r.report.epochs.size() == 1);
    const auto img = io::read_image_png(m.path_of(m.records[0].image_path));
    const auto a = seg::segment(r.model, img);
    CHECK(a == seg::segment(r.model, img));
    for (auto v : a.values()) CHECK(v <= 2);
    CHECK(pipeline::infer_direct(r.model, img) == a);

    const auto path = scratch("seg.pt");
    seg::save(path, r.model);
    auto loaded = seg::load(path);
    CHECK(seg::checksum(loaded) == r.report.checksum);
    CHECK(seg::segment(loaded, img) == a);
  }
}

TEST_SUITE("pipeline") {
  seg::SegModel quick_seg() {
    static seg::SegModel model = [] {
      seg::SegTrainConfig t;
      t.epochs = 1;
      t.batch_size = 16;
      t.verbose = false;
      return seg::train_seg(tiny_dataset(), tiny_seg(), t).model;
    }();
    return model;
  }

  TEST_CASE("cfseg mask is the segmentation of the returned counterfactual") {
    auto s = quick_seg();
    const auto engine = causal::CausalEngine::with_hvae(trained_hvae());
    const auto& r = tiny_dataset().records[2];
    const auto img = io::read_image_png(tiny_dataset().path_of(r.image_path));
    const auto out = pipeline::infer_cfseg(engine, s, img, r.attributes);
    CHECK(out.mask == seg::segment(s, out.cf_image));
    CHECK(out.cf_image.height() == 16);
  }

  TEST_CASE("stage errors carry the failing stage") {
    auto s = quick_seg();
    const auto engine = causal::CausalEngine::with_hvae(trained_hvae());
    try {
      pipeline::infer_cfseg(engine, s, Image(8, 8), {0, 0, 0, 0.0});
      FAIL("expected StageError");
    } catch (const pipeline::StageError& e) {
      CHECK(e.stage() == pipeline::Stage::Abduction);
    }
  }

  TEST_CASE("batch inference writes two masks per sample and is repeatable") {
    pipeline::Models models;
    models.seg = quick_seg();
    models.engine = causal::CausalEngine::with_hvae(trained_hvae());
    const auto out = scratch("infer");
    fs::remove_all(out);
    const auto summary = pipeline::batch_infer(tiny_dataset(), models, pipeline::ArmSelection::Both, out);
    const auto n = tiny_dataset().split(synth::Split::Test).size();
    CHECK(summary.success());
    CHECK(summary.results.records.size() == 2 * n);
    std::size_t masks = 0;
    for (const auto& e : fs::recursive_directory_iterator(out / "preds")) masks += e.is_regular_file();
    CHECK(masks == 2 * n);
    for (const auto& r : summary.results.records) CHECK(r.seg_checksum == seg::checksum(models.seg));

    const auto again = scratch("infer_again");
    fs::remove_all(again);
    pipeline::batch_infer(tiny_dataset(), models, pipeline::ArmSelection::Both, again);
    for (const auto& r : summary.results.records)
      CHECK(io::read_mask_png(out / r.pred_mask_path) == io::read_mask_png(again / r.pred_mask_path));

    const auto loaded = pipeline::ResultsManifest::load(out / pipeline::kResultsName);
    CHECK(fs::exists(loaded.path_of(loaded.records[0].sample.gt_mask_path)));
  }

  TEST_CASE("an empty manifest gives empty results and success") {
    pipeline::Models models;
    models.seg = quick_seg();
    synth::Manifest empty;
    empty.root = scratch("empty");
    const auto summary = pipeline::batch_infer(empty, models, pipeline::ArmSelection::Direct, scratch("empty_out"));
    CHECK(summary.success());
    CHECK(summary.results.records.empty());
  }

  TEST_CASE("a missing image fails that sample only") {
    pipeline::Models models;
    models.seg = quick_seg();
    auto m = tiny_dataset();
    const auto test = m.split(synth::Split::Test);
    const auto bad_id = test.front()->id;
    for (auto& r : m.records)
      if (r.id == bad_id) r.image_path = "images/missing.png";
    const auto summary = pipeline::batch_infer(m, models, pipeline::ArmSelection::Direct, scratch("partial"));
    CHECK(summary.failed == 1);
    CHECK(summary.ok == static_cast<int>(test.size()) - 1);
    CHECK_FALSE(summary.success());
  }

  TEST_CASE("evaluation rejects arms from different segmenters") {
    pipeline::Models models;
    models.seg = quick_seg();
    models.engine = causal::CausalEngine::with_hvae(trained_hvae());
    const auto out = scratch("eval_mismatch");
    fs::remove_all(out);
    auto results = pipeline::batch_infer(tiny_dataset(), models, pipeline::ArmSelection::Both, out).results;
    for (auto& r : results.records)
      if (r.arm == pipeline::Arm::CfSeg) r.seg_checksum = "different";
    std::vector<pipeline::ResultsManifest> v{results};
    CHECK_THROWS_AS(eval::build_report(tiny_dataset(), v, {}), DataError);
  }
}

TEST_SUITE("classifier") {
  TEST_CASE("probabilities are in range and checkpoints round trip") {
    classifier::ClassifierConfig c;
    c.size = 16;
    c.width = 4;
    c.epochs = 1;
    c.verbose = false;
    auto r = classifier::train_classifier(tiny_dataset(), c);
    const auto img = io::read_image_png(tiny_dataset().path_of(tiny_dataset().records[0].image_path));
    const double p = classifier::predict_proba(r.model, img);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    classifier::save(scratch("clf.pt"), r.model);
    auto back = classifier::load(scratch("clf.pt"));
    CHECK(classifier::predict_proba(back, img) == doctest::Approx(p));
  }
}

TEST_CASE("built-in defaults equal configs/default.json") {
  const auto file = io::read_json(CFSEG_DEFAULT_CONFIG);
  CHECK(synth::to_json(synth::DatasetConfig{}) == synth::to_json(synth::dataset_config_from_json(file.at("data"))));
  const auto& h = file.at("hvae");
  CHECK(hvae::to_json(hvae::HvaeConfig{}) == hvae::to_json(hvae::hvae_config_from_json(h.at("model"))));
  CHECK(hvae::to_json(hvae::TrainConfig{}) == hvae::to_json(hvae::hvae_train_config_from_json(h.at("train"))));
  const auto& s = file.at("seg");
  CHECK(seg::to_json(seg::SegModelConfig{}) ==
        seg::to_json(seg::seg_model_config_from_json(s.at("model"))));
  CHECK(seg::to_json(seg::SegTrainConfig{}) ==
        seg::to_json(seg::seg_train_config_from_json(s.at("train"))));
  CHECK(classifier::to_json(classifier::ClassifierConfig{}) ==
        classifier::to_json(classifier::classifier_config_from_json(file.at("classifier"))));
}
