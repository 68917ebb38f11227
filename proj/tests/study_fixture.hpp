#pragma once

#include <filesystem>
#include <string>

#include "cfseg/io.hpp"
#include "cfseg/results.hpp"

// A results manifest with both arms for n_healthy + n_diseased samples. All samples share
// one image and one mask file per arm, which keeps large sessions cheap to build.
inline cfseg::pipeline::ResultsManifest make_study_results(const std::filesystem::path& dir, int n_healthy,
                                                           int n_diseased) {
  using namespace cfseg;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  Image image(8, 8, 0.5f);
  Mask a(8, 8), b(8, 8);
  for (int y = 2; y < 6; ++y) {
    a(y, 1) = kRightLung;
    b(y, 1) = kRightLung;
    a(y, 6) = kLeftLung;
  }
  io::write_image_png(dir / "img.png", image);
  io::write_mask_png(dir / "direct.png", a);
  io::write_mask_png(dir / "cfseg.png", b);

  pipeline::ResultsManifest m;
  m.root = dir;
  for (int i = 0; i < n_healthy + n_diseased; ++i) {
    synth::ManifestRecord s;
    s.id = "p" + std::to_string(1000 + i);
    s.image_path = "img.png";
    s.gt_mask_path = "direct.png";
    s.silver_mask_path = "direct.png";
    s.split = synth::Split::Test;
    if (i >= n_healthy) s.attributes = {0, 0, 1, 0.5};
    for (auto arm : {pipeline::Arm::Direct, pipeline::Arm::CfSeg}) {
      pipeline::ResultRecord r;
      r.sample = s;
      r.arm = arm;
      r.pred_mask_path = pipeline::to_string(arm) + ".png";
      r.seg_checksum = "abc";
      m.records.push_back(r);
    }
  }
  m.save(dir / pipeline::kResultsName);
  return m;
}
