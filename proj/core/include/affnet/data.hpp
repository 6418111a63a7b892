// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "affnet/geometry.hpp"
#include "affnet/image.hpp"
#include "affnet/model.hpp"
#include "affnet/tensor.hpp"

namespace affnet {

/// One dataset row. Either explicit boxes or landmarks must be present,
/// and either a cm label or a pixel label plus device metadata.
struct ManifestRecord {
  std::string subject_id;
  std::string frame_path;  // relative to the manifest's directory
  std::optional<Landmarks> landmarks;
  std::optional<BoundingBox> face_box, left_eye_box, right_eye_box;
  std::optional<Vec2> label_cm;
  std::optional<Vec2> label_px;
  std::optional<DeviceScreen> device;
  int frame_w = 0, frame_h = 0;
  std::string split;  // optional train/val/test tag

  bool has_boxes() const { return face_box && left_eye_box && right_eye_box; }
};

/// Parses UTF-8 JSONL; pixel labels are converted to cm on load, so every
/// returned record carries label_cm. Malformed lines and records missing
/// required fields raise IoError with the line number.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);
void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path);

/// Deterministic synthetic desk-scale task. Each frame is noise plus two
/// bright eye discs whose centers are an affine function of the gaze
/// label, and a frame-fixed mouth bar. A per-sample head translation
/// shifts all three boxes (but not the discs), so box geometry is needed
/// to decode the label exactly.
struct SynthConfig {
  int n_samples = 256;
  int n_subjects = 1;  // subjects get disjoint head-translation regimes
  std::array<Vec2, 2> label_range_cm{{{-8.0, 8.0}, {2.0, 18.0}}};  // x range, y range
  double noise_level = 0.05;
  std::uint64_t seed = 7;

  // World geometry (pixels). Eye boxes are sized so the +-30px training
  // shift rarely pushes the disc out of the crop, and the disc travel
  // gives ~4.5 px/cm of gaze signal; frames stay small enough to keep
  // the whole corpus in memory.
  int frame_w = 560, frame_h = 420;
  double face_box_size = 240, eye_box_size = 128;
  double eye_offset_x = 60, eye_offset_y = -30;
  double head_shift_max = 18;
  double disc_radius = 9, disc_travel = 36;
};

/// Writes out_dir/manifest.jsonl and out_dir/frames/*.ppm, byte-identical
/// for identical configs.
void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// disc_center_px = A * label + b, the generator's ground truth.
Vec2 synth_disc_center_px(const SynthConfig& cfg, const Vec2& label_cm, bool right_eye);

/// Brightness centroid of pixels above `threshold` inside `box`; the
/// independent route used to show the task is decodable from the frames.
std::optional<Vec2> detect_disc_centroid(const Image& frame, const BoundingBox& box, double threshold = 0.5);

template <typename T>
struct Sample {
  Tensor<T> face;               // [3,224,224]
  Tensor<T> eye_left;           // [3,112,112]
  Tensor<T> eye_right_flipped;  // [3,112,112]
  Tensor<T> rects;              // [12]
  Vec2 label_cm{0, 0};
  std::string subject_id;
  double face_width_px = 0;
  double frame_short_px = 0;
};

/// Crops, resizes and normalizes one record. With `augment` the boxes are
/// independently shifted first (and the Rects re-derived from the shifted
/// boxes, keeping image and Rects consistent).
template <typename T>
Sample<T> preprocess_sample(const ManifestRecord& record, const Image& frame, bool augment, Rng& rng,
                            int face_size = 224, int eye_size = 112);

/// Manifest-backed dataset with a shared frame cache. Subset views share
/// the cache of the parent.
class Dataset {
 public:
  Dataset() = default;
  static Dataset open(const std::filesystem::path& manifest_path);
  static Dataset from_records(std::vector<ManifestRecord> records, std::filesystem::path root);

  int size() const;
  const ManifestRecord& record(int i) const;
  const Image& frame(int i) const;
  Dataset subset(std::vector<int> indices) const;
  std::vector<std::string> subjects() const;  // distinct, in first-appearance order

 private:
  struct Shared;
  std::shared_ptr<Shared> shared_;
  std::vector<int> view_;
};

template <typename T>
struct Batch {
  BatchInput<T> input;
  Tensor<T> labels;  // [N,2]
  std::vector<int> indices;
  std::vector<double> face_width_px;
  std::vector<double> frame_short_px;
};

/// Index partition: deterministic permutation from the seed (identity
/// without one); the final partial batch is kept.
std::vector<std::vector<int>> batch_indices(int n, int batch_size, std::optional<std::uint64_t> shuffle_seed);

/// Augmentation noise is keyed by (aug_seed, epoch, dataset index), so the
/// result is independent of worker count and batch membership.
template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const int> indices, bool augment, std::uint64_t aug_seed,
                    int epoch, int face_size = 224, int eye_size = 112);

template <typename T>
std::vector<Batch<T>> batches(const Dataset& data, int batch_size, std::optional<std::uint64_t> shuffle_seed);

}  // namespace affnet
