// SPDX-License-Identifier: Apache-2.0
#include "affnet/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>

#include "affnet/ops.hpp"

namespace affnet {

using nlohmann::json;

namespace {

json box_to_json(const BoundingBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

BoundingBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw IoError("box must be [x1,y1,x2,y2]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

Vec2 vec2_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw IoError("point must be [x,y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

json landmarks_to_json(const Landmarks& lm) {
  return json{{"left_eye_outer", lm.left_eye_outer},   {"left_eye_inner", lm.left_eye_inner},
              {"right_eye_inner", lm.right_eye_inner}, {"right_eye_outer", lm.right_eye_outer},
              {"mouth_left", lm.mouth_left},           {"mouth_right", lm.mouth_right}};
}

Landmarks landmarks_from_json(const json& j) {
  Landmarks lm;
  lm.left_eye_outer = vec2_from_json(j.at("left_eye_outer"));
  lm.left_eye_inner = vec2_from_json(j.at("left_eye_inner"));
  lm.right_eye_inner = vec2_from_json(j.at("right_eye_inner"));
  lm.right_eye_outer = vec2_from_json(j.at("right_eye_outer"));
  lm.mouth_left = vec2_from_json(j.at("mouth_left"));
  lm.mouth_right = vec2_from_json(j.at("mouth_right"));
  return lm;
}

json device_to_json(const DeviceScreen& d) {
  return json{{"screen_w_cm", d.screen_w_cm}, {"screen_h_cm", d.screen_h_cm}, {"screen_w_px", d.screen_w_px},
              {"screen_h_px", d.screen_h_px}, {"camera_offset_cm", d.camera_offset_cm}};
}

DeviceScreen device_from_json(const json& j) {
  DeviceScreen d;
  d.screen_w_cm = j.at("screen_w_cm").get<double>();
  d.screen_h_cm = j.at("screen_h_cm").get<double>();
  d.screen_w_px = j.at("screen_w_px").get<int>();
  d.screen_h_px = j.at("screen_h_px").get<int>();
  d.camera_offset_cm = vec2_from_json(j.at("camera_offset_cm"));
  return d;
}

ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  r.subject_id = j.at("subject_id").get<std::string>();
  r.frame_path = j.at("frame_path").get<std::string>();
  r.frame_w = j.at("frame_w").get<int>();
  r.frame_h = j.at("frame_h").get<int>();
  if (j.contains("landmarks")) r.landmarks = landmarks_from_json(j.at("landmarks"));
  if (j.contains("face_box")) r.face_box = box_from_json(j.at("face_box"));
  if (j.contains("left_eye_box")) r.left_eye_box = box_from_json(j.at("left_eye_box"));
  if (j.contains("right_eye_box")) r.right_eye_box = box_from_json(j.at("right_eye_box"));
  if (j.contains("label_cm")) r.label_cm = vec2_from_json(j.at("label_cm"));
  if (j.contains("label_px")) r.label_px = vec2_from_json(j.at("label_px"));
  if (j.contains("device")) r.device = device_from_json(j.at("device"));
  if (j.contains("split")) r.split = j.at("split").get<std::string>();
  return r;
}

json record_to_json(const ManifestRecord& r) {
  json j{{"subject_id", r.subject_id}, {"frame_path", r.frame_path}, {"frame_w", r.frame_w}, {"frame_h", r.frame_h}};
  if (r.landmarks) j["landmarks"] = landmarks_to_json(*r.landmarks);
  if (r.face_box) j["face_box"] = box_to_json(*r.face_box);
  if (r.left_eye_box) j["left_eye_box"] = box_to_json(*r.left_eye_box);
  if (r.right_eye_box) j["right_eye_box"] = box_to_json(*r.right_eye_box);
  if (r.label_cm) j["label_cm"] = *r.label_cm;
  if (r.label_px) j["label_px"] = *r.label_px;
  if (r.device) j["device"] = device_to_json(*r.device);
  if (!r.split.empty()) j["split"] = r.split;
  return j;
}

void validate_record(ManifestRecord& r, std::size_t line_no) {
  const std::string where = "manifest line " + std::to_string(line_no) + ": ";
  std::vector<std::string> missing;
  if (!r.label_cm && !(r.label_px && r.device)) missing.push_back("label_cm or (label_px and device)");
  if (!r.has_boxes() && !r.landmarks) missing.push_back("boxes or landmarks");
  if (r.frame_w <= 0 || r.frame_h <= 0) missing.push_back("positive frame_w/frame_h");
  if (!missing.empty()) {
    std::string msg = where + "missing required fields:";
    for (const std::string& m : missing) msg += " " + m + ";";
    throw IoError(msg);
  }
  if (!r.label_cm) r.label_cm = pixels_to_camera_cm(*r.label_px, *r.device);
}

}  // namespace

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    ManifestRecord r;
    try {
      r = record_from_json(j);
    } catch (const json::exception& e) {
      throw IoError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    validate_record(r, line_no);
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const ManifestRecord& r : records) out << record_to_json(r).dump() << "\n";
}

namespace {

struct SynthWorld {
  Vec2 label_center, gain;     // disc = gain * (label - center) + eye_base
  Vec2 left_eye_base, right_eye_base, face_base;
};

SynthWorld synth_world(const SynthConfig& cfg) {
  SynthWorld w;
  w.label_center = {(cfg.label_range_cm[0][0] + cfg.label_range_cm[0][1]) / 2.0,
                    (cfg.label_range_cm[1][0] + cfg.label_range_cm[1][1]) / 2.0};
  const double hx = (cfg.label_range_cm[0][1] - cfg.label_range_cm[0][0]) / 2.0;
  const double hy = (cfg.label_range_cm[1][1] - cfg.label_range_cm[1][0]) / 2.0;
  w.gain = {hx > 0 ? cfg.disc_travel / hx : 0.0, hy > 0 ? cfg.disc_travel / hy : 0.0};
  w.face_base = {cfg.frame_w / 2.0, cfg.frame_h / 2.0};
  w.left_eye_base = {w.face_base[0] - cfg.eye_offset_x, w.face_base[1] + cfg.eye_offset_y};
  w.right_eye_base = {w.face_base[0] + cfg.eye_offset_x, w.face_base[1] + cfg.eye_offset_y};
  return w;
}

BoundingBox centered_box(const Vec2& c, double size) {
  return {c[0] - size / 2.0, c[1] - size / 2.0, c[0] + size / 2.0, c[1] + size / 2.0};
}

// Anti-aliased disc: per-pixel coverage ramps over one pixel at the rim.
void draw_disc(Image& img, const Vec2& center, double radius, double brightness) {
  const int x0 = std::max(0, static_cast<int>(std::floor(center[0] - radius - 1)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(center[0] + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(center[1] - radius - 1)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(center[1] + radius + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d = std::hypot(x - center[0], y - center[1]);
      const double cov = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      if (cov <= 0) continue;
      for (int c = 0; c < 3; ++c) {
        const double old = img.at(x, y, c) / 255.0;
        const double v = old * (1 - cov) + brightness * cov;
        img.rgb[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
}

void draw_rect(Image& img, const BoundingBox& r, double brightness) {
  const int x0 = std::max(0, static_cast<int>(std::lround(r.x1)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::lround(r.x2)));
  const int y0 = std::max(0, static_cast<int>(std::lround(r.y1)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::lround(r.y2)));
  const std::uint8_t v = static_cast<std::uint8_t>(std::lround(brightness * 255.0));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) img.set(x, y, v, v, v);
  }
}

Vec2 subject_head_shift(const SynthConfig& cfg, int subject, Rng& rng) {
  const double m = cfg.head_shift_max;
  double lo_x = -m, hi_x = m, lo_y = -m, hi_y = m;
  if (cfg.n_subjects > 1) {
    // Disjoint translation regimes per subject: quadrants of the shift
    // space, cycling when there are more than four subjects.
    const int q = subject % 4;
    if (q & 1) lo_x = 0; else hi_x = 0;
    if (q & 2) lo_y = 0; else hi_y = 0;
  }
  return {rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
}

}  // namespace

Vec2 synth_disc_center_px(const SynthConfig& cfg, const Vec2& label_cm, bool right_eye) {
  const SynthWorld w = synth_world(cfg);
  const Vec2& base = right_eye ? w.right_eye_base : w.left_eye_base;
  return {base[0] + w.gain[0] * (label_cm[0] - w.label_center[0]),
          base[1] + w.gain[1] * (label_cm[1] - w.label_center[1])};
}

void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.n_samples < 1) throw ContractViolation("generate_synthetic needs n_samples >= 1");
  if (cfg.label_range_cm[0][0] > cfg.label_range_cm[0][1] || cfg.label_range_cm[1][0] > cfg.label_range_cm[1][1]) {
    throw ContractViolation("generate_synthetic label ranges must be non-empty");
  }
  const SynthWorld w = synth_world(cfg);
  std::filesystem::create_directories(out_dir / "frames");

  std::vector<ManifestRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.n_samples));
  for (int i = 0; i < cfg.n_samples; ++i) {
    Rng rng = Rng::derive(cfg.seed, {0xda7a, static_cast<std::uint64_t>(i)});
    const int subject = cfg.n_subjects > 1 ? i % cfg.n_subjects : 0;
    const Vec2 label{rng.uniform(cfg.label_range_cm[0][0], cfg.label_range_cm[0][1]),
                     rng.uniform(cfg.label_range_cm[1][0], cfg.label_range_cm[1][1])};
    const Vec2 shift = subject_head_shift(cfg, subject, rng);

    Image frame = Image::filled(cfg.frame_w, cfg.frame_h, 0);
    for (int y = 0; y < cfg.frame_h; ++y) {
      for (int x = 0; x < cfg.frame_w; ++x) {
        const auto v = static_cast<std::uint8_t>(std::lround(rng.uniform(0.0, cfg.noise_level) * 255.0));
        frame.set(x, y, v, v, v);
      }
    }
    // Mouth bar fixed in frame space; its crop-local position encodes the
    // head translation.
    const double bar_hw = 0.14 * cfg.face_box_size;
    draw_rect(frame, {w.face_base[0] - bar_hw, w.face_base[1] + 0.24 * cfg.face_box_size, w.face_base[0] + bar_hw,
                      w.face_base[1] + 0.32 * cfg.face_box_size},
              0.7);
    draw_disc(frame, synth_disc_center_px(cfg, label, false), cfg.disc_radius, 0.9);
    draw_disc(frame, synth_disc_center_px(cfg, label, true), cfg.disc_radius, 0.9);

    char name[64];
    std::snprintf(name, sizeof(name), "frames/sample_%05d.ppm", i);
    write_ppm(frame, out_dir / name);

    ManifestRecord r;
    r.subject_id = "s" + std::to_string(subject);
    r.frame_path = name;
    r.frame_w = cfg.frame_w;
    r.frame_h = cfg.frame_h;
    const Vec2 fc{w.face_base[0] + shift[0], w.face_base[1] + shift[1]};
    r.face_box = centered_box(fc, cfg.face_box_size);
    r.left_eye_box = centered_box({w.left_eye_base[0] + shift[0], w.left_eye_base[1] + shift[1]}, cfg.eye_box_size);
    r.right_eye_box = centered_box({w.right_eye_base[0] + shift[0], w.right_eye_base[1] + shift[1]}, cfg.eye_box_size);
    r.label_cm = label;
    records.push_back(std::move(r));
  }
  write_manifest(records, out_dir / "manifest.jsonl");
}

std::optional<Vec2> detect_disc_centroid(const Image& frame, const BoundingBox& box, double threshold) {
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  const int x1 = std::min(frame.width - 1, static_cast<int>(std::ceil(box.x2)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  const int y1 = std::min(frame.height - 1, static_cast<int>(std::ceil(box.y2)));
  double sum_w = 0, sx = 0, sy = 0;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double v = frame.at(x, y, 1) / 255.0;
      if (v <= threshold) continue;
      const double weight = v - threshold;
      sum_w += weight;
      sx += weight * x;
      sy += weight * y;
    }
  }
  if (sum_w <= 0) return std::nullopt;
  return Vec2{sx / sum_w, sy / sum_w};
}

template <typename T>
Sample<T> preprocess_sample(const ManifestRecord& record, const Image& frame, bool augment, Rng& rng, int face_size,
                            int eye_size) {
  FaceBoxes boxes;
  if (record.has_boxes()) {
    boxes = {*record.face_box, *record.left_eye_box, *record.right_eye_box};
  } else if (record.landmarks) {
    boxes = boxes_from_landmarks(*record.landmarks);
  } else {
    throw ContractViolation("record carries neither boxes nor landmarks");
  }
  if (augment) boxes = random_shift(boxes, record.frame_w, record.frame_h, rng);

  Sample<T> s;
  s.face = crop_resize_normalize<T>(frame, boxes.face, face_size, face_size);
  s.eye_left = crop_resize_normalize<T>(frame, boxes.left_eye, eye_size, eye_size);
  s.eye_right_flipped = ops::hflip(crop_resize_normalize<T>(frame, boxes.right_eye, eye_size, eye_size));
  const std::array<double, 12> rects = normalize_rects(boxes.face, boxes.left_eye, boxes.right_eye, record.frame_w,
                                                       record.frame_h);
  s.rects = Tensor<T>({12});
  for (int i = 0; i < 12; ++i) s.rects.data()[i] = static_cast<T>(rects[static_cast<std::size_t>(i)]);
  s.label_cm = *record.label_cm;
  s.subject_id = record.subject_id;
  s.face_width_px = boxes.face.width();
  s.frame_short_px = std::min(record.frame_w, record.frame_h);
  return s;
}

struct Dataset::Shared {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
  mutable std::mutex mu;
  mutable std::vector<std::unique_ptr<Image>> frames;
};

Dataset Dataset::open(const std::filesystem::path& manifest_path) {
  Dataset d;
  d.shared_ = std::make_shared<Shared>();
  d.shared_->root = manifest_path.parent_path();
  d.shared_->records = load_manifest(manifest_path);
  d.shared_->frames.resize(d.shared_->records.size());
  d.view_.resize(d.shared_->records.size());
  for (std::size_t i = 0; i < d.view_.size(); ++i) d.view_[i] = static_cast<int>(i);
  return d;
}

Dataset Dataset::from_records(std::vector<ManifestRecord> records, std::filesystem::path root) {
  Dataset d;
  d.shared_ = std::make_shared<Shared>();
  d.shared_->root = std::move(root);
  d.shared_->records = std::move(records);
  d.shared_->frames.resize(d.shared_->records.size());
  d.view_.resize(d.shared_->records.size());
  for (std::size_t i = 0; i < d.view_.size(); ++i) d.view_[i] = static_cast<int>(i);
  return d;
}

int Dataset::size() const { return static_cast<int>(view_.size()); }

const ManifestRecord& Dataset::record(int i) const {
  return shared_->records[static_cast<std::size_t>(view_[static_cast<std::size_t>(i)])];
}

const Image& Dataset::frame(int i) const {
  const int base = view_[static_cast<std::size_t>(i)];
  std::scoped_lock lock(shared_->mu);
  std::unique_ptr<Image>& slot = shared_->frames[static_cast<std::size_t>(base)];
  if (!slot) {
    slot = std::make_unique<Image>(read_ppm(shared_->root / shared_->records[static_cast<std::size_t>(base)].frame_path));
  }
  return *slot;
}

Dataset Dataset::subset(std::vector<int> indices) const {
  Dataset d;
  d.shared_ = shared_;
  d.view_.reserve(indices.size());
  for (int i : indices) d.view_.push_back(view_[static_cast<std::size_t>(i)]);
  return d;
}

std::vector<std::string> Dataset::subjects() const {
  std::vector<std::string> out;
  for (int i = 0; i < size(); ++i) {
    const std::string& s = record(i).subject_id;
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  return out;
}

std::vector<std::vector<int>> batch_indices(int n, int batch_size, std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size < 1) throw ContractViolation("batch_size must be >= 1");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  if (shuffle_seed) {
    Rng rng = Rng::derive(*shuffle_seed, {0x5f});
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)],
                                              order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  }
  std::vector<std::vector<int>> out;
  for (int at = 0; at < n; at += batch_size) {
    const int end = std::min(n, at + batch_size);
    out.emplace_back(order.begin() + at, order.begin() + end);
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  std::vector<int> shape{static_cast<int>(rows.size())};
  shape.insert(shape.end(), rows[0].shape().begin(), rows[0].shape().end());
  Tensor<T> out(shape);
  const std::int64_t step = rows[0].numel();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * step, rows[i].data(),
                static_cast<std::size_t>(step) * sizeof(T));
  }
  return out;
}

}  // namespace

template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const int> indices, bool augment, std::uint64_t aug_seed,
                    int epoch, int face_size, int eye_size) {
  if (indices.empty()) throw ContractViolation("make_batch needs at least one index");
  std::vector<Tensor<T>> faces, lefts, rights, rects;
  Batch<T> batch;
  Tensor<T> labels({static_cast<int>(indices.size()), 2});
  int row = 0;
  for (const int idx : indices) {
    Rng rng = Rng::derive(aug_seed, {0xa09, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(idx)});
    Sample<T> s = preprocess_sample<T>(data.record(idx), data.frame(idx), augment, rng, face_size, eye_size);
    faces.push_back(s.face);
    lefts.push_back(s.eye_left);
    rights.push_back(s.eye_right_flipped);
    rects.push_back(s.rects);
    labels.data()[2 * row] = static_cast<T>(s.label_cm[0]);
    labels.data()[2 * row + 1] = static_cast<T>(s.label_cm[1]);
    batch.face_width_px.push_back(s.face_width_px);
    batch.frame_short_px.push_back(s.frame_short_px);
    ++row;
  }
  batch.input.face = stack_rows(faces);
  batch.input.eye_left = stack_rows(lefts);
  batch.input.eye_right_flipped = stack_rows(rights);
  batch.input.rects = stack_rows(rects);
  batch.labels = labels;
  batch.indices.assign(indices.begin(), indices.end());
  return batch;
}

template <typename T>
std::vector<Batch<T>> batches(const Dataset& data, int batch_size, std::optional<std::uint64_t> shuffle_seed) {
  std::vector<Batch<T>> out;
  for (const std::vector<int>& idx : batch_indices(data.size(), batch_size, shuffle_seed)) {
    out.push_back(make_batch<T>(data, idx, /*augment=*/false, /*aug_seed=*/0, /*epoch=*/0));
  }
  return out;
}

#define AFFNET_INSTANTIATE_DATA(T)                                                                          \
  template Sample<T> preprocess_sample<T>(const ManifestRecord&, const Image&, bool, Rng&, int, int);       \
  template Batch<T> make_batch<T>(const Dataset&, std::span<const int>, bool, std::uint64_t, int, int, int); \
  template std::vector<Batch<T>> batches<T>(const Dataset&, int, std::optional<std::uint64_t>);

AFFNET_INSTANTIATE_DATA(float)
AFFNET_INSTANTIATE_DATA(double)

#undef AFFNET_INSTANTIATE_DATA

}  // namespace affnet
