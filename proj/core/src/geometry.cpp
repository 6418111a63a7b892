// SPDX-License-Identifier: Apache-2.0
#include "affnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace affnet {

namespace {

Vec2 mean2(std::initializer_list<Vec2> pts) {
  Vec2 m{0, 0};
  for (const Vec2& p : pts) {
    m[0] += p[0];
    m[1] += p[1];
  }
  m[0] /= static_cast<double>(pts.size());
  m[1] /= static_cast<double>(pts.size());
  return m;
}

BoundingBox square_box(const Vec2& center, double size) {
  const double half = size / 2.0;
  return {center[0] - half, center[1] - half, center[0] + half, center[1] + half};
}

}  // namespace

FaceBoxes boxes_from_landmarks(const Landmarks& lm) {
  const double left_w = std::abs(lm.left_eye_outer[0] - lm.left_eye_inner[0]);
  const double right_w = std::abs(lm.right_eye_outer[0] - lm.right_eye_inner[0]);
  if (left_w <= 0 || right_w <= 0) throw InvalidGeometry("degenerate landmarks: zero eye width");

  const double left_size = 1.7 * left_w;
  const double right_size = 1.7 * right_w;
  const Vec2 left_center = mean2({lm.left_eye_outer, lm.left_eye_inner});
  const Vec2 right_center = mean2({lm.right_eye_outer, lm.right_eye_inner});

  const Vec2 eyes_mean = mean2({lm.left_eye_outer, lm.left_eye_inner, lm.right_eye_inner, lm.right_eye_outer});
  const Vec2 mouth_mean = mean2({lm.mouth_left, lm.mouth_right});
  const Vec2 face_center = mean2({eyes_mean, mouth_mean});
  const double face_size = (left_size + right_size) / 2.0 / 0.3;

  return {square_box(face_center, face_size), square_box(left_center, left_size), square_box(right_center, right_size)};
}

std::array<double, 12> normalize_rects(const BoundingBox& face, const BoundingBox& left_eye,
                                       const BoundingBox& right_eye, int frame_w, int frame_h) {
  if (frame_w <= 0 || frame_h <= 0) throw ContractViolation("normalize_rects needs positive frame dimensions");
  const double w = frame_w, h = frame_h;
  std::array<double, 12> out{};
  int i = 0;
  for (const BoundingBox* b : {&face, &left_eye, &right_eye}) {
    out[i++] = b->x1 / w;
    out[i++] = b->y1 / h;
    out[i++] = b->x2 / w;
    out[i++] = b->y2 / h;
  }
  return out;
}

namespace {

BoundingBox shift_one(const BoundingBox& b, int frame_w, int frame_h, Rng& rng, int max_shift) {
  int dx = rng.uniform_int(-max_shift, max_shift);
  int dy = rng.uniform_int(-max_shift, max_shift);
  // Clamp so the box stays inside the frame; boxes already wider than the
  // frame keep their position.
  const double lo_x = -b.x1, hi_x = frame_w - b.x2;
  const double lo_y = -b.y1, hi_y = frame_h - b.y2;
  if (lo_x <= hi_x) dx = static_cast<int>(std::clamp<double>(dx, std::ceil(lo_x), std::floor(hi_x)));
  else dx = 0;
  if (lo_y <= hi_y) dy = static_cast<int>(std::clamp<double>(dy, std::ceil(lo_y), std::floor(hi_y)));
  else dy = 0;
  return {b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy};
}

}  // namespace

FaceBoxes random_shift(const FaceBoxes& boxes, int frame_w, int frame_h, Rng& rng, int max_shift) {
  FaceBoxes out;
  out.face = shift_one(boxes.face, frame_w, frame_h, rng, max_shift);
  out.left_eye = shift_one(boxes.left_eye, frame_w, frame_h, rng, max_shift);
  out.right_eye = shift_one(boxes.right_eye, frame_w, frame_h, rng, max_shift);
  return out;
}

template <typename T>
Tensor<T> crop_resize_normalize(const Image& frame, const BoundingBox& box, int out_h, int out_w) {
  if (!box.valid()) throw InvalidGeometry("crop box is degenerate");
  if (box.x2 <= 0 || box.y2 <= 0 || box.x1 >= frame.width || box.y1 >= frame.height) {
    throw InvalidGeometry("crop box lies fully outside the frame");
  }
  if (out_h <= 0 || out_w <= 0) throw ContractViolation("crop target extents must be positive");

  Tensor<T> out({3, out_h, out_w});
  const double sx = box.width() / out_w;
  const double sy = box.height() / out_h;
  auto pixel = [&](int x, int y, int c) -> double {
    if (x < 0 || x >= frame.width || y < 0 || y >= frame.height) return 0.0;  // zero-fill outside the frame
    return static_cast<double>(frame.at(x, y, c));
  };
  T* dst = out.data();
  const std::int64_t plane = static_cast<std::int64_t>(out_h) * out_w;
  for (int j = 0; j < out_h; ++j) {
    const double fy = std::clamp(box.y1 + j * sy, box.y1, box.y2 - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    for (int i = 0; i < out_w; ++i) {
      const double fx = std::clamp(box.x1 + i * sx, box.x1, box.x2 - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v00 = pixel(x0, y0, c), v01 = pixel(x0 + 1, y0, c);
        const double v10 = pixel(x0, y0 + 1, c), v11 = pixel(x0 + 1, y0 + 1, c);
        const double top = v00 + wx * (v01 - v00);
        const double bot = v10 + wx * (v11 - v10);
        dst[c * plane + static_cast<std::int64_t>(j) * out_w + i] = static_cast<T>((top + wy * (bot - top)) / 255.0);
      }
    }
  }
  return out;
}

template Tensor<float> crop_resize_normalize<float>(const Image&, const BoundingBox&, int, int);
template Tensor<double> crop_resize_normalize<double>(const Image&, const BoundingBox&, int, int);

Vec2 pixels_to_camera_cm(const Vec2& point_px, const DeviceScreen& dev) {
  if (dev.screen_w_px <= 0 || dev.screen_h_px <= 0 || dev.screen_w_cm <= 0 || dev.screen_h_cm <= 0) {
    throw ContractViolation("device screen dimensions must be positive");
  }
  return {point_px[0] * dev.screen_w_cm / dev.screen_w_px - dev.camera_offset_cm[0],
          point_px[1] * dev.screen_h_cm / dev.screen_h_px - dev.camera_offset_cm[1]};
}

Vec2 camera_cm_to_pixels(const Vec2& point_cm, const DeviceScreen& dev) {
  return {(point_cm[0] + dev.camera_offset_cm[0]) * dev.screen_w_px / dev.screen_w_cm,
          (point_cm[1] + dev.camera_offset_cm[1]) * dev.screen_h_px / dev.screen_h_cm};
}

void validate_calibration(const Calibration& calib) {
  // rotation^T * rotation == I within 1e-9
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += calib.rotation[k][i] * calib.rotation[k][j];
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(dot - want) > 1e-9) throw ContractViolation("calibration rotation is not orthonormal");
    }
  }
}

Vec3 point_to_direction(const Vec2& point_cm, const Calibration& calib, const Vec3& origin_cm) {
  const Vec3 plane{point_cm[0], point_cm[1], 0.0};
  Vec3 target = calib.translation;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) target[i] += calib.rotation[i][k] * plane[k];
  }
  Vec3 d{target[0] - origin_cm[0], target[1] - origin_cm[1], target[2] - origin_cm[2]};
  const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (norm == 0.0) throw InvalidGeometry("gaze origin coincides with the target point");
  return {d[0] / norm, d[1] / norm, d[2] / norm};
}

double angular_error_deg(const Vec3& d1, const Vec3& d2) {
  auto norm = [](const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); };
  if (std::abs(norm(d1) - 1.0) > 1e-6 || std::abs(norm(d2) - 1.0) > 1e-6) {
    throw ContractViolation("angular_error_deg requires unit vectors");
  }
  const double dot = std::clamp(d1[0] * d2[0] + d1[1] * d2[1] + d1[2] * d2[2], -1.0, 1.0);
  return std::acos(dot) * 180.0 / std::numbers::pi;
}

}  // namespace affnet
