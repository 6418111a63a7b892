// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

#include "affnet/common.hpp"
#include "affnet/image.hpp"
#include "affnet/tensor.hpp"

namespace affnet {

using Vec2 = std::array<double, 2>;
using Vec3 = std::array<double, 3>;

struct BoundingBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // top-left, bottom-right, pixels
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  bool valid() const { return x2 > x1 && y2 > y1; }
  bool operator==(const BoundingBox&) const = default;
};

/// The six landmarks used to derive crops: four eye corners and two mouth
/// corners, in pixel coordinates.
struct Landmarks {
  Vec2 left_eye_outer, left_eye_inner;
  Vec2 right_eye_inner, right_eye_outer;
  Vec2 mouth_left, mouth_right;
};

struct DeviceScreen {
  double screen_w_cm = 0, screen_h_cm = 0;
  int screen_w_px = 0, screen_h_px = 0;
  Vec2 camera_offset_cm{0, 0};  // camera relative to the screen's top-left, in the screen plane
};

/// Screen-plane to camera-space mapping; rotation must be orthonormal.
struct Calibration {
  std::array<Vec3, 3> rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 translation{0, 0, 0};
};

struct FaceBoxes {
  BoundingBox face, left_eye, right_eye;
};

/// Square eye boxes of side 1.7x the eye's corner-to-corner width,
/// centered on the corner mean; the face box is centered between the eye
/// and mouth means with side eye_box/0.3 (mean of the two eye sizes).
FaceBoxes boxes_from_landmarks(const Landmarks& lm);

/// (face, left_eye, right_eye) x (x1/w, y1/h, x2/w, y2/h).
std::array<double, 12> normalize_rects(const BoundingBox& face, const BoundingBox& left_eye,
                                       const BoundingBox& right_eye, int frame_w, int frame_h);

/// Translates each box independently by an integer offset uniform in
/// [-max_shift, max_shift] per axis, clamped so the box stays inside the
/// frame.
FaceBoxes random_shift(const FaceBoxes& boxes, int frame_w, int frame_h, Rng& rng, int max_shift = 30);

/// Crops `box` from the frame and resamples bilinearly to (out_h, out_w),
/// scaling bytes to [0,1]. The sampling grid is corner-aligned: output
/// pixel j reads source coordinate x1 + j*(box_w/out_w), clamped to the
/// box; regions outside the frame read as zero.
template <typename T>
Tensor<T> crop_resize_normalize(const Image& frame, const BoundingBox& box, int out_h, int out_w);

/// Screen pixels to cm relative to the camera; x right, y down.
Vec2 pixels_to_camera_cm(const Vec2& point_px, const DeviceScreen& dev);
Vec2 camera_cm_to_pixels(const Vec2& point_cm, const DeviceScreen& dev);

/// Unit direction from `origin_cm` (camera space) to the screen-plane
/// point mapped through the calibration.
Vec3 point_to_direction(const Vec2& point_cm, const Calibration& calib, const Vec3& origin_cm);

/// arccos of the dot product, in degrees; requires unit inputs (1e-6).
double angular_error_deg(const Vec3& d1, const Vec3& d2);

void validate_calibration(const Calibration& calib);  // rotation orthonormal within 1e-9

}  // namespace affnet
