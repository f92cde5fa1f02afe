#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <vector>

namespace mst {

/// Orientation quaternion, scalar-first (w, x, y, z).
struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  double norm() const;
  Quaternion operator-() const { return {-w, -x, -y, -z}; }
  bool operator==(const Quaternion&) const = default;
};

using Vec3 = std::array<double, 3>;

struct Pose {
  Vec3 position{0.0, 0.0, 0.0};  // meters, world frame
  Quaternion orientation;
};

/// q / |q|. Throws DegenerateOrientationError when |q| <= 1e-12.
Quaternion normalize(const Quaternion& q);

/// Picks the representative of {q, -q} with w > 0; for w == 0 the first
/// nonzero of (x, y, z) is made positive.
Quaternion canonicalize_sign(const Quaternion& q);

/// normalize + canonicalize_sign.
Quaternion canonical(const Quaternion& q);

/// Geodesic angle 2 acos|<q0, q1>| in degrees, in [0, 180]. Inputs must be
/// unit quaternions.
double angular_error_deg(const Quaternion& q0, const Quaternion& q1);

double position_error_m(const Vec3& x0, const Vec3& x1);

struct SampleError {
  std::size_t scene_id = 0;
  double position_m = 0.0;
  double orientation_deg = 0.0;
  bool scene_correct = false;
};

struct SceneErrorStats {
  std::size_t samples = 0;
  double median_position_m = 0.0;
  double median_orientation_deg = 0.0;
  double scene_accuracy = 0.0;
};

struct PoseErrorSummary {
  /// Average over scenes of the per-scene medians.
  double median_position_m = 0.0;
  double median_orientation_deg = 0.0;
  std::map<std::size_t, SceneErrorStats> per_scene;
  /// Fraction of all samples whose scene was classified correctly.
  double scene_accuracy = 0.0;
};

/// Lower median (element floor((n-1)/2) of the sorted values).
double lower_median(std::vector<double> values);

/// Throws ContractError on empty input.
PoseErrorSummary summarize(std::span<const SampleError> errors);

}  // namespace mst
