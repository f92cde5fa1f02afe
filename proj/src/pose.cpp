#include "mst/pose.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mst/errors.hpp"

namespace mst {

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion normalize(const Quaternion& q) {
  const double n = q.norm();
  if (!(n > 1e-12)) throw DegenerateOrientationError("quaternion norm too small to normalize");
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Quaternion canonicalize_sign(const Quaternion& q) {
  // Adding +0.0 turns negated zeros into positive ones.
  const Quaternion flipped{-q.w + 0.0, -q.x + 0.0, -q.y + 0.0, -q.z + 0.0};
  if (q.w > 0.0) return q;
  if (q.w < 0.0) return flipped;
  for (double c : {q.x, q.y, q.z}) {
    if (c > 0.0) return q;
    if (c < 0.0) return flipped;
  }
  return q;
}

Quaternion canonical(const Quaternion& q) { return canonicalize_sign(normalize(q)); }

double angular_error_deg(const Quaternion& q0, const Quaternion& q1) {
  // 2 acos|<q0, q1>| evaluated as 4 atan2(|q0 - q1|, |q0 + q1|) with q1's sign
  // matched to q0; exact at zero, where acos loses half the digits.
  const double dot = q0.w * q1.w + q0.x * q1.x + q0.y * q1.y + q0.z * q1.z;
  const double s = dot < 0.0 ? -1.0 : 1.0;
  const double d[4] = {q0.w - s * q1.w, q0.x - s * q1.x, q0.y - s * q1.y, q0.z - s * q1.z};
  const double a[4] = {q0.w + s * q1.w, q0.x + s * q1.x, q0.y + s * q1.y, q0.z + s * q1.z};
  const double diff = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3]);
  const double sum = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]);
  return 4.0 * std::atan2(diff, sum) * 180.0 / std::numbers::pi;
}

double position_error_m(const Vec3& x0, const Vec3& x1) {
  const double dx = x0[0] - x1[0], dy = x0[1] - x1[1], dz = x0[2] - x1[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double lower_median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

PoseErrorSummary summarize(std::span<const SampleError> errors) {
  if (errors.empty()) throw ContractError("summarize: no samples");
  struct Lists {
    std::vector<double> pos, ori;
    std::size_t correct = 0;
  };
  std::map<std::size_t, Lists> by_scene;
  std::size_t correct = 0;
  for (const auto& e : errors) {
    auto& l = by_scene[e.scene_id];
    l.pos.push_back(e.position_m);
    l.ori.push_back(e.orientation_deg);
    l.correct += e.scene_correct ? 1 : 0;
    correct += e.scene_correct ? 1 : 0;
  }

  PoseErrorSummary out;
  for (auto& [scene, l] : by_scene) {
    SceneErrorStats s;
    s.samples = l.pos.size();
    s.scene_accuracy = static_cast<double>(l.correct) / static_cast<double>(s.samples);
    s.median_position_m = lower_median(std::move(l.pos));
    s.median_orientation_deg = lower_median(std::move(l.ori));
    out.median_position_m += s.median_position_m;
    out.median_orientation_deg += s.median_orientation_deg;
    out.per_scene[scene] = s;
  }
  const auto scenes = static_cast<double>(out.per_scene.size());
  out.median_position_m /= scenes;
  out.median_orientation_deg /= scenes;
  out.scene_accuracy = static_cast<double>(correct) / static_cast<double>(errors.size());
  return out;
}

}  // namespace mst
