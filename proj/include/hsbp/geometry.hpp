#pragma once

#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "hsbp/error.hpp"

namespace hsbp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// Unit direction from `point` toward `center`.
inline Vec3 view_vector(const Vec3& center, const Vec3& point) {
    const Vec3 d = center - point;
    const double n = d.norm();
    require(n > 0.0 && std::isfinite(n), ErrorKind::DegenerateGeometry,
            "view vector undefined: point coincides with the station center");
    return d / n;
}

// A calibrated optical center with its pinhole projection. Used both as a
// camera and as a point-light position.
class ViewStation {
public:
    ViewStation() = default;

    ViewStation(std::string id, const Vec3& center, const Mat34& projection)
        : id_(std::move(id)), center_(center), projection_(projection) {
        Eigen::JacobiSVD<Mat34> svd(projection_);
        const auto s = svd.singularValues();
        require(s(0) > 0.0 && s(2) > 1e-12 * s(0), ErrorKind::DegenerateGeometry,
                "station '" + id_ + "': projection must have rank 3");
        const double residual = (projection_ * center_.homogeneous()).norm();
        require(residual < 1e-9 * projection_.norm(), ErrorKind::DegenerateGeometry,
                "station '" + id_ + "': center is not the null space of the projection");
        init_derived();
    }

    // Recovers the center from the right null space of the projection.
    static ViewStation from_projection(std::string id, const Mat34& projection) {
        const Mat3 m = projection.leftCols<3>();
        require(std::abs(m.determinant()) > 0.0, ErrorKind::DegenerateGeometry,
                "station '" + id + "': projection has singular left 3x3 block");
        const Vec3 c = -m.inverse() * projection.col(3);
        return ViewStation(std::move(id), c, projection);
    }

    // Pinhole camera at `position` looking at `target`; image x right, image y down.
    static ViewStation look_at(std::string id, const Vec3& position, const Vec3& target, const Vec3& up,
                               double focal, int width, int height) {
        require(focal > 0.0 && width > 0 && height > 0, ErrorKind::InvalidArgument,
                "station '" + id + "': focal and resolution must be positive");
        const Vec3 z = (target - position).normalized();
        Vec3 y = -(up - up.dot(z) * z);
        require(y.norm() > 1e-12, ErrorKind::DegenerateGeometry, "station '" + id + "': up vector parallel to view");
        y.normalize();
        const Vec3 x = y.cross(z);
        Mat3 r;
        r.row(0) = x.transpose();
        r.row(1) = y.transpose();
        r.row(2) = z.transpose();
        Mat3 k = Mat3::Identity();
        k(0, 0) = focal;
        k(1, 1) = focal;
        k(0, 2) = 0.5 * (width - 1);
        k(1, 2) = 0.5 * (height - 1);
        Mat34 rt;
        rt.leftCols<3>() = r;
        rt.col(3) = -r * position;
        return ViewStation(std::move(id), position, k * rt);
    }

    const std::string& id() const noexcept { return id_; }
    const Vec3& center() const noexcept { return center_; }
    const Mat34& projection() const noexcept { return projection_; }

    // World-to-camera rotation (rows are the camera axes); camera z looks forward.
    const Mat3& rotation() const noexcept { return rotation_; }
    // Intrinsics normalized so that K(2,2) = 1.
    const Mat3& intrinsics() const noexcept { return intrinsics_; }

    // Signed distance along the optical axis; positive in front of the camera.
    double depth_of(const Vec3& point) const noexcept {
        const double w = projection_.row(2).dot(point.homogeneous());
        return depth_sign_ * w / m3_norm_;
    }

    Vec2 project(const Vec3& point) const {
        const Eigen::Vector3d h = projection_ * point.homogeneous();
        require(depth_sign_ * h.z() > 0.0, ErrorKind::BehindCamera,
                "point projects behind station '" + id_ + "'");
        return h.hnormalized();
    }

    // Ray direction through `pixel`, scaled so that depth_of(center + t*ray) == t.
    Vec3 ray(const Vec2& pixel) const noexcept {
        return m_inverse_ * pixel.homogeneous() * (depth_sign_ * m3_norm_);
    }

    Vec3 backproject(const Vec2& pixel, double depth) const noexcept { return center_ + depth * ray(pixel); }

private:
    void init_derived() {
        const Mat3 m = projection_.leftCols<3>();
        const double det = m.determinant();
        depth_sign_ = det > 0.0 ? 1.0 : -1.0;
        m3_norm_ = m.row(2).norm();
        m_inverse_ = m.inverse();

        // RQ decomposition of the sign-normalized M via QR of its flipped transpose.
        const Mat3 mp = depth_sign_ * m;
        Mat3 flip = Mat3::Zero();
        flip(0, 2) = flip(1, 1) = flip(2, 0) = 1.0;
        const Mat3 a = (flip * mp).transpose();
        Eigen::HouseholderQR<Mat3> qr(a);
        const Mat3 q = qr.householderQ();
        const Mat3 rr = qr.matrixQR().triangularView<Eigen::Upper>();
        Mat3 k = flip * rr.transpose() * flip;
        Mat3 rot = flip * q.transpose();
        for (int i = 0; i < 3; ++i) {
            if (k(i, i) < 0.0) {
                k.col(i) *= -1.0;
                rot.row(i) *= -1.0;
            }
        }
        intrinsics_ = k / k(2, 2);
        rotation_ = rot;
    }

    std::string id_;
    Vec3 center_ = Vec3::Zero();
    Mat34 projection_ = Mat34::Zero();
    Mat3 rotation_ = Mat3::Identity();
    Mat3 intrinsics_ = Mat3::Identity();
    Mat3 m_inverse_ = Mat3::Identity();
    double depth_sign_ = 1.0;
    double m3_norm_ = 1.0;
};

inline Vec3 view_vector(const ViewStation& station, const Vec3& point) {
    return view_vector(station.center(), point);
}

// Free-function spelling used throughout the pipeline.
inline Vec2 project(const ViewStation& station, const Vec3& point) { return station.project(point); }

} // namespace hsbp
