//! Pinhole cameras in the Blender/OpenGL convention: the camera looks down
//! its local `-Z` axis with `+Y` up and `+X` to the right. Pixel `(px, py)`
//! has its center at `(px + 0.5, py + 0.5)`; `py` grows downward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        math::add(self.origin, math::scale(self.dir, t))
    }
}

/// Intrinsics plus a rigid camera-to-world pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels (square pixels).
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major camera-to-world rotation; columns are the camera axes.
    pub rotation: [[f64; 3]; 3],
    /// Camera center in world space.
    pub position: Vec3,
}

impl Camera {
    /// Builds a camera with the principal point at the image center.
    pub fn new(
        width: usize,
        height: usize,
        focal: f64,
        rotation: [[f64; 3]; 3],
        position: Vec3,
    ) -> Result<Self> {
        let cam = Camera {
            width,
            height,
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            position,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `position` looking at `target`.
    pub fn look_at(
        width: usize,
        height: usize,
        focal: f64,
        position: Vec3,
        target: Vec3,
        world_up: Vec3,
    ) -> Result<Self> {
        let back = math::normalize(math::sub(position, target));
        let mut right = math::cross(world_up, back);
        if math::norm(right) < 1e-9 {
            // Looking along the up vector; pick any perpendicular axis.
            right = math::cross([1.0, 0.0, 0.0], back);
            if math::norm(right) < 1e-9 {
                right = math::cross([0.0, 1.0, 0.0], back);
            }
        }
        let right = math::normalize(right);
        let up = math::cross(back, right);
        let rotation = [
            [right[0], up[0], back[0]],
            [right[1], up[1], back[1]],
            [right[2], up[2], back[2]],
        ];
        Camera::new(width, height, focal, rotation, position)
    }

    /// Focal length from a horizontal field of view.
    pub fn focal_from_fov(width: usize, fov_x: f64) -> f64 {
        0.5 * width as f64 / (0.5 * fov_x).tan()
    }

    pub fn fov_x(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.focal).atan()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::contract("camera dimensions must be >= 1"));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::contract(format!(
                "focal length must be positive, got {}",
                self.focal
            )));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-6 {
                    return Err(Error::contract("camera rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    /// 4x4 camera-to-world matrix.
    pub fn transform_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = self.position;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_transform_matrix(
        width: usize,
        height: usize,
        focal: f64,
        m: &[[f64; 4]; 4],
    ) -> Result<Self> {
        let rotation = [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ];
        Camera::new(width, height, focal, rotation, [m[0][3], m[1][3], m[2][3]])
    }

    /// Unit-norm viewing direction (camera `-Z`) in world space.
    pub fn forward(&self) -> Vec3 {
        let r = &self.rotation;
        [-r[0][2], -r[1][2], -r[2][2]]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Ray through the center of pixel `(px, py)`.
    pub fn ray(&self, px: usize, py: usize) -> Ray {
        self.ray_through(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Ray through continuous image coordinates (pixel corners at integers).
    pub fn ray_through(&self, x: f64, y: f64) -> Ray {
        let d_cam = [
            (x - self.cx) / self.focal,
            -(y - self.cy) / self.focal,
            -1.0,
        ];
        Ray {
            origin: self.position,
            dir: math::normalize(math::mat_vec(&self.rotation, d_cam)),
        }
    }

    /// One ray per pixel in row-major order.
    pub fn generate_rays(&self) -> Vec<Ray> {
        (0..self.height)
            .flat_map(|py| (0..self.width).map(move |px| (px, py)))
            .map(|(px, py)| self.ray(px, py))
            .collect()
    }

    /// Projects a world point to pixel-index coordinates (pixel centers at
    /// integers). `None` when the point is not in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<[f64; 2]> {
        let local = math::mat_t_vec(&self.rotation, math::sub(p, self.position));
        let depth = -local[2];
        if depth <= 1e-12 {
            return None;
        }
        let x = self.cx + self.focal * local[0] / depth - 0.5;
        let y = self.cy - self.focal * local[1] / depth - 0.5;
        Some([x, y])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn principal_pixel_looks_down_axis() {
        let cam = Camera::new(3, 3, 2.0, IDENTITY, [0.0; 3]).unwrap();
        let ray = cam.ray(1, 1);
        assert_eq!(ray.dir, [0.0, 0.0, -1.0]);
        assert_eq!(ray.origin, [0.0; 3]);
    }

    #[test]
    fn translation_moves_origins_only() {
        let a = Camera::new(4, 3, 2.5, IDENTITY, [0.0; 3]).unwrap();
        let b = Camera::new(4, 3, 2.5, IDENTITY, [1.0, -2.0, 3.0]).unwrap();
        for (ra, rb) in a.generate_rays().iter().zip(b.generate_rays()) {
            assert_eq!(ra.dir, rb.dir);
            assert_eq!(rb.origin, [1.0, -2.0, 3.0]);
        }
    }

    #[test]
    fn two_by_two_pinhole() {
        let cam = Camera::new(2, 2, 1.0, IDENTITY, [0.0; 3]).unwrap();
        let rays = cam.generate_rays();
        let n = 1.0 / (0.5f64 * 0.5 + 0.5 * 0.5 + 1.0).sqrt();
        let expect = [
            [-0.5 * n, 0.5 * n, -n],
            [0.5 * n, 0.5 * n, -n],
            [-0.5 * n, -0.5 * n, -n],
            [0.5 * n, -0.5 * n, -n],
        ];
        for (r, e) in rays.iter().zip(expect) {
            for k in 0..3 {
                assert!((r.dir[k] - e[k]).abs() < 1e-12);
            }
            assert!((math::norm(r.dir) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn look_at_points_forward() {
        let cam =
            Camera::look_at(8, 8, 10.0, [0.0, -4.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        let f = cam.forward();
        let expect = math::normalize([0.0, 4.0, -1.0]);
        for k in 0..3 {
            assert!((f[k] - expect[k]).abs() < 1e-12);
        }
        let px = cam.project([0.0; 3]).unwrap();
        assert!((px[0] - 3.5).abs() < 1e-9 && (px[1] - 3.5).abs() < 1e-9);
    }

    #[test]
    fn project_inverts_ray() {
        let cam = Camera::look_at(16, 12, 14.0, [1.0, 2.0, 3.0], [0.0; 3], [0.0, 0.0, 1.0])
            .unwrap();
        let ray = cam.ray(5, 9);
        let p = cam.project(ray.at(2.7)).unwrap();
        assert!((p[0] - 5.0).abs() < 1e-9 && (p[1] - 9.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_cameras() {
        assert!(Camera::new(0, 3, 1.0, IDENTITY, [0.0; 3]).is_err());
        assert!(Camera::new(3, 3, -1.0, IDENTITY, [0.0; 3]).is_err());
        let mut skew = IDENTITY;
        skew[0][1] = 0.1;
        assert!(Camera::new(3, 3, 1.0, skew, [0.0; 3]).is_err());
    }
}
