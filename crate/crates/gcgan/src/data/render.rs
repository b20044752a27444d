//! Procedural face renderer with analytic 68-point landmarks.
//!
//! One `FaceGeometry` drives both the rasterizer and `landmarks_of`, so every
//! landmark lies on a drawn feature curve by construction. Coordinates are
//! normalized to [-1, 1] with pixel centers at `(i - (S-1)/2) * 2/(S-1)`;
//! mirrored features are built by negating x, which keeps a symmetric
//! identity bit-exactly flip-symmetric.
//!
//! Landmark layout follows the iBUG-68 grouping: jaw 0..17, brows 17..27,
//! nose 27..36, eyes 36..48, mouth 48..68.

use super::{DataError, ExpressionParams, IdentityParams, LandmarkVector};
use crate::nn::tensor::Tensor;

pub const IMG_SIZE: usize = 64;
/// 4x4 subsamples per pixel; offsets are symmetric about the pixel center.
const SUB: usize = 4;

type Color = [f32; 3];

const BACKGROUND: Color = [-0.82, -0.82, -0.78];
const SCLERA: Color = [0.82, 0.82, 0.80];
const DARK: Color = [-0.70, -0.72, -0.72];
const LIP: Color = [0.45, -0.35, -0.30];
const MOUTH_INNER: Color = [-0.55, -0.68, -0.68];

#[derive(Debug, Clone)]
pub(crate) struct FaceGeometry {
    rx: f32,
    ry: f32,
    eye_y: f32,
    eye_dx: f32,
    eye_w: f32,
    eye_v: f32,
    iris_r: f32,
    brow_y: f32,
    brow_len: f32,
    brow_arch: f32,
    brow_th: f32,
    nose_top_y: f32,
    nose_bot_y: f32,
    nose_w: f32,
    mouth_y: f32,
    mouth_hw: f32,
    corner_dy: f32,
    lip_th: f32,
    inner_gap: f32,
    skin: Color,
    iris: Color,
}

impl FaceGeometry {
    pub fn derive(id: &IdentityParams, ex: &ExpressionParams) -> Result<Self, DataError> {
        id.validate()?;
        ex.validate()?;
        let rx = 0.55 + 0.25 * id.face_width;
        let ry = 0.62 + 0.28 * id.face_height;
        let eye_y = -0.22 * ry;
        let eye_dx = (0.28 + 0.18 * id.eye_spacing) * rx;
        let eye_w = (0.10 + 0.10 * id.eye_size) * rx;
        let eye_v = 0.70 * eye_w * ex.eye_open;
        let nose_top_y = eye_y + 0.03;
        let nose_bot_y = nose_top_y + (0.20 + 0.15 * id.nose_length) * ry;
        let h = id.base_hue;
        Ok(FaceGeometry {
            rx,
            ry,
            eye_y,
            eye_dx,
            eye_w,
            eye_v,
            iris_r: 0.45 * eye_w,
            brow_y: eye_y - 1.2 * eye_w - 0.02 - ex.brow_raise * 0.07 * ry,
            brow_len: 1.35 * eye_w,
            brow_arch: 0.05 * eye_w + 0.015,
            brow_th: 0.012 + 0.016 * id.brow_thickness,
            nose_top_y,
            nose_bot_y,
            nose_w: 0.16 * rx,
            mouth_y: nose_bot_y + 0.17 * ry,
            mouth_hw: (0.15 + 0.14 * id.mouth_width) * rx,
            corner_dy: -ex.mouth_curve * 0.055 * ry,
            lip_th: 0.035 * ry,
            inner_gap: ex.mouth_open * 0.15 * ry,
            skin: [0.35 + 0.35 * h, 0.05 + 0.30 * h, -0.25 + 0.25 * h],
            iris: [-0.30 + 0.25 * h, -0.10, 0.35],
        })
    }

    // Lip curves, s in [-1, 1] across the mouth half-width.
    fn upper_outer(&self, s: f32) -> f32 {
        (self.mouth_y - self.lip_th) + (self.corner_dy + self.lip_th) * s * s
    }
    fn lower_outer(&self, s: f32) -> f32 {
        let base = self.mouth_y + self.lip_th + self.inner_gap;
        base + (self.corner_dy - self.lip_th - self.inner_gap) * s * s
    }
    fn inner_hw(&self) -> f32 {
        0.8 * self.mouth_hw
    }
    fn upper_inner(&self, s: f32) -> f32 {
        (self.mouth_y - 0.5 * self.inner_gap)
            + (0.8 * self.corner_dy + 0.5 * self.inner_gap) * s * s
    }
    fn lower_inner(&self, s: f32) -> f32 {
        (self.mouth_y + 0.5 * self.inner_gap)
            + (0.8 * self.corner_dy - 0.5 * self.inner_gap) * s * s
    }
    // Eye lids for the eye centered at `ecx`, t = (x - ecx) / eye_w.
    fn upper_lid(&self, t: f32) -> f32 {
        self.eye_y - self.eye_v * (1.0 - t * t)
    }
    fn lower_lid(&self, t: f32) -> f32 {
        self.eye_y + self.eye_v * (1.0 - t * t)
    }
    fn brow_curve(&self, u: f32) -> f32 {
        self.brow_y - self.brow_arch * (1.0 - u * u)
    }
    fn nose_base_curve(&self, u: f32) -> f32 {
        self.nose_bot_y + 0.02 * self.ry * (1.0 - u * u)
    }

    pub fn landmarks(&self) -> LandmarkVector {
        let mut pts = [[0.0f32; 2]; 68];
        // Jaw 0..17 along the face ellipse; right side mirrors the left.
        for i in 0..=8 {
            let psi = -1.75 + 1.75 * (i as f32) / 8.0;
            let p = [self.rx * psi.sin(), self.ry * psi.cos()];
            pts[i] = p;
            pts[16 - i] = [-p[0], p[1]];
        }
        // Brows 17..22 (left, outer to inner) and 22..27 mirrored.
        for i in 0..5 {
            let u = -1.0 + 2.0 * (i as f32) / 4.0;
            let x = -self.eye_dx + u * self.brow_len;
            let y = self.brow_curve(u);
            pts[17 + i] = [x, y];
            pts[26 - i] = [-x, y];
        }
        // Nose bridge 27..31, base 31..36.
        for i in 0..4 {
            let t = (i as f32) / 3.0;
            pts[27 + i] = [0.0, self.nose_top_y + t * (self.nose_bot_y - self.nose_top_y)];
        }
        for i in 0..2 {
            let u = -1.0 + (i as f32) / 2.0;
            let x = u * self.nose_w;
            let y = self.nose_base_curve(u);
            pts[31 + i] = [x, y];
            pts[35 - i] = [-x, y];
        }
        pts[33] = [0.0, self.nose_base_curve(0.0)];
        // Left eye 36..42: outer corner, upper x2, inner corner, lower x2.
        let ecx = -self.eye_dx;
        let w3 = self.eye_w / 3.0;
        pts[36] = [ecx - self.eye_w, self.eye_y];
        pts[37] = [ecx - w3, self.upper_lid(-1.0 / 3.0)];
        pts[38] = [ecx + w3, self.upper_lid(1.0 / 3.0)];
        pts[39] = [ecx + self.eye_w, self.eye_y];
        pts[40] = [ecx + w3, self.lower_lid(1.0 / 3.0)];
        pts[41] = [ecx - w3, self.lower_lid(-1.0 / 3.0)];
        // Right eye 42..48 mirrored: inner corner first.
        for (r, l) in [(42, 39), (43, 38), (44, 37), (45, 36), (46, 41), (47, 40)] {
            pts[r] = [-pts[l][0], pts[l][1]];
        }
        // Outer lip 48..60.
        pts[48] = [-self.mouth_hw, self.mouth_y + self.corner_dy];
        for i in 0..5 {
            let s = -2.0 / 3.0 + (i as f32) / 3.0;
            pts[49 + i] = [s * self.mouth_hw, self.upper_outer(s)];
        }
        pts[54] = [self.mouth_hw, self.mouth_y + self.corner_dy];
        for i in 0..5 {
            let s = 2.0 / 3.0 - (i as f32) / 3.0;
            pts[55 + i] = [s * self.mouth_hw, self.lower_outer(s)];
        }
        // Inner lip 60..68.
        let ihw = self.inner_hw();
        pts[60] = [-ihw, self.upper_inner(-1.0)];
        for i in 0..3 {
            let s = -0.5 + (i as f32) * 0.5;
            pts[61 + i] = [s * ihw, self.upper_inner(s)];
        }
        pts[64] = [ihw, self.upper_inner(1.0)];
        for i in 0..3 {
            let s = 0.5 - (i as f32) * 0.5;
            pts[65 + i] = [s * ihw, self.lower_inner(s)];
        }
        let mut flat = Vec::with_capacity(136);
        for p in pts {
            flat.push(p[0]);
            flat.push(p[1]);
        }
        LandmarkVector::new(flat).expect("geometry stays in bounds")
    }

    /// Painter's-algorithm color of one sample point.
    fn shade(&self, x: f32, y: f32) -> Color {
        let mut c = BACKGROUND;
        // Face ellipse.
        let ex = x / self.rx;
        let ey = y / self.ry;
        if ex * ex + ey * ey <= 1.0 {
            c = self.skin;
        }
        // Brows: stroke around the arch polyline (both sides via |x|).
        let bx = x.abs();
        let u = (bx - self.eye_dx) / self.brow_len;
        if u.abs() <= 1.0 + self.brow_th {
            let uc = u.clamp(-1.0, 1.0);
            let dy = y - self.brow_curve(uc);
            let dx = (u.abs() - 1.0).max(0.0) * self.brow_len;
            if dx * dx + dy * dy <= self.brow_th * self.brow_th {
                c = DARK;
            }
        }
        // Nose bridge stroke.
        let nose_th = 0.011;
        if x.abs() <= nose_th && y >= self.nose_top_y && y <= self.nose_bot_y {
            c = DARK;
        }
        // Nose base arc stroke.
        let un = x / self.nose_w;
        if un.abs() <= 1.0 {
            let dy = y - self.nose_base_curve(un);
            if dy.abs() <= 0.010 {
                c = DARK;
            }
        }
        // Eyes: lens between lids, iris disc clipped to the lens, lid seam.
        let t = (bx - self.eye_dx) / self.eye_w;
        if t.abs() <= 1.0 {
            let yu = self.upper_lid(t);
            let yl = self.lower_lid(t);
            if y >= yu && y <= yl {
                c = SCLERA;
                let ddx = bx - self.eye_dx;
                let ddy = y - self.eye_y;
                if ddx * ddx + ddy * ddy <= self.iris_r * self.iris_r {
                    c = self.iris;
                }
            }
            // Upper lash line is drawn even for a closed eye.
            if (y - yu).abs() <= 0.010 {
                c = DARK;
            }
        }
        // Mouth: outer lip fill, inner region, lip seam.
        let s = x / self.mouth_hw;
        if s.abs() <= 1.0 {
            let yu = self.upper_outer(s);
            let yl = self.lower_outer(s);
            if y >= yu && y <= yl {
                c = LIP;
            }
        }
        let si = x / self.inner_hw();
        if si.abs() <= 1.0 {
            let yu = self.upper_inner(si);
            let yl = self.lower_inner(si);
            if y >= yu && y <= yl {
                c = MOUTH_INNER;
            }
            if (y - yu).abs() <= 0.008 {
                c = DARK;
            }
        }
        c
    }

    pub fn render(&self) -> Tensor<f32> {
        let s = IMG_SIZE;
        let mut img = Tensor::zeros(vec![3, s, s]);
        let px = 2.0 / (s as f32 - 1.0);
        let half = (s as f32 - 1.0) / 2.0;
        let data = img.data_mut();
        let plane = s * s;
        for r in 0..s {
            let yc = (r as f32 - half) * px;
            for cidx in 0..s {
                let xc = (cidx as f32 - half) * px;
                let mut acc = [0.0f32; 3];
                for sy in 0..SUB {
                    let oy = ((sy as f32 + 0.5) / SUB as f32 - 0.5) * px;
                    for sx in 0..SUB {
                        let ox = ((sx as f32 + 0.5) / SUB as f32 - 0.5) * px;
                        let col = self.shade(xc + ox, yc + oy);
                        acc[0] += col[0];
                        acc[1] += col[1];
                        acc[2] += col[2];
                    }
                }
                let inv = 1.0 / (SUB * SUB) as f32;
                let idx = r * s + cidx;
                data[idx] = acc[0] * inv;
                data[plane + idx] = acc[1] * inv;
                data[2 * plane + idx] = acc[2] * inv;
            }
        }
        img
    }

    /// Bounding box (in pixels, inclusive) of everything mouth-openness can
    /// move, padded by the anti-aliasing footprint.
    pub fn mouth_bbox_px(&self) -> (usize, usize, usize, usize) {
        let x0 = -self.mouth_hw;
        let x1 = self.mouth_hw;
        let y0 = self.mouth_y - self.lip_th - self.corner_dy.abs() - 0.02;
        let y1 = self.mouth_y + self.lip_th + 0.15 * self.ry + self.corner_dy.abs() + 0.02;
        let to_px = |v: f32| ((v + 1.0) / 2.0 * (IMG_SIZE as f32 - 1.0)).round() as isize;
        let clamp = |v: isize| v.clamp(0, IMG_SIZE as isize - 1) as usize;
        (
            clamp(to_px(x0) - 2),
            clamp(to_px(y0) - 2),
            clamp(to_px(x1) + 2),
            clamp(to_px(y1) + 2),
        )
    }
}

/// Deterministic anti-aliased rendering of one parametric face.
pub fn render_face(id: &IdentityParams, ex: &ExpressionParams) -> Result<Tensor<f32>, DataError> {
    Ok(FaceGeometry::derive(id, ex)?.render())
}

/// Closed-form landmarks of the same geometry `render_face` draws.
pub fn landmarks_of(
    id: &IdentityParams,
    ex: &ExpressionParams,
) -> Result<LandmarkVector, DataError> {
    Ok(FaceGeometry::derive(id, ex)?.landmarks())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ExpressionParams, IdentityParams};

    fn mid_identity() -> IdentityParams {
        IdentityParams {
            face_width: 0.5,
            face_height: 0.5,
            eye_spacing: 0.5,
            eye_size: 0.5,
            nose_length: 0.5,
            mouth_width: 0.5,
            brow_thickness: 0.5,
            base_hue: 0.5,
        }
    }

    fn neutral() -> ExpressionParams {
        ExpressionParams {
            mouth_open: 0.1,
            mouth_curve: 0.0,
            eye_open: 0.6,
            brow_raise: 0.0,
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_face(&mid_identity(), &neutral()).unwrap();
        let b = render_face(&mid_identity(), &neutral()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn symmetric_identity_renders_flip_symmetric() {
        let img = render_face(&mid_identity(), &neutral()).unwrap();
        let s = IMG_SIZE;
        let data = img.data();
        let tol = 2.0 / 255.0;
        for ch in 0..3 {
            for r in 0..s {
                for c in 0..s {
                    let a = data[ch * s * s + r * s + c];
                    let b = data[ch * s * s + r * s + (s - 1 - c)];
                    assert!(
                        (a - b).abs() <= tol,
                        "ch {ch} ({r},{c}): {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn landmark_x_antisymmetric_for_symmetric_identity() {
        let lm = landmarks_of(&mid_identity(), &neutral()).unwrap();
        let xs: Vec<f32> = (0..68).map(|i| lm.coords()[2 * i]).collect();
        let ys: Vec<f32> = (0..68).map(|i| lm.coords()[2 * i + 1]).collect();
        // Mirror index map derived from the construction.
        let mut mirror = [0usize; 68];
        for i in 0..17 {
            mirror[i] = 16 - i;
        }
        for i in 0..5 {
            mirror[17 + i] = 26 - i;
            mirror[26 - i] = 17 + i;
        }
        for i in 0..4 {
            mirror[27 + i] = 27 + i;
        }
        for i in 0..5 {
            mirror[31 + i] = 35 - i;
        }
        for (r, l) in [(42, 39), (43, 38), (44, 37), (45, 36), (46, 41), (47, 40)] {
            mirror[l] = r;
            mirror[r] = l;
        }
        mirror[48] = 54;
        mirror[54] = 48;
        for i in 0..5 {
            mirror[49 + i] = 53 - i;
        }
        for i in 0..5 {
            mirror[55 + i] = 59 - i;
        }
        mirror[60] = 64;
        mirror[64] = 60;
        for i in 0..3 {
            mirror[61 + i] = 63 - i;
        }
        for i in 0..3 {
            mirror[65 + i] = 67 - i;
        }
        for i in 0..68 {
            let j = mirror[i];
            assert!(
                (xs[i] + xs[j]).abs() < 1e-6,
                "x asymmetry at {i}/{j}: {} vs {}",
                xs[i],
                xs[j]
            );
            assert!((ys[i] - ys[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn closed_eye_collapses_lid_landmarks() {
        let ex = ExpressionParams {
            eye_open: 0.0,
            ..neutral()
        };
        let lm = landmarks_of(&mid_identity(), &ex).unwrap();
        let c = lm.coords();
        // Left eye: upper lids 37,38 match lower lids 41,40.
        assert_eq!(c[2 * 37 + 1], c[2 * 41 + 1]);
        assert_eq!(c[2 * 38 + 1], c[2 * 40 + 1]);
        // Right eye: 43,44 match 47,46.
        assert_eq!(c[2 * 43 + 1], c[2 * 47 + 1]);
        assert_eq!(c[2 * 44 + 1], c[2 * 46 + 1]);
    }

    #[test]
    fn inner_lip_gap_strictly_monotone_in_mouth_openness() {
        let mut prev = -1.0f32;
        for k in 0..10 {
            let ex = ExpressionParams {
                mouth_open: k as f32 / 9.0,
                ..neutral()
            };
            let lm = landmarks_of(&mid_identity(), &ex).unwrap();
            let c = lm.coords();
            // Center of upper inner lip is point 62, lower inner is 66.
            let gap = c[2 * 66 + 1] - c[2 * 62 + 1];
            assert!(gap > prev, "gap {gap} not > {prev} at step {k}");
            prev = gap;
        }
    }

    #[test]
    fn mouth_openness_only_touches_mouth_region() {
        let id = mid_identity();
        let closed = ExpressionParams {
            mouth_open: 0.0,
            ..neutral()
        };
        let open = ExpressionParams {
            mouth_open: 1.0,
            ..neutral()
        };
        let a = render_face(&id, &closed).unwrap();
        let b = render_face(&id, &open).unwrap();
        let geom = FaceGeometry::derive(&id, &open).unwrap();
        let (x0, y0, x1, y1) = geom.mouth_bbox_px();
        let s = IMG_SIZE;
        for ch in 0..3 {
            for r in 0..s {
                for c in 0..s {
                    if r >= y0 && r <= y1 && c >= x0 && c <= x1 {
                        continue;
                    }
                    let idx = ch * s * s + r * s + c;
                    assert_eq!(
                        a.data()[idx],
                        b.data()[idx],
                        "pixel outside mouth box changed at ch {ch} ({r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn out_of_range_params_rejected() {
        let mut id = mid_identity();
        id.face_width = 1.5;
        assert!(render_face(&id, &neutral()).is_err());
        let ex = ExpressionParams {
            mouth_curve: -2.0,
            ..neutral()
        };
        assert!(landmarks_of(&mid_identity(), &ex).is_err());
    }

    #[test]
    fn landmarks_stay_in_bounds_over_random_draws() {
        let mut rng = crate::rng::Rng::new(11);
        for _ in 0..200 {
            let id = IdentityParams::sample(&mut rng);
            let ex = ExpressionParams {
                mouth_open: rng.uniform() as f32,
                mouth_curve: rng.uniform_in(-1.0, 1.0) as f32,
                eye_open: rng.uniform() as f32,
                brow_raise: rng.uniform_in(-1.0, 1.0) as f32,
            };
            let lm = landmarks_of(&id, &ex).unwrap();
            for &v in lm.coords() {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }
}
