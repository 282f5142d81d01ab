//! Pose normalization: quad-to-quad homography estimation, inverse-mapped
//! warping, and temporal smoothing of transform parameters.

use nalgebra::{Matrix3, SMatrix, SVector};

use crate::error::{invalid_arg, Error, Result};
use crate::imgcore::ImageBuffer;

/// Four ordered 2-D vertices delimiting a text region, clockwise from the
/// top-left of the text, in frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct RoiQuad {
    /// `[top-left, top-right, bottom-right, bottom-left]` as `(x, y)`.
    pub vertices: [(f64, f64); 4],
}

impl RoiQuad {
    /// Validate convexity and area; vertices must form a strictly convex
    /// quadrilateral with area above 1 px².
    pub fn new(vertices: [(f64, f64); 4]) -> Result<Self> {
        let q = Self { vertices };
        q.validate()?;
        Ok(q)
    }

    /// Axis-aligned rectangle `(x0, y0)` to `(x1, y1)`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    }

    fn validate(&self) -> Result<()> {
        if self
            .vertices
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(Error::DegenerateGeometry(
                "quad has non-finite vertices".into(),
            ));
        }
        let area = self.area();
        if area <= 1.0 {
            return Err(Error::DegenerateGeometry(format!(
                "quad area {area:.3} px^2 is below the 1 px^2 floor"
            )));
        }
        // Cross products of consecutive edges must share a sign.
        let v = &self.vertices;
        let mut sign = 0.0f64;
        for i in 0..4 {
            let a = v[i];
            let b = v[(i + 1) % 4];
            let c = v[(i + 2) % 4];
            let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
            if cross.abs() < 1e-12 {
                return Err(Error::DegenerateGeometry(
                    "quad has collinear consecutive vertices".into(),
                ));
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return Err(Error::DegenerateGeometry("quad is not convex".into()));
            }
        }
        Ok(())
    }

    /// Unsigned shoelace area.
    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        let mut s = 0.0;
        for i in 0..4 {
            let (x0, y0) = v[i];
            let (x1, y1) = v[(i + 1) % 4];
            s += x0 * y1 - x1 * y0;
        }
        (s / 2.0).abs()
    }

    /// Axis-aligned bounding rectangle as `(x0, y0, x1, y1)`.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        let xs = self.vertices.iter().map(|p| p.0);
        let ys = self.vertices.iter().map(|p| p.1);
        (
            xs.clone().fold(f64::INFINITY, f64::min),
            ys.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Translate all vertices by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut v = self.vertices;
        for p in &mut v {
            p.0 += dx;
            p.1 += dy;
        }
        Self { vertices: v }
    }
}

/// 3x3 projective transform with `m[2][2]` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    /// Identity transform.
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Build from a row-major 3x3 matrix, normalizing so `m[2][2] = 1`.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let scale = m[2][2];
        if scale.abs() < 1e-15 || !scale.is_finite() {
            return Err(Error::DegenerateGeometry(
                "homography has vanishing or non-finite m[2][2]".into(),
            ));
        }
        let mut out = [[0.0; 3]; 3];
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::DegenerateGeometry(
                        "homography has non-finite entries".into(),
                    ));
                }
                out[i][j] = v / scale;
            }
        }
        Ok(Self { m: out })
    }

    /// Row-major entries, `m[2][2] = 1` last.
    pub fn entries(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    /// Rebuild from the row-major entry array.
    pub fn from_entries(e: [f64; 9]) -> Result<Self> {
        Self::from_matrix([[e[0], e[1], e[2]], [e[3], e[4], e[5]], [e[6], e[7], e[8]]])
    }

    /// Map a point through the transform.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        let u = (m[0][0] * x + m[0][1] * y + m[0][2]) / w;
        let v = (m[1][0] * x + m[1][1] * y + m[1][2]) / w;
        (u, v)
    }

    /// Map a quad vertex-wise.
    pub fn apply_quad(&self, q: &RoiQuad) -> [(f64, f64); 4] {
        q.vertices.map(|(x, y)| self.apply(x, y))
    }

    /// Matrix product `self * rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &Homography) -> Result<Homography> {
        let a = Matrix3::from_fn(|i, j| self.m[i][j]);
        let b = Matrix3::from_fn(|i, j| rhs.m[i][j]);
        let c = a * b;
        Homography::from_matrix([
            [c[(0, 0)], c[(0, 1)], c[(0, 2)]],
            [c[(1, 0)], c[(1, 1)], c[(1, 2)]],
            [c[(2, 0)], c[(2, 1)], c[(2, 2)]],
        ])
    }
}

/// Exact 4-point homography mapping `src` vertices onto `dst` vertices.
///
/// Solves the 8x8 direct linear system; the result maps each source vertex
/// onto its destination with residual below 1e-6 px.
pub fn estimate_homography(src: &RoiQuad, dst: &RoiQuad) -> Result<Homography> {
    src.validate()?;
    dst.validate()?;

    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = src.vertices[i];
        let (u, v) = dst.vertices[i];
        let r = 2 * i;
        a[(r, 0)] = x;
        a[(r, 1)] = y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -u * x;
        a[(r, 7)] = -u * y;
        b[r] = u;
        a[(r + 1, 3)] = x;
        a[(r + 1, 4)] = y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -v * x;
        a[(r + 1, 7)] = -v * y;
        b[r + 1] = v;
    }
    let lu = a.lu();
    let h = lu.solve(&b).ok_or_else(|| {
        Error::DegenerateGeometry("homography system is singular (collinear vertices?)".into())
    })?;
    let hom = Homography::from_matrix([
        [h[0], h[1], h[2]],
        [h[3], h[4], h[5]],
        [h[6], h[7], 1.0],
    ])?;

    // Exact 4-point solves should reproduce the correspondences; a large
    // residual means the system was ill-conditioned.
    for i in 0..4 {
        let (x, y) = src.vertices[i];
        let (u, v) = dst.vertices[i];
        let (pu, pv) = hom.apply(x, y);
        if (pu - u).hypot(pv - v) > 1e-6 {
            return Err(Error::DegenerateGeometry(format!(
                "homography residual {:.2e} px exceeds 1e-6 at vertex {i}",
                (pu - u).hypot(pv - v)
            )));
        }
    }
    Ok(hom)
}

/// Invert a homography, renormalizing so `m[2][2] = 1`.
pub fn invert(h: &Homography) -> Result<Homography> {
    let m = Matrix3::from_fn(|i, j| h.m[i][j]);
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::DegenerateGeometry("homography is singular".into()))?;
    Homography::from_matrix([
        [inv[(0, 0)], inv[(0, 1)], inv[(0, 2)]],
        [inv[(1, 0)], inv[(1, 1)], inv[(1, 2)]],
        [inv[(2, 0)], inv[(2, 1)], inv[(2, 2)]],
    ])
}

/// Inverse-mapped bilinear warp: each output pixel `(x, y)` samples the
/// input at `h⁻¹ · (x, y, 1)`, replicating edge pixels when the sample
/// falls outside the image.
pub fn warp(img: &ImageBuffer, h: &Homography, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    if out_w == 0 || out_h == 0 {
        return Err(invalid_arg!("warp output dimensions must be nonzero"));
    }
    let hinv = invert(h)?;
    let mut out = ImageBuffer::new(out_w, out_h, img.channels());
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = hinv.apply(x as f64, y as f64);
            for c in 0..img.channels() {
                out.set(x, y, c, img.sample_bilinear(sx, sy, c));
            }
        }
    }
    Ok(out)
}

/// Penalized least-squares smoothing of a homography sequence.
///
/// Each of the 8 free matrix entries is smoothed independently by solving
/// `min Σ(θ̂ − θ)² + λ·Σ(θ̂_{i+1} − θ̂_i)²` with a tridiagonal (Thomas)
/// solve; `m[2][2]` stays pinned at 1. `lambda_t = 0` returns the input.
pub fn smooth_parameter_sequence(seq: &[Homography], lambda_t: f64) -> Result<Vec<Homography>> {
    if seq.is_empty() {
        return Err(invalid_arg!("homography sequence is empty"));
    }
    if lambda_t < 0.0 || !lambda_t.is_finite() {
        return Err(invalid_arg!("lambda_t must be finite and >= 0"));
    }
    let n = seq.len();
    if lambda_t == 0.0 || n == 1 {
        return Ok(seq.to_vec());
    }

    let mut params: Vec<[f64; 9]> = seq.iter().map(|h| h.entries()).collect();
    for p in 0..8 {
        let signal: Vec<f64> = params.iter().map(|e| e[p]).collect();
        let smoothed = solve_smoothing_tridiagonal(&signal, lambda_t);
        for (e, v) in params.iter_mut().zip(smoothed) {
            e[p] = v;
        }
    }
    params.into_iter().map(Homography::from_entries).collect()
}

/// Thomas-algorithm solve of `(I + λ·L) x = y` where `L` is the 1-D
/// second-difference (graph Laplacian) matrix.
fn solve_smoothing_tridiagonal(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    let mut diag = vec![0.0; n];
    let mut rhs = y.to_vec();
    for i in 0..n {
        let degree = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
        diag[i] = 1.0 + lambda * degree;
    }
    let off = -lambda;

    // Forward elimination.
    let mut c_prime = vec![0.0; n];
    c_prime[0] = off / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - off * c_prime[i - 1];
        c_prime[i] = off / m;
        rhs[i] = (rhs[i] - off * rhs[i - 1]) / m;
    }
    // Back substitution.
    for i in (0..n - 1).rev() {
        rhs[i] -= c_prime[i] * rhs[i + 1];
    }
    rhs
}

/// Canonical frontal rectangle whose corners sit on the corner pixel
/// centers of a `w x h` image.
pub fn canonical_rect(w: usize, h: usize) -> RoiQuad {
    RoiQuad {
        vertices: [
            (0.0, 0.0),
            (w as f64 - 1.0, 0.0),
            (w as f64 - 1.0, h as f64 - 1.0),
            (0.0, h as f64 - 1.0),
        ],
    }
}

/// Signed distance from a point to the quad boundary: positive inside,
/// negative outside (convex quads only).
pub fn quad_inside_distance(q: &RoiQuad, x: f64, y: f64) -> f64 {
    let v = &q.vertices;
    // Orientation sign from the first corner cross product.
    let orient = {
        let e1 = (v[1].0 - v[0].0, v[1].1 - v[0].1);
        let e2 = (v[2].0 - v[1].0, v[2].1 - v[1].1);
        (e1.0 * e2.1 - e1.1 * e2.0).signum()
    };
    let mut dist = f64::INFINITY;
    for i in 0..4 {
        let a = v[i];
        let b = v[(i + 1) % 4];
        let ex = b.0 - a.0;
        let ey = b.1 - a.1;
        let len = ex.hypot(ey);
        if len < 1e-12 {
            continue;
        }
        let cross = ex * (y - a.1) - ey * (x - a.0);
        dist = dist.min(orient * cross / len);
    }
    dist
}

/// Frontal-pose score: shoelace area of the quad divided by the area of its
/// axis-aligned bounding rectangle. 1.0 for axis-aligned rectangles.
pub fn frontalness_score(q: &RoiQuad) -> Result<f64> {
    q.validate()?;
    let (x0, y0, x1, y1) = q.bounding_box();
    let bbox_area = (x1 - x0) * (y1 - y0);
    if bbox_area <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "quad bounding box has zero area".into(),
        ));
    }
    Ok(q.area() / bbox_area)
}
