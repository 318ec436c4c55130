//! Planar homography estimation (normalized DLT) and analytic decomposition.
//!
//! Correspondences are `(x1, x2)` with `x2 ~ H x1`. For calibrated (normalized)
//! coordinates of a plane `nᵀ X1 = d` seen by two cameras related by
//! `X2 = R X1 + t`, the homography is `H = R + t nᵀ / d`.

use nalgebra::{DMatrix, Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector2, Vector3};

use super::GeometryError;

/// Point pair `(x1, x2)` in image coordinates of view 1 and view 2.
pub type Correspondence = (Vector2<f64>, Vector2<f64>);

fn hom(x: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(x.x, x.y, 1.0)
}

/// Applies `h` to an inhomogeneous point.
pub fn transfer(h: &Matrix3<f64>, x: &Vector2<f64>) -> Vector2<f64> {
    let y = h * hom(x);
    Vector2::new(y.x / y.z, y.y / y.z)
}

/// Similarity that moves the centroid to the origin and the mean distance to √2.
fn normalizing_transform<'a>(points: impl Iterator<Item = &'a Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let centroid = points.clone().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0)
}

/// Direct linear transform with Hartley normalization.
///
/// The result is scaled so that its middle singular value is 1 and signed so
/// that `x2ᵀ H x1 > 0` for the majority of the input pairs.
pub fn estimate_homography(pairs: &[Correspondence]) -> Result<Matrix3<f64>, GeometryError> {
    if pairs.len() < 4 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "homography needs at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    let t1 = normalizing_transform(pairs.iter().map(|(a, _)| a));
    let t2 = normalizing_transform(pairs.iter().map(|(_, b)| b));

    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p1, p2)) in pairs.iter().enumerate() {
        let x = t1 * hom(p1);
        let y = t2 * hom(p2);
        let (u, v, w) = (y.x, y.y, y.z);
        for k in 0..3 {
            a[(2 * i, 3 + k)] = -w * x[k];
            a[(2 * i, 6 + k)] = v * x[k];
            a[(2 * i + 1, k)] = w * x[k];
            a[(2 * i + 1, 6 + k)] = -u * x[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| GeometryError::DegenerateConfiguration("DLT decomposition failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let null_idx = order[8];
    // A rank below 8 leaves a multi-dimensional solution space.
    if sv[order[7]] <= 1e-10 * sv[order[0]] {
        return Err(GeometryError::DegenerateConfiguration("rank-deficient DLT system".into()));
    }
    let hn = v_t.row(null_idx);
    let h_norm = Matrix3::new(hn[0], hn[1], hn[2], hn[3], hn[4], hn[5], hn[6], hn[7], hn[8]);
    let t2_inv = t2
        .try_inverse()
        .ok_or_else(|| GeometryError::DegenerateConfiguration("coincident points".into()))?;
    let h = t2_inv * h_norm * t1;
    Ok(normalize_homography(&h, pairs))
}

/// Rescales `h` so its middle singular value is 1 and fixes its sign.
pub fn normalize_homography(h: &Matrix3<f64>, pairs: &[Correspondence]) -> Matrix3<f64> {
    let mut s = h.singular_values().as_slice().to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut hn = h / s[1];
    let positive = pairs
        .iter()
        .filter(|(x1, x2)| hom(x2).dot(&(hn * hom(x1))) > 0.0)
        .count();
    if 2 * positive < pairs.len() {
        hn = -hn;
    }
    hn
}

/// One physically valid interpretation of a calibrated homography.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyDecomposition {
    /// Rotation taking view-1 coordinates to view-2 coordinates.
    pub rotation: UnitQuaternion<f64>,
    /// Unit-norm translation, `X2 = R X1 + t`.
    pub translation: Vector3<f64>,
    /// Plane normal in view 1, pointing away from the camera (`nᵀ X1 = d > 0`).
    pub normal: Vector3<f64>,
    /// Plane distance from view 1 in units of the baseline.
    pub distance: f64,
}

impl HomographyDecomposition {
    /// `R + t nᵀ / d`.
    pub fn homography(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner() + self.translation * self.normal.transpose() / self.distance
    }
}

struct Candidate {
    r: Matrix3<f64>,
    n: Vector3<f64>,
    t: Vector3<f64>,
}

fn candidates(h: &Matrix3<f64>) -> Result<[Candidate; 4], GeometryError> {
    let eig = SymmetricEigen::new(h.transpose() * h);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let s1 = eig.eigenvalues[order[0]];
    let s3 = eig.eigenvalues[order[2]].max(0.0);
    let mut v = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    if v.determinant() < 0.0 {
        v = -v;
    }
    // Equal singular values: no translation, the plane is unobservable.
    if s1 - s3 < 1e-10 {
        return Err(GeometryError::DegenerateConfiguration(
            "homography is a pure rotation; translation direction undefined".into(),
        ));
    }
    let (v1, v2, v3) = (v.column(0).into_owned(), v.column(1).into_owned(), v.column(2).into_owned());
    let a = (1.0 - s3).max(0.0).sqrt();
    let b = (s1 - 1.0).max(0.0).sqrt();
    let c = (s1 - s3).sqrt();
    let u1 = (a * v1 + b * v3) / c;
    let u2 = (a * v1 - b * v3) / c;

    let solve = |u: &Vector3<f64>| {
        let hv2 = h * v2;
        let hu = h * u;
        let uu = Matrix3::from_columns(&[v2, *u, v2.cross(u)]);
        let ww = Matrix3::from_columns(&[hv2, hu, hv2.cross(&hu)]);
        let r = ww * uu.transpose();
        let n = v2.cross(u);
        let t = (h - r) * n;
        Candidate { r, n, t }
    };
    let c1 = solve(&u1);
    let c2 = solve(&u2);
    let c3 = Candidate { r: c1.r, n: -c1.n, t: -c1.t };
    let c4 = Candidate { r: c2.r, n: -c2.n, t: -c2.t };
    Ok([c1, c2, c3, c4])
}

/// Analytic decomposition of a calibrated homography.
///
/// Candidates are kept only if every correspondence lies in front of both
/// cameras. Of the survivors, the one whose plane normal is most aligned with
/// the first camera's optical axis is returned.
pub fn decompose_homography(
    h: &Matrix3<f64>,
    pairs: &[Correspondence],
) -> Result<HomographyDecomposition, GeometryError> {
    let h = normalize_homography(h, pairs);
    let mut best: Option<(f64, HomographyDecomposition)> = None;
    for cand in candidates(&h)? {
        let tn = cand.t.norm();
        if tn < 1e-12 {
            continue;
        }
        // With d = 1: depth1 = 1/(nᵀx1), X2 = R X1 + t.
        let in_front = pairs.iter().all(|(x1, _)| {
            let denom = cand.n.dot(&hom(x1));
            if denom <= 0.0 {
                return false;
            }
            let x1_3d = hom(x1) / denom;
            (cand.r * x1_3d + cand.t).z > 0.0
        });
        // Plane distance as seen from view 2 must also be positive.
        let d2 = 1.0 + (cand.r * cand.n).dot(&cand.t);
        if !in_front || d2 <= 0.0 {
            continue;
        }
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&cand.r));
        let dec = HomographyDecomposition {
            rotation,
            translation: cand.t / tn,
            normal: cand.n.normalize(),
            distance: 1.0 / tn,
        };
        let score = dec.normal.z;
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, dec));
        }
    }
    best.map(|(_, d)| d).ok_or(GeometryError::NoValidSolution)
}
