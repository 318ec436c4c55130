//! Trajectory association, Sim(3)-aligned absolute pose error and NEES.

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{log_so3, umeyama_sim3, GeometryError, Pose, Sim3Transform};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("trajectory is empty")]
    Empty,
    #[error("timestamps must strictly increase (sample {index}: {t} after {previous})")]
    NonMonotonic { index: usize, t: f64, previous: f64 },
    #[error("no overlap within {max_dt} s: estimate spans [{est_start}, {est_end}], reference spans [{ref_start}, {ref_end}]")]
    NoOverlap { est_start: f64, est_end: f64, ref_start: f64, ref_end: f64, max_dt: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("pose covariance of sample {0} is singular")]
    SingularCovariance(usize),
    #[error("{0} covariances supplied for {1} samples")]
    CovarianceCount(usize, usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(EvalError::NonMonotonic { index: i + 1, t: w[1].0, previous: w[0].0 });
            }
        }
        Ok(Self { samples })
    }

    pub fn push(&mut self, t: f64, pose: Pose) -> Result<(), EvalError> {
        if let Some((last, _)) = self.samples.last() {
            if t <= *last {
                return Err(EvalError::NonMonotonic { index: self.samples.len(), t, previous: *last });
            }
        }
        self.samples.push((t, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.0, self.samples.last()?.0))
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|(_, p)| p.p).collect()
    }
}

fn overlap_error(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> EvalError {
    let (es, ee) = est.span().unwrap_or((f64::NAN, f64::NAN));
    let (rs, re) = reference.span().unwrap_or((f64::NAN, f64::NAN));
    EvalError::NoOverlap { est_start: es, est_end: ee, ref_start: rs, ref_end: re, max_dt }
}

/// Pairs `(est_index, ref_index)` sorted by estimate index.
///
/// Candidate pairs within `max_dt` are taken greedily in order of increasing
/// `|Δt|`; every sample on either side is used at most once.
pub fn associate(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<Vec<(usize, usize)>, EvalError> {
    if est.is_empty() || reference.is_empty() {
        return Err(EvalError::Empty);
    }
    let ref_t: Vec<f64> = reference.samples.iter().map(|(t, _)| *t).collect();
    let mut candidates = Vec::new();
    for (i, (t, _)) in est.samples.iter().enumerate() {
        let lo = ref_t.partition_point(|r| *r < t - max_dt);
        for (j, r) in ref_t.iter().enumerate().skip(lo) {
            let dt = (r - t).abs();
            if *r > t + max_dt {
                break;
            }
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![false; est.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !est_used[i] && !ref_used[j] {
            est_used[i] = true;
            ref_used[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(overlap_error(est, reference, max_dt));
    }
    pairs.sort_unstable();
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApeReport {
    pub mean: f64,
    pub rmse: f64,
    pub median: f64,
    pub max: f64,
    /// `(t_est, residual)` per associated sample.
    pub residuals: Vec<(f64, f64)>,
    #[serde(serialize_with = "serialize_sim3")]
    pub alignment: Sim3Transform,
    pub count: usize,
}

fn serialize_sim3<S: serde::Serializer>(t: &Sim3Transform, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let q = t.rotation.quaternion();
    let mut st = s.serialize_struct("Sim3", 3)?;
    st.serialize_field("scale", &t.scale)?;
    st.serialize_field("rotation_xyzw", &[q.i, q.j, q.k, q.w])?;
    st.serialize_field("translation", &[t.translation.x, t.translation.y, t.translation.z])?;
    st.end()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Translational APE after aligning the estimate onto the reference.
pub fn ape_sim3(est: &Trajectory, reference: &Trajectory, max_dt: f64) -> Result<ApeReport, EvalError> {
    let pairs = associate(est, reference, max_dt)?;
    let e: Vec<_> = pairs.iter().map(|(i, _)| est.samples[*i].1.p).collect();
    let r: Vec<_> = pairs.iter().map(|(_, j)| reference.samples[*j].1.p).collect();
    let alignment = umeyama_sim3(&e, &r)?;
    let res: Vec<f64> = e.iter().zip(&r).map(|(x, y)| (alignment.apply(x) - y).norm()).collect();
    let n = res.len() as f64;
    Ok(ApeReport {
        mean: res.iter().sum::<f64>() / n,
        rmse: (res.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
        median: median(&res),
        max: res.iter().cloned().fold(0.0, f64::max),
        residuals: pairs.iter().zip(&res).map(|((i, _), d)| (est.samples[*i].0, *d)).collect(),
        alignment,
        count: res.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeesReport {
    /// `(t_est, nees)` per associated sample.
    pub samples: Vec<(f64, f64)>,
    pub average: f64,
    /// Two-sided 95% chi-square bounds for the average over `samples.len()` draws of 6 DoF.
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Errors are taken after Sim(3) gauge alignment, which makes NEES optimistic.
    pub gauge_aligned: bool,
}

/// `[δp, δθ]` of the reference relative to the transformed estimate, global convention.
pub fn pose_error(est: &Pose, reference: &Pose, transform: &Sim3Transform) -> Vector6<f64> {
    let p = transform.apply(&est.p);
    let q = transform.rotation * est.q;
    let dtheta = log_so3(&(reference.q * q.inverse()));
    let dp = reference.p - p;
    Vector6::new(dp.x, dp.y, dp.z, dtheta.x, dtheta.y, dtheta.z)
}

/// Pose covariance `[δp, δθ]` mapped through a similarity transform.
pub fn transform_pose_covariance(p: &Matrix6<f64>, transform: &Sim3Transform) -> Matrix6<f64> {
    let r = transform.rotation.to_rotation_matrix().into_inner();
    let mut t = Matrix6::zeros();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r * transform.scale));
    t.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    t * p * t.transpose()
}

/// Wilson–Hilferty approximation of the chi-square quantile.
fn chi2_quantile(dof: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * dof);
    dof * (1.0 - a + z * a.sqrt()).powi(3)
}

pub fn nees_with_transform(
    est: &Trajectory,
    covariances: &[Matrix6<f64>],
    reference: &Trajectory,
    max_dt: f64,
    transform: &Sim3Transform,
    gauge_aligned: bool,
) -> Result<NeesReport, EvalError> {
    if covariances.len() != est.len() {
        return Err(EvalError::CovarianceCount(covariances.len(), est.len()));
    }
    let pairs = associate(est, reference, max_dt)?;
    let mut samples = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let e = pose_error(&est.samples[i].1, &reference.samples[j].1, transform);
        let p = transform_pose_covariance(&covariances[i], transform);
        let chol = p.cholesky().ok_or(EvalError::SingularCovariance(i))?;
        samples.push((est.samples[i].0, e.dot(&chol.solve(&e))));
    }
    let n = samples.len() as f64;
    let average = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let dof = 6.0 * n;
    Ok(NeesReport {
        samples,
        average,
        lower_bound: chi2_quantile(dof, -1.959_963_985) / n,
        upper_bound: chi2_quantile(dof, 1.959_963_985) / n,
        gauge_aligned,
    })
}

/// NEES after Sim(3) alignment of the estimated positions.
pub fn nees(est: &Trajectory, covariances: &[Matrix6<f64>], reference: &Trajectory, max_dt: f64) -> Result<NeesReport, EvalError> {
    let ape = ape_sim3(est, reference, max_dt)?;
    nees_with_transform(est, covariances, reference, max_dt, &ape.alignment, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so3;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn traj(points: &[(f64, Vector3<f64>)]) -> Trajectory {
        Trajectory::from_samples(points.iter().map(|(t, p)| (*t, Pose::new(*p, UnitQuaternion::identity()))).collect()).unwrap()
    }

    fn helix(n: usize) -> Trajectory {
        traj(&(0..n)
            .map(|k| {
                let a = k as f64 * 0.1;
                (k as f64 * 0.01, Vector3::new(a.cos(), a.sin(), 0.1 * a))
            })
            .collect::<Vec<_>>())
    }

    #[test]
    fn identical_stamps_pair_identically() {
        let t = helix(50);
        let pairs = associate(&t, &t, 0.001).unwrap();
        assert_eq!(pairs, (0..50).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn offset_beyond_max_dt_has_no_overlap() {
        let r = helix(20);
        let mut e = r.clone();
        for s in &mut e.samples {
            s.0 += 0.002 + 1e-6;
        }
        assert!(matches!(associate(&e, &r, 0.002), Err(EvalError::NoOverlap { .. })));
        assert!(associate(&e, &r, 0.0021).is_ok());
    }

    #[test]
    fn association_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mk = |rng: &mut ChaCha8Rng, n: usize| {
                let mut t = 0.0;
                traj(&(0..n)
                    .map(|_| {
                        t += rng.random_range(0.001..0.02);
                        (t, Vector3::zeros())
                    })
                    .collect::<Vec<_>>())
            };
            let e = mk(&mut rng, 15);
            let r = mk(&mut rng, 12);
            let max_dt = 0.01;
            // Brute force: repeatedly take the globally closest unused pair.
            let mut eu = vec![false; e.len()];
            let mut ru = vec![false; r.len()];
            let mut expected = Vec::new();
            loop {
                let mut best: Option<(f64, usize, usize)> = None;
                for i in 0..e.len() {
                    for j in 0..r.len() {
                        let d = (e.samples[i].0 - r.samples[j].0).abs();
                        if !eu[i] && !ru[j] && d <= max_dt && best.map_or(true, |b| d < b.0) {
                            best = Some((d, i, j));
                        }
                    }
                }
                let Some((_, i, j)) = best else { break };
                eu[i] = true;
                ru[j] = true;
                expected.push((i, j));
            }
            expected.sort_unstable();
            match associate(&e, &r, max_dt) {
                Ok(p) => assert_eq!(p, expected),
                Err(_) => assert!(expected.is_empty()),
            }
        }
    }

    #[test]
    fn ape_of_identical_trajectories_is_zero() {
        let t = helix(40);
        let rep = ape_sim3(&t, &t, 1e-3).unwrap();
        assert!(rep.max < 1e-9 && rep.mean < 1e-9);
        assert!((rep.alignment.scale - 1.0).abs() < 1e-9);
        assert_eq!(rep.count, 40);
    }

    #[test]
    fn ape_absorbs_similarity() {
        let r = helix(40);
        let rot = exp_so3(&Vector3::new(0.3, -1.0, 0.4));
        let e = traj(&r.samples.iter().map(|(t, p)| (*t, rot * p.p * 2.0 + Vector3::new(1.0, 2.0, 3.0))).collect::<Vec<_>>());
        let rep = ape_sim3(&e, &r, 1e-3).unwrap();
        assert!(rep.max < 1e-9, "{}", rep.max);
        assert!((rep.alignment.scale - 0.5).abs() < 1e-9);
    }

    #[test]
    fn ape_four_point_closed_form() {
        // Square corners with alternating ±0.1 m z offsets. The optimal Sim(3)
        // keeps the planar fit, scale 2/2.01 and rotation identity; each residual
        // is sqrt(0.0402)/2.01.
        let base = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
        let r = traj(&base.iter().enumerate().map(|(k, (x, y))| (k as f64, Vector3::new(*x, *y, 0.0))).collect::<Vec<_>>());
        let e = traj(
            &base
                .iter()
                .enumerate()
                .map(|(k, (x, y))| (k as f64, Vector3::new(*x, *y, if k % 2 == 0 { 0.1 } else { -0.1 })))
                .collect::<Vec<_>>(),
        );
        let rep = ape_sim3(&e, &r, 1e-3).unwrap();
        let expected = 0.0402f64.sqrt() / 2.01;
        for (_, d) in &rep.residuals {
            assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
        }
        assert!((rep.mean - expected).abs() < 1e-12);
        assert!((rep.rmse - expected).abs() < 1e-12);
        assert!((rep.alignment.scale - 2.0 / 2.01).abs() < 1e-12);
    }

    #[test]
    fn nees_definition_cases() {
        let r = helix(3);
        let p = Matrix6::from_diagonal(&Vector6::new(0.01, 0.04, 0.09, 0.0001, 0.0004, 0.0009));
        let zero = nees_with_transform(&r, &[p; 3], &r, 1e-3, &Sim3Transform::identity(), false).unwrap();
        assert!(zero.average.abs() < 1e-12);
        // One sigma on every axis.
        let sig = p.diagonal().map(f64::sqrt);
        let shifted = Trajectory::from_samples(
            r.samples
                .iter()
                .map(|(t, pose)| {
                    let q = exp_so3(&Vector3::new(-sig[3], -sig[4], -sig[5])) * pose.q;
                    (*t, Pose::new(pose.p - Vector3::new(sig[0], sig[1], sig[2]), q))
                })
                .collect(),
        )
        .unwrap();
        let rep = nees_with_transform(&shifted, &[p; 3], &r, 1e-3, &Sim3Transform::identity(), false).unwrap();
        for (_, v) in &rep.samples {
            assert!((v - 6.0).abs() < 1e-9, "{v}");
        }
        assert!(rep.lower_bound < 6.0 && rep.upper_bound > 6.0);
    }

    #[test]
    fn nees_rejects_singular_covariance() {
        let r = helix(3);
        let err = nees_with_transform(&r, &[Matrix6::zeros(); 3], &r, 1e-3, &Sim3Transform::identity(), false);
        assert!(matches!(err, Err(EvalError::SingularCovariance(0))));
    }

    #[test]
    fn nees_of_consistent_toy_filter() {
        // Static 6-DoF pose observed directly with noise; the posterior error is
        // exactly Gaussian with the filter's covariance.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let meas_var: Vector6<f64> = Vector6::new(0.04, 0.01, 0.09, 1e-4, 4e-4, 1e-4);
        let prior_var: Vector6<f64> = Vector6::repeat(1.0);
        let mut total = 0.0;
        let runs = 500;
        for run in 0..runs {
            let truth = Pose::new(Vector3::new(1.0, 2.0, 3.0), exp_so3(&Vector3::new(0.1, 0.2, 0.3)));
            let mut x = Vector6::zeros();
            let mut p = Matrix6::from_diagonal(&prior_var);
            // Prior mean drawn from the prior itself.
            for k in 0..6 {
                let n: f64 = StandardNormal.sample(&mut rng);
                x[k] = n * prior_var[k].sqrt();
            }
            for _ in 0..10 {
                let mut z = Vector6::zeros();
                for k in 0..6 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    z[k] = n * meas_var[k].sqrt();
                }
                let s = p + Matrix6::from_diagonal(&meas_var);
                let k = p * s.try_inverse().unwrap();
                x += k * (z - x);
                p = (Matrix6::identity() - k) * p;
            }
            // x estimates the error of the nominal truth; the estimated pose is truth ⊖ x.
            let est_pose = Pose::new(truth.p - x.fixed_rows::<3>(0), exp_so3(&-x.fixed_rows::<3>(3).into_owned()) * truth.q);
            let t = run as f64;
            let e = Trajectory::from_samples(vec![(t, est_pose)]).unwrap();
            let r = Trajectory::from_samples(vec![(t, truth)]).unwrap();
            let rep = nees_with_transform(&e, &[p], &r, 0.5, &Sim3Transform::identity(), false).unwrap();
            total += rep.average;
        }
        let avg = total / runs as f64;
        assert!((5.2..=6.9).contains(&avg), "average NEES {avg}");
    }

    #[test]
    fn chi2_bounds_are_sane() {
        let lo = chi2_quantile(6.0, -1.959_963_985);
        let hi = chi2_quantile(6.0, 1.959_963_985);
        assert!((lo - 1.237).abs() < 0.05 && (hi - 14.449).abs() < 0.1, "{lo} {hi}");
    }

    proptest! {
        #[test]
        fn ape_invariant_under_sim3_pretransform(
            s in 0.2f64..5.0,
            rx in -2.0f64..2.0, ry in -2.0f64..2.0, rz in -2.0f64..2.0,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = helix(30);
            let e = traj(&r.samples.iter().map(|(t, p)| (*t, p.p + Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))).collect::<Vec<_>>());
            let g = Sim3Transform { scale: s, rotation: exp_so3(&Vector3::new(rx, ry, rz)), translation: Vector3::new(tx, ty, tz) };
            let e2 = traj(&e.samples.iter().map(|(t, p)| (*t, g.apply(&p.p))).collect::<Vec<_>>());
            let a = ape_sim3(&e, &r, 1e-3).unwrap();
            let b = ape_sim3(&e2, &r, 1e-3).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-9);
            prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
            prop_assert!((a.max - b.max).abs() < 1e-9);
            prop_assert!((a.median - b.median).abs() < 1e-9);
            prop_assert!(a.max >= a.rmse && a.rmse >= 0.0 && a.max >= a.median);
            let ms: f64 = a.residuals.iter().map(|r| r.1 * r.1).sum::<f64>() / a.count as f64;
            prop_assert!((a.rmse * a.rmse - ms).abs() < 1e-12);
        }

        #[test]
        fn shrinking_max_dt_never_adds_matches(seed in 0u64..500, dt in 0.0005f64..0.02) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = 0.0;
            let mut mk = |n| { traj(&(0..n).map(|_| { t += rng.random_range(0.001..0.01); (t, Vector3::zeros()) }).collect::<Vec<_>>()) };
            let e = mk(20);
            let r = mk(20);
            let count = |d| associate(&e, &r, d).map(|p| p.len()).unwrap_or(0);
            prop_assert!(count(dt * 0.5) <= count(dt));
        }
    }
}
