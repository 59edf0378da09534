use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelSet;
use crate::error::{Error, Result};
use crate::kinematics::{rot6d_to_matrix, rotation::slerp, Motion, Pose, Rot6D};

/// Mean and covariance fitted to a set of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianFit {
    /// Sample mean and unbiased covariance; needs at least two vectors.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: features.len(),
            });
        }
        let dim = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        let n = features.len() as f64;
        let x = DMatrix::from_fn(features.len(), dim, |i, j| features[i][j]);
        let mean = DVector::from_fn(dim, |j, _| x.column(j).sum() / n);
        let centered = DMatrix::from_fn(features.len(), dim, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1.0);
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Square root of a symmetric positive semi-definite matrix. Eigenvalues
/// within round-off of zero (relative to the largest) are clipped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let largest = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let floor = largest * f64::EPSILON * m.nrows().max(1) as f64;
    let roots = eig.eigenvalues.map(|v| if v > floor { v.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussian fits.
///
/// `Tr (C_a C_b)^{1/2}` is evaluated as `Tr (A C_b A)^{1/2}` with
/// `A = C_a^{1/2}`; the two share eigenvalues and the latter is symmetric.
pub fn fid(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a == b {
        return Ok(0.0);
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let root_a = sqrt_psd(&a.cov);
    let cross = sqrt_psd(&(&root_a * &b.cov * &root_a)).trace();
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}

/// Label id to equivalence-group id, total over the label set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceMap {
    pub groups: Vec<usize>,
}

impl EquivalenceMap {
    pub fn identity(labels: &LabelSet) -> Self {
        Self {
            groups: (0..labels.len()).collect(),
        }
    }

    /// Parses `{"groups": [...]}` and checks that it covers `labels`.
    pub fn from_json(text: &str, labels: &LabelSet) -> Result<Self> {
        let map: Self = serde_json::from_str(text)?;
        if map.groups.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "equivalence map covers {} labels, label set has {}",
                map.groups.len(),
                labels.len()
            )));
        }
        Ok(map)
    }

    /// Puts label `b` into the group of label `a`.
    pub fn merge(&self, a: usize, b: usize) -> Self {
        let (ga, gb) = (self.groups[a], self.groups[b]);
        Self {
            groups: self.groups.iter().map(|&g| if g == gb { ga } else { g }).collect(),
        }
    }

    pub fn group(&self, label: usize) -> Result<usize> {
        self.groups
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(format!("id {label}")))
    }
}

/// Indices of the `k` largest entries, largest first.
pub fn top_k(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Fraction of motions whose true label's group appears among the groups
/// of the top-`k` predicted labels.
pub fn accuracy(logits: &[Vec<f64>], labels: &[usize], eq: &EquivalenceMap, k: usize) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch(logits.len(), labels.len()));
    }
    if logits.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut correct = 0usize;
    for (l, &truth) in logits.iter().zip(labels) {
        if l.len() != eq.groups.len() {
            return Err(Error::DimensionMismatch {
                expected: eq.groups.len(),
                actual: l.len(),
            });
        }
        let g = eq.group(truth)?;
        if top_k(l, k).iter().any(|&p| eq.groups[p] == g) {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean Euclidean distance over `n_pairs` random pairs of distinct members.
pub fn diversity<R: Rng>(features: &[Vec<f64>], n_pairs: usize, rng: &mut R) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be positive".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        total += distance(&features[i], &features[j]);
    }
    Ok(total / n_pairs as f64)
}

/// [`diversity`] within each group, averaged over groups.
pub fn multimodality<R: Rng>(groups: &[Vec<Vec<f64>>], n_pairs: usize, rng: &mut R) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for g in groups {
        total += diversity(g, n_pairs, rng)?;
    }
    Ok(total / groups.len() as f64)
}

/// Mean with a normal-approximation 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCi {
    pub mean: f64,
    pub ci95: f64,
}

impl MetricCi {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                ci95: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let ci95 = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, ci95 }
    }
}

/// `l_t` poses strictly between `a` and `b`: rotations by slerp, the root
/// translation linearly.
pub fn interpolation_baseline(a: &Pose, b: &Pose, l_t: usize) -> Result<Motion> {
    if l_t == 0 {
        return Err(Error::InvalidArgument("l_t must be at least 1".into()));
    }
    if a.joint_count() != b.joint_count() {
        return Err(Error::SkeletonMismatch {
            expected: a.joint_count(),
            actual: b.joint_count(),
        });
    }
    let pair = |x: &Rot6D, y: &Rot6D| -> Result<_> { Ok((rot6d_to_matrix(x)?, rot6d_to_matrix(y)?)) };
    let root = pair(&a.r, &b.r)?;
    let joints = a
        .theta
        .iter()
        .zip(&b.theta)
        .map(|(x, y)| pair(x, y))
        .collect::<Result<Vec<_>>>()?;
    let frames = (1..=l_t)
        .map(|k| {
            let t = k as f64 / (l_t + 1) as f64;
            let rot =
                |(m0, m1): &(nalgebra::Matrix3<f64>, nalgebra::Matrix3<f64>)| Rot6D::from_matrix(&slerp(m0, m1, t));
            Ok(Pose {
                r: rot(&root)?,
                theta: joints.iter().map(rot).collect::<Result<Vec<_>>>()?,
                x: a.x + (b.x - a.x) * t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Motion::new(frames, 30.0))
}

/// Linear time resampling of the flattened poses to `len` frames.
pub fn resample(motion: &Motion, len: usize) -> Result<Motion> {
    if motion.is_empty() {
        return Err(Error::EmptyMotion);
    }
    if len == 0 {
        return Err(Error::InvalidArgument("resample length must be at least 1".into()));
    }
    let joints = motion.joint_count().unwrap_or(0);
    let rows: Vec<Vec<f64>> = motion.frames.iter().map(Pose::flatten).collect();
    let n = rows.len();
    let frames = (0..len)
        .map(|k| {
            let pos = if len == 1 {
                0.0
            } else {
                k as f64 * (n - 1) as f64 / (len - 1) as f64
            };
            let i = (pos.floor() as usize).min(n - 1);
            let j = (i + 1).min(n - 1);
            let w = pos - i as f64;
            let v: Vec<f64> = rows[i].iter().zip(&rows[j]).map(|(a, b)| a + (b - a) * w).collect();
            Pose::unflatten(&v, joints)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Motion::new(frames, motion.fps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::axis_angle;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fit_of(mean: &[f64], cov: DMatrix<f64>) -> GaussianFit {
        GaussianFit {
            mean: DVector::from_column_slice(mean),
            cov,
        }
    }

    #[test]
    fn fid_special_cases() {
        let a = fit_of(&[1.0, 2.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]));
        assert_eq!(fid(&a, &a).unwrap(), 0.0);
        let p = fit_of(&[0.0, 0.0, 0.0], DMatrix::zeros(3, 3));
        let q = fit_of(&[1.0, 2.0, -2.0], DMatrix::zeros(3, 3));
        assert!((fid(&p, &q).unwrap() - 9.0).abs() < 1e-12);
        let u = fit_of(&[0.0], DMatrix::from_element(1, 1, 1.0));
        let v = fit_of(&[1.0], DMatrix::from_element(1, 1, 4.0));
        assert!((fid(&u, &v).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(fid(&a, &u), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn fid_matches_scalar_closed_form_per_axis() {
        let a = fit_of(
            &[0.5, -1.0],
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.25])),
        );
        let b = fit_of(&[1.5, 1.0], DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 9.0])));
        let expect = (1.0 + (2.0f64 - 1.0).powi(2)) + (4.0 + (0.5f64 - 3.0).powi(2));
        assert!((fid(&a, &b).unwrap() - expect).abs() < 1e-10);
    }

    fn low_rank(seed: u64, dim: usize, rank: usize) -> GaussianFit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = DMatrix::from_fn(dim, rank, |_, _| rng.random_range(-1.0..1.0));
        let mean = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        GaussianFit {
            mean,
            cov: &basis * basis.transpose(),
        }
    }

    proptest! {
        #[test]
        fn fid_is_symmetric_nonnegative_and_finite_for_low_rank(s1 in 0u64..1000, s2 in 0u64..1000, rank in 0usize..4) {
            let a = low_rank(s1, 6, rank);
            let b = low_rank(s2, 6, 6 - rank.min(5));
            let ab = fid(&a, &b).unwrap();
            let ba = fid(&b, &a).unwrap();
            prop_assert!(ab.is_finite() && ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
            prop_assert_eq!(fid(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn diversity_is_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.random_range(-1.0..1.0); 3]).collect();
            let exhaustive = |p: &[Vec<f64>]| {
                let mut t = 0.0;
                for i in 0..p.len() { for j in 0..p.len() { if i != j { t += distance(&p[i], &p[j]); } } }
                t / (p.len() * (p.len() - 1)) as f64
            };
            let mut rev = pts.clone();
            rev.reverse();
            prop_assert!((exhaustive(&pts) - exhaustive(&rev)).abs() < 1e-12);
            let a = diversity(&pts, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            prop_assert!(a >= 0.0);
        }
    }

    #[test]
    fn gaussian_fit_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let g = GaussianFit::fit(&f).unwrap();
        assert!((&g.cov - g.cov.transpose()).abs().max() < 1e-9);
        let eig = SymmetricEigen::new(g.cov.clone());
        assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-8));
        assert!(matches!(
            GaussianFit::fit(&f[..1]),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn accuracy_rules() {
        let labels = LabelSet::new(&["a", "b", "c"]).unwrap();
        let eq = EquivalenceMap::identity(&labels);
        let logits = vec![
            vec![0.0, 3.0, 2.0, 1.0],
            vec![0.0, 1.0, 3.0, 2.0],
            vec![0.0, 1.0, 2.0, 3.0],
        ];
        let truth = [1, 3, 2];
        assert!((accuracy(&logits, &truth, &eq, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((accuracy(&logits, &truth, &eq, 2).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(accuracy(&logits, &truth, &eq, 4).unwrap(), 1.0);
        let merged = eq.merge(2, 3);
        let before = accuracy(&logits, &truth, &eq, 1).unwrap();
        let after = accuracy(&logits, &truth, &merged, 1).unwrap();
        assert!(after >= before);
        assert!((after - 1.0).abs() < 1e-12);
        let perfect: Vec<Vec<f64>> = truth
            .iter()
            .map(|&t| (0..4).map(|i| (i == t) as u8 as f64).collect())
            .collect();
        assert_eq!(accuracy(&perfect, &truth, &eq, 1).unwrap(), 1.0);
        assert!(matches!(
            accuracy(&logits, &[1, 2, 9], &eq, 1),
            Err(Error::UnknownLabel(_))
        ));
        assert!(EquivalenceMap::from_json(r#"{"groups":[0,1,1,3]}"#, &labels).is_ok());
        assert!(EquivalenceMap::from_json(r#"{"groups":[0,1]}"#, &labels).is_err());
    }

    #[test]
    fn diversity_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = vec![vec![1.0, 2.0]; 5];
        assert_eq!(diversity(&same, 200, &mut rng).unwrap(), 0.0);
        let two = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        assert!((diversity(&two, 200, &mut rng).unwrap() - 5.0).abs() < 1e-12);
        assert!(matches!(
            diversity(&two[..1], 10, &mut rng),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(multimodality(&[two.clone(), same], 10, &mut rng).unwrap() > 0.0);
    }

    #[test]
    fn ci_of_constant_samples_is_zero() {
        let c = MetricCi::from_samples(&[2.0; 20]);
        assert_eq!(c, MetricCi { mean: 2.0, ci95: 0.0 });
        let c = MetricCi::from_samples(&[1.0, 3.0]);
        assert!((c.ci95 - 1.96).abs() < 1e-12);
    }

    #[test]
    fn interpolation_midpoints() {
        let mut a = Pose::identity(2);
        let mut b = Pose::identity(2);
        let m = interpolation_baseline(&a, &b, 3).unwrap();
        assert!(m.frames.iter().all(|f| f.flatten() == a.flatten()));
        b.x = Vector3::new(1.0, 0.0, 0.0);
        b.theta[0] = Rot6D::from_matrix(&axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2)).unwrap();
        a.r = Rot6D::IDENTITY;
        let mid = interpolation_baseline(&a, &b, 1).unwrap();
        assert!((mid.frames[0].x - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        let r = rot6d_to_matrix(&mid.frames[0].theta[0]).unwrap();
        let expect = axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_4);
        assert!((r - expect).norm() < 1e-12);
        assert!(interpolation_baseline(&a, &b, 0).is_err());
    }

    #[test]
    fn resampling_keeps_endpoints() {
        let frames: Vec<Pose> = (0..5)
            .map(|i| {
                let mut p = Pose::identity(1);
                p.x = Vector3::new(i as f64, 0.0, 0.0);
                p
            })
            .collect();
        let m = Motion::new(frames, 30.0);
        let r = resample(&m, 9).unwrap();
        assert_eq!(r.len(), 9);
        assert_eq!(r.frames[0].x.x, 0.0);
        assert_eq!(r.frames[8].x.x, 4.0);
        assert!((r.frames[1].x.x - 0.5).abs() < 1e-12);
    }
}
