//! Tracker-space → display-space calibration.
//!
//! Two routes are provided. The four-point procedure aligns the tracker with
//! cubes placed at `(0,0,0)`, `(t,0,0)`, `(0,t,0)` and `(0,0,t)` in display
//! space and maps readings by projecting onto the three measured basis
//! directions. The least-squares route fits `x' = kAx + b` to any number of
//! correspondences in closed form (Umeyama).

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Mat3, SimilarityTransform, Vec3};

/// Default cube spacing in meters.
pub const DEFAULT_CUBE_SPACING: f64 = 0.1;

/// Minimum |det[a1 a2 a3]| accepted for a four-point probe.
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("probe readings span a degenerate basis (|det| = {det:e})")]
    DegenerateBasis { det: f64 },
    #[error("correspondence sources are collinear or coincident")]
    DegenerateConfiguration,
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPairs(usize),
    #[error("cube spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("non-finite calibration input")]
    NonFinite,
}

/// Four tracker readings taken while aligned with the display-space cubes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProbe {
    pub readings: [Vec3; 4],
    pub t: f64,
}

impl CalibrationProbe {
    pub fn new(readings: [Vec3; 4], t: f64) -> Self {
        Self { readings, t }
    }

    /// Display-space cube positions the operator aligned with.
    pub fn cube_positions(&self) -> [Vec3; 4] {
        cube_positions(self.t)
    }
}

pub fn cube_positions(t: f64) -> [Vec3; 4] {
    [
        Vec3::ZERO,
        Vec3::new(t, 0.0, 0.0),
        Vec3::new(0.0, t, 0.0),
        Vec3::new(0.0, 0.0, t),
    ]
}

/// The projection-form map built from a probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateMap {
    pub x0: Vec3,
    pub a1: Vec3,
    pub a2: Vec3,
    pub a3: Vec3,
    pub t: f64,
}

impl CoordinateMap {
    /// Rebuilds a map from stored fields, re-checking the basis.
    pub fn new(x0: Vec3, a1: Vec3, a2: Vec3, a3: Vec3, t: f64) -> Result<Self, CalibrationError> {
        if !(t.is_finite() && t > 0.0) {
            return Err(CalibrationError::InvalidSpacing(t));
        }
        if ![x0, a1, a2, a3].iter().all(|v| v.is_finite()) {
            return Err(CalibrationError::NonFinite);
        }
        let det = a1.dot(a2.cross(a3));
        if det.abs() <= DEGENERACY_THRESHOLD {
            return Err(CalibrationError::DegenerateBasis { det });
        }
        Ok(Self { x0, a1, a2, a3, t })
    }

    pub fn map_point(&self, x: Vec3) -> Vec3 {
        let d = x - self.x0;
        Vec3::new(
            d.dot(self.a1) / self.a1.norm_squared(),
            d.dot(self.a2) / self.a2.norm_squared(),
            d.dot(self.a3) / self.a3.norm_squared(),
        ) * self.t
    }

    /// The four probe pairs (reading → cube) implied by this map.
    pub fn probe_pairs(&self) -> [(Vec3, Vec3); 4] {
        let cubes = cube_positions(self.t);
        [
            (self.x0, cubes[0]),
            (self.x0 + self.a1, cubes[1]),
            (self.x0 + self.a2, cubes[2]),
            (self.x0 + self.a3, cubes[3]),
        ]
    }

    /// Similarity form of this map, fitted by least squares on the probe pairs.
    pub fn to_similarity(&self) -> Result<SimilarityTransform, CalibrationError> {
        let set = CorrespondenceSet::new(self.probe_pairs().to_vec())?;
        fit_similarity_lsq(&set)
    }
}

pub fn calibrate_four_point(probe: &CalibrationProbe) -> Result<CoordinateMap, CalibrationError> {
    let [x0, x1, x2, x3] = probe.readings;
    CoordinateMap::new(x0, x1 - x0, x2 - x0, x3 - x0, probe.t)
}

pub fn map_point(map: &CoordinateMap, x: Vec3) -> Vec3 {
    map.map_point(x)
}

/// Pairs `(source, target)` with `target ≈ kA·source + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pairs: Vec<(Vec3, Vec3)>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(Vec3, Vec3)>) -> Result<Self, CalibrationError> {
        if pairs.len() < 3 {
            return Err(CalibrationError::TooFewPairs(pairs.len()));
        }
        if pairs.iter().any(|(s, t)| !s.is_finite() || !t.is_finite()) {
            return Err(CalibrationError::NonFinite);
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(Vec3, Vec3)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn to_na(v: Vec3) -> Vector3<f64> {
    Vector3::new(v.x, v.y, v.z)
}

fn from_na(m: &Matrix3<f64>) -> Mat3 {
    Mat3::from_rows([
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ])
}

/// Closed-form least-squares similarity fit (Umeyama). Reflections are
/// removed internally so the result is always a proper rotation.
pub fn fit_similarity_lsq(c: &CorrespondenceSet) -> Result<SimilarityTransform, CalibrationError> {
    let n = c.len() as f64;
    let mu_s = Vec3::centroid(c.pairs.iter().map(|(s, _)| s));
    let mu_t = Vec3::centroid(c.pairs.iter().map(|(_, t)| t));

    let mut cov = Matrix3::<f64>::zeros();
    let mut scatter = Matrix3::<f64>::zeros();
    let mut var_s = 0.0;
    for (s, t) in &c.pairs {
        let ds = to_na(*s - mu_s);
        let dt = to_na(*t - mu_t);
        cov += dt * ds.transpose();
        scatter += ds * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    scatter /= n;
    var_s /= n;

    // Collinear (or coincident) sources leave the rotation about the line free.
    let mut eig = SymmetricEigen::new(scatter).eigenvalues.as_slice().to_vec();
    eig.sort_by(|a, b| b.total_cmp(a));
    if !(eig[0] > 0.0) || eig[1] <= eig[0] * 1e-12 {
        return Err(CalibrationError::DegenerateConfiguration);
    }

    let svd = cov.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(CalibrationError::DegenerateConfiguration);
    };
    let d = svd.singular_values;
    let mut s = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        // nalgebra orders singular values descending; flip the smallest.
        let (idx, _) = d
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("three singular values");
        s[idx] = -1.0;
    }
    let rot = u * Matrix3::from_diagonal(&s) * v_t;
    let k = d.dot(&s) / var_s;
    if !(k > 0.0) || !k.is_finite() {
        return Err(CalibrationError::DegenerateConfiguration);
    }
    let rotation = from_na(&rot);
    let translation = mu_t - rotation.mul_vec(mu_s) * k;
    SimilarityTransform::new(k, rotation, translation)
        .map_err(|_| CalibrationError::DegenerateConfiguration)
}

pub fn residual_rmse(t: &SimilarityTransform, c: &CorrespondenceSet) -> f64 {
    let sum: f64 = c
        .pairs
        .iter()
        .map(|(s, tg)| (t.apply(*s) - *tg).norm_squared())
        .sum();
    (sum / c.len() as f64).sqrt()
}
