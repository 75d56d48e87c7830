//! Analytic opinion-score oracle standing in for human ratings.
//!
//! `mos = 10 · exp(−a·geom − b·color − c·density)` where
//!
//! * `geom` is the symmetric nearest-neighbour RMS distance (the larger of
//!   the two one-sided RMS values),
//! * `color` is the RMS color difference between each distorted point and
//!   its nearest reference point,
//! * `density` is `|ln(N_distorted / N_reference)|`.

use serde::{Deserialize, Serialize};

use super::{Point, PointCloudSample};
use crate::error::{config, contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleWeights {
    pub geom: f64,
    pub color: f64,
    pub density: f64,
}

impl Default for OracleWeights {
    fn default() -> Self {
        Self {
            geom: 4.0,
            color: 2.0,
            density: 1.0,
        }
    }
}

impl OracleWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.geom, self.color, self.density];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(config("oracle weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleErrors {
    pub geom: f64,
    pub color: f64,
    pub density: f64,
}

impl OracleErrors {
    pub fn measure(sample: &PointCloudSample, reference: &PointCloudSample) -> Self {
        let fwd = nearest_neighbors(&sample.points, &reference.points);
        let bwd = nearest_neighbors(&reference.points, &sample.points);
        let rms = |nn: &[(usize, f64)]| (nn.iter().map(|(_, d2)| d2).sum::<f64>() / nn.len() as f64).sqrt();
        let geom = rms(&fwd).max(rms(&bwd));
        let color_sq: f64 = fwd
            .iter()
            .zip(&sample.colors)
            .map(|((j, _), c)| sq_dist(c, &reference.colors[*j]))
            .sum();
        let color = (color_sq / fwd.len() as f64).sqrt();
        let density = (sample.len() as f64 / reference.len() as f64).ln().abs();
        Self { geom, color, density }
    }
}

/// Scores `sample` against its pristine `reference`.
pub fn oracle_mos(sample: &PointCloudSample, reference: &PointCloudSample, weights: &OracleWeights) -> Result<f64> {
    if sample.content_id != reference.content_id {
        return Err(contract(format!(
            "oracle compares content {} against reference content {}",
            sample.content_id, reference.content_id
        )));
    }
    if sample.is_empty() || reference.is_empty() {
        return Err(contract("oracle needs non-empty clouds"));
    }
    let e = OracleErrors::measure(sample, reference);
    Ok(10.0 * (-weights.geom * e.geom - weights.color * e.color - weights.density * e.density).exp())
}

/// For every point of `from`, the index of and squared distance to its
/// nearest point in `to`. Exhaustive search; ties go to the lowest index.
pub fn nearest_neighbors(from: &[Point], to: &[Point]) -> Vec<(usize, f64)> {
    from.iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, q) in to.iter().enumerate() {
                let d = sq_dist(p, q);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

#[inline]
fn sq_dist(a: &Point, b: &Point) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{apply_distortion, generate_pristine, DistortionSpec, ShapeFamily};

    #[test]
    fn reference_scores_ten() {
        let r = generate_pristine(2, 512, ShapeFamily::CubeShell, 1).unwrap();
        assert_eq!(oracle_mos(&r, &r, &OracleWeights::default()).unwrap(), 10.0);
    }

    #[test]
    fn mismatched_content_is_contract_violation() {
        let a = generate_pristine(0, 128, ShapeFamily::Sphere, 1).unwrap();
        let b = generate_pristine(1, 128, ShapeFamily::Sphere, 1).unwrap();
        assert!(matches!(
            oracle_mos(&a, &b, &OracleWeights::default()),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn ladders_are_monotone() {
        let w = OracleWeights::default();
        for family in ShapeFamily::ALL {
            let r = generate_pristine(3, 512, family, 8).unwrap();
            for kind in [
                "color_noise",
                "geometry_gaussian_noise",
                "downsample",
                "quantize",
                "downsample+color_noise",
                "color_noise+geometry_gaussian_noise",
            ] {
                let mut prev = 10.0;
                for level in 1..=6 {
                    let d = apply_distortion(&r, DistortionSpec::new(kind.parse().unwrap(), level), 77).unwrap();
                    let m = oracle_mos(&d, &r, &w).unwrap();
                    assert!(m <= prev, "{family} {kind} level {level}: {m} > {prev}");
                    prev = m;
                }
            }
        }
    }
}
