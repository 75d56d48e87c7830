//! Hand-crafted, permutation-invariant cloud descriptor fed to the backbone.
//!
//! Layout of the 64 entries:
//!
//! | range    | content                                                  |
//! |----------|----------------------------------------------------------|
//! | 0..9     | coordinate mean, std, skewness per axis                  |
//! | 9..18    | color mean, std, skewness per channel                    |
//! | 18..21   | coordinate covariances (xy, xz, yz)                      |
//! | 21..24   | color covariances (rg, rb, gb)                           |
//! | 24..40   | radial-distance histogram, 16 bins over `[0, 2·mean_r]`  |
//! | 40..44   | radial mean, std, skewness, excess kurtosis              |
//! | 44..52   | nearest-neighbour distance quantiles                     |
//! | 52..54   | nearest-neighbour distance mean, std                     |
//! | 54..62   | color-gradient energy quantiles                          |
//! | 62..64   | color-gradient energy mean, std                          |
//!
//! Color-gradient energy of a point is the squared color difference to its
//! nearest neighbour. Points are put in a canonical order before any sum
//! is taken, so the descriptor is bit-identical under permutation.

use serde::{Deserialize, Serialize};

use crate::dataset::{Point, PointCloudSample, MIN_POINTS};
use crate::error::{contract, Error, Result};

pub const STAT_DIM: usize = 64;
pub const RADIAL_BINS: usize = 16;
pub const QUANTILES: [f64; 8] = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];

pub const NN_QUANTILE_OFFSET: usize = 44;
pub const RADIAL_HIST_OFFSET: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatVector(pub Vec<f64>);

impl StatVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn extract_raw_features(sample: &PointCloudSample) -> Result<StatVector> {
    let n = sample.points.len();
    if sample.colors.len() != n {
        return Err(contract("points and colors differ in length"));
    }
    if sample
        .points
        .iter()
        .chain(&sample.colors)
        .flatten()
        .any(|x| !x.is_finite())
    {
        return Err(contract("non-finite value in point cloud"));
    }
    if n < MIN_POINTS {
        return Err(Error::Degenerate(format!("{n} points, need at least {MIN_POINTS}")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ka = sample.points[a].iter().chain(&sample.colors[a]);
        let kb = sample.points[b].iter().chain(&sample.colors[b]);
        ka.zip(kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let pts: Vec<Point> = order.iter().map(|&i| sample.points[i]).collect();
    let cols: Vec<Point> = order.iter().map(|&i| sample.colors[i]).collect();

    let mut out = Vec::with_capacity(STAT_DIM);
    for axis in 0..3 {
        let (m, s, k) = moments(pts.iter().map(|p| p[axis]));
        out.extend([m, s, k]);
    }
    for ch in 0..3 {
        let (m, s, k) = moments(cols.iter().map(|c| c[ch]));
        out.extend([m, s, k]);
    }
    out.extend(cross_covariances(&pts));
    out.extend(cross_covariances(&cols));

    let centroid = mean_point(&pts);
    let radii: Vec<f64> = pts.iter().map(|p| dist(p, &centroid)).collect();
    let mean_r = radii.iter().sum::<f64>() / n as f64;
    let mut hist = [0.0; RADIAL_BINS];
    for &r in &radii {
        let bin = if mean_r > 1e-12 {
            ((r / mean_r) / 2.0 * RADIAL_BINS as f64).floor() as usize
        } else {
            0
        };
        hist[bin.min(RADIAL_BINS - 1)] += 1.0;
    }
    out.extend(hist.iter().map(|h| h / n as f64));
    let (rm, rs, rk) = moments(radii.iter().copied());
    out.extend([rm, rs, rk, excess_kurtosis(&radii)]);

    let (nn_dist, nn_energy) = neighbour_stats(&pts, &cols);
    push_distribution(&mut out, nn_dist);
    push_distribution(&mut out, nn_energy);

    debug_assert_eq!(out.len(), STAT_DIM);
    Ok(StatVector(out))
}

/// Distance to, and squared color difference with, each point's nearest
/// other point.
fn neighbour_stats(pts: &[Point], cols: &[Point]) -> (Vec<f64>, Vec<f64>) {
    let n = pts.len();
    let mut dists = Vec::with_capacity(n);
    let mut energy = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = sq(&pts[i], &pts[j]);
            if d < best.1 {
                best = (j, d);
            }
        }
        dists.push(best.1.sqrt());
        energy.push(sq(&cols[i], &cols[best.0]));
    }
    (dists, energy)
}

fn push_distribution(out: &mut Vec<f64>, mut values: Vec<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    values.sort_by(f64::total_cmp);
    out.extend(QUANTILES.iter().map(|&q| quantile_sorted(&values, q)));
    out.extend([mean, var.sqrt()]);
}

/// Linear-interpolated quantile of ascending `sorted`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Population mean, standard deviation and skewness. Skewness is 0 for a
/// (numerically) constant sequence.
fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let m2 = values.clone().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let sd = m2.sqrt();
    let skew = if sd > 1e-12 { m3 / (sd * sd * sd) } else { 0.0 };
    (mean, sd, skew)
}

fn excess_kurtosis(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    if m2 > 1e-24 {
        m4 / (m2 * m2) - 3.0
    } else {
        0.0
    }
}

fn cross_covariances(v: &[Point]) -> [f64; 3] {
    let m = mean_point(v);
    let n = v.len() as f64;
    let cov = |a: usize, b: usize| v.iter().map(|p| (p[a] - m[a]) * (p[b] - m[b])).sum::<f64>() / n;
    [cov(0, 1), cov(0, 2), cov(1, 2)]
}

fn mean_point(v: &[Point]) -> Point {
    let n = v.len() as f64;
    let mut m = [0.0; 3];
    for p in v {
        for k in 0..3 {
            m[k] += p[k];
        }
    }
    m.map(|x| x / n)
}

fn sq(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn dist(a: &Point, b: &Point) -> f64 {
    sq(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{apply_distortion, generate_pristine, DistortionSpec, ShapeFamily};
    use crate::rng::{shuffle, stream};

    #[test]
    fn permutation_invariant_bitwise() {
        let s = generate_pristine(1, 300, ShapeFamily::Torus, 3).unwrap();
        let mut idx: Vec<usize> = (0..s.len()).collect();
        shuffle(&mut idx, &mut stream(99, &[]));
        let mut p = s.clone();
        p.points = idx.iter().map(|&i| s.points[i]).collect();
        p.colors = idx.iter().map(|&i| s.colors[i]).collect();
        let a = extract_raw_features(&s).unwrap();
        let b = extract_raw_features(&p).unwrap();
        assert_eq!(a.0.len(), STAT_DIM);
        let bits = |v: &StatVector| v.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn noise_widens_neighbour_spacing() {
        let s = generate_pristine(0, 1024, ShapeFamily::Sphere, 3).unwrap();
        let noisy = apply_distortion(
            &s,
            DistortionSpec::new("geometry_gaussian_noise".parse().unwrap(), 6),
            4,
        )
        .unwrap();
        let a = extract_raw_features(&s).unwrap();
        let b = extract_raw_features(&noisy).unwrap();
        for k in 0..8 {
            let i = NN_QUANTILE_OFFSET + k;
            assert!(b.0[i] > a.0[i], "quantile {k}: {} <= {}", b.0[i], a.0[i]);
        }
    }

    #[test]
    fn coincident_points_are_finite() {
        let mut s = generate_pristine(0, 64, ShapeFamily::Sphere, 3).unwrap();
        for p in &mut s.points {
            *p = [0.1, 0.1, 0.1];
        }
        let f = extract_raw_features(&s).unwrap();
        assert!(f.0.iter().all(|x| x.is_finite()));
        for axis in 0..3 {
            assert!(f.0[axis * 3 + 1].abs() < 1e-12);
        }
        assert_eq!(f.0[RADIAL_HIST_OFFSET], 1.0);
    }

    #[test]
    fn nan_rejected() {
        let mut s = generate_pristine(0, 64, ShapeFamily::Sphere, 3).unwrap();
        s.points[5][1] = f64::NAN;
        assert!(matches!(extract_raw_features(&s), Err(Error::Contract(_))));
    }
}
