use rand_distr::{Distribution, StandardNormal};

use super::{Distortion, DistortionKind, DistortionSpec, PointCloudSample, MAX_LEVEL};
use crate::error::{config, Error, Result};
use crate::rng::{shuffle, stream};

/// Smallest cloud any operation accepts.
pub const MIN_POINTS: usize = 64;

/// Standard deviation of coordinate noise at a level.
pub fn geometry_sigma(level: u8) -> f64 {
    0.002 * f64::from(1u32 << level)
}

/// Standard deviation of color noise at a level (before clipping).
pub fn color_sigma(level: u8) -> f64 {
    0.005 * f64::from(1u32 << level)
}

/// Grid pitch used by quantization at a level.
pub fn quantize_pitch(level: u8) -> f64 {
    0.004 * f64::from(1u32 << level)
}

/// Applies `spec` to `sample` and returns the degraded copy.
///
/// The random draws of each primitive depend on `seed` and the primitive
/// only, not on the level, so a ladder of levels over one reference shares
/// its noise realisation and differs only in magnitude.
pub fn apply_distortion(sample: &PointCloudSample, spec: DistortionSpec, seed: u64) -> Result<PointCloudSample> {
    let mut out = sample.clone();
    out.distortion = spec;
    if spec.kind == DistortionKind::None {
        return Ok(out);
    }
    if !(1..=MAX_LEVEL).contains(&spec.intensity) {
        return Err(config(format!("intensity {} outside 1..={MAX_LEVEL}", spec.intensity)));
    }
    for prim in spec.kind.primitives() {
        apply_primitive(&mut out, prim, spec.intensity, seed)?;
    }
    Ok(out)
}

fn apply_primitive(s: &mut PointCloudSample, prim: Distortion, level: u8, seed: u64) -> Result<()> {
    let mut rng = stream(seed, &[prim.code()]);
    match prim {
        Distortion::GeometryGaussianNoise => {
            let sigma = geometry_sigma(level);
            for p in &mut s.points {
                for x in p.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x += sigma * z;
                }
            }
        }
        Distortion::ColorNoise => {
            let sigma = color_sigma(level);
            for c in &mut s.colors {
                for x in c.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = (*x + sigma * z).clamp(0.0, 1.0);
                }
            }
        }
        Distortion::Downsample => {
            let n = s.points.len();
            let keep = (n >> level).max(MIN_POINTS).min(n);
            if keep < MIN_POINTS {
                return Err(Error::Degenerate(format!(
                    "downsampling {n} points leaves {keep}, need at least {MIN_POINTS}"
                )));
            }
            // One permutation per stream: lower levels keep supersets of
            // the points kept at higher levels.
            let mut order: Vec<usize> = (0..n).collect();
            shuffle(&mut order, &mut rng);
            let mut kept = order[..keep].to_vec();
            kept.sort_unstable();
            s.points = kept.iter().map(|&i| s.points[i]).collect();
            s.colors = kept.iter().map(|&i| s.colors[i]).collect();
        }
        Distortion::Quantize => {
            let pitch = quantize_pitch(level);
            for p in &mut s.points {
                for x in p.iter_mut() {
                    *x = (*x / pitch).round() * pitch;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_pristine, ShapeFamily};

    fn sphere() -> PointCloudSample {
        generate_pristine(0, 1024, ShapeFamily::Sphere, 5).unwrap()
    }

    fn kind(s: &str) -> DistortionKind {
        s.parse().unwrap()
    }

    #[test]
    fn none_is_identity() {
        let s = sphere();
        assert_eq!(apply_distortion(&s, DistortionSpec::NONE, 1).unwrap(), s);
    }

    #[test]
    fn downsample_level_two_quarters_the_cloud() {
        let s = sphere();
        let d = apply_distortion(&s, DistortionSpec::new(kind("downsample"), 2), 1).unwrap();
        assert_eq!(d.len(), 256);
        let d6 = apply_distortion(&s, DistortionSpec::new(kind("downsample"), 6), 1).unwrap();
        assert_eq!(d6.len(), 64);
    }

    #[test]
    fn downsample_of_tiny_cloud_is_degenerate() {
        let mut s = sphere();
        s.points.truncate(40);
        s.colors.truncate(40);
        let r = apply_distortion(&s, DistortionSpec::new(kind("downsample"), 1), 1);
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn color_noise_stays_in_unit_range() {
        let s = sphere();
        let d = apply_distortion(&s, DistortionSpec::new(kind("color_noise"), 6), 1).unwrap();
        assert!(d.colors.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
        assert_ne!(d.colors, s.colors);
        assert_eq!(d.points, s.points);
    }

    #[test]
    fn geometry_noise_has_expected_spread() {
        let s = sphere();
        let d = apply_distortion(&s, DistortionSpec::new(kind("geometry_gaussian_noise"), 4), 1).unwrap();
        let n = (s.len() * 3) as f64;
        let var: f64 = s
            .points
            .iter()
            .zip(&d.points)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).powi(2)))
            .sum::<f64>()
            / n;
        let sigma = geometry_sigma(4);
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.1, "{} vs {sigma}", var.sqrt());
    }

    #[test]
    fn quantize_snaps_to_grid() {
        let s = sphere();
        let d = apply_distortion(&s, DistortionSpec::new(kind("quantize"), 3), 1).unwrap();
        let pitch = quantize_pitch(3);
        for p in d.points.iter().flatten() {
            let k = p / pitch;
            assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn combo_applies_both() {
        let s = sphere();
        let d = apply_distortion(&s, DistortionSpec::new(kind("downsample+color_noise"), 1), 1).unwrap();
        assert_eq!(d.len(), 512);
        assert!(d.colors.iter().zip(&s.colors).any(|(a, b)| a != b));
    }

    #[test]
    fn bad_intensity_rejected() {
        let s = sphere();
        assert!(apply_distortion(&s, DistortionSpec::new(kind("quantize"), 7), 1).is_err());
        assert!(apply_distortion(&s, DistortionSpec::new(kind("quantize"), 0), 1).is_err());
    }
}
