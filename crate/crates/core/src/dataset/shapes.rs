use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{DistortionSpec, DomainTag, Point, PointCloudSample, ShapeFamily, MIN_POINTS};
use crate::error::{config, Result};
use crate::rng::{stream, Rng};

const SPHERE_RADIUS: f64 = 0.5;

/// Pristine reference cloud for one content. Deterministic in
/// `(content_id, n_points, family, seed)`; its score is the maximum, 10.
pub fn generate_pristine(content_id: u32, n_points: usize, family: ShapeFamily, seed: u64) -> Result<PointCloudSample> {
    if n_points < MIN_POINTS {
        return Err(config(format!("n_points = {n_points}, need at least {MIN_POINTS}")));
    }
    let mut rng = stream(seed, &[0x5EED, u64::from(content_id)]);
    let rotation = random_rotation(&mut rng);
    let points: Vec<Point> = match family {
        ShapeFamily::Sphere => (0..n_points)
            .map(|_| scale(unit_vector(&mut rng), SPHERE_RADIUS))
            .collect(),
        ShapeFamily::Torus => {
            let major = rng.random_range(0.28..0.36);
            let minor = rng.random_range(0.07..0.14);
            (0..n_points)
                .map(|_| rotate(&rotation, torus_point(&mut rng, major, minor)))
                .collect()
        }
        ShapeFamily::CubeShell => {
            let half = rng.random_range(0.28..0.42);
            (0..n_points)
                .map(|_| rotate(&rotation, cube_shell_point(&mut rng, half)))
                .collect()
        }
        ShapeFamily::GaussianBlob => {
            let sd = [
                rng.random_range(0.10..0.16),
                rng.random_range(0.06..0.11),
                rng.random_range(0.04..0.08),
            ];
            (0..n_points)
                .map(|_| {
                    let z = gaussian3(&mut rng);
                    let p = [z[0] * sd[0], z[1] * sd[1], z[2] * sd[2]];
                    rotate(&rotation, p).map(|x| x.clamp(-0.5, 0.5))
                })
                .collect()
        }
    };
    let field = ColorField::random(&mut rng);
    let colors = points.iter().map(|p| field.eval(p)).collect();
    Ok(PointCloudSample {
        points,
        colors,
        mos: 10.0,
        content_id,
        shape: family,
        distortion: DistortionSpec::NONE,
        domain_tag: DomainTag::Source,
    })
}

/// Smooth per-channel sinusoidal texture.
struct ColorField {
    freq: [[f64; 3]; 3],
    phase: [f64; 3],
    amp: [f64; 3],
    base: [f64; 3],
}

impl ColorField {
    fn random(rng: &mut Rng) -> Self {
        let mut freq = [[0.0; 3]; 3];
        let mut phase = [0.0; 3];
        let mut amp = [0.0; 3];
        let mut base = [0.0; 3];
        for c in 0..3 {
            let dir = unit_vector(rng);
            let w = rng.random_range(3.0..9.0);
            freq[c] = scale(dir, w);
            phase[c] = rng.random_range(0.0..std::f64::consts::TAU);
            amp[c] = rng.random_range(0.15..0.3);
            base[c] = rng.random_range(0.35..0.65);
        }
        Self { freq, phase, amp, base }
    }

    fn eval(&self, p: &Point) -> Point {
        let mut out = [0.0; 3];
        for c in 0..3 {
            let arg = dot(&self.freq[c], p) + self.phase[c];
            out[c] = (self.base[c] + self.amp[c] * arg.sin()).clamp(0.0, 1.0);
        }
        out
    }
}

fn gaussian3(rng: &mut Rng) -> Point {
    [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ]
}

fn unit_vector(rng: &mut Rng) -> Point {
    loop {
        let z = gaussian3(rng);
        let n = dot(&z, &z).sqrt();
        if n > 1e-9 {
            return scale(z, 1.0 / n);
        }
    }
}

fn torus_point(rng: &mut Rng, major: f64, minor: f64) -> Point {
    // Rejection sampling gives an area-uniform distribution on the torus.
    loop {
        let u = rng.random_range(0.0..std::f64::consts::TAU);
        let v = rng.random_range(0.0..std::f64::consts::TAU);
        let accept = (major + minor * v.cos()) / (major + minor);
        if rng.random::<f64>() <= accept {
            let r = major + minor * v.cos();
            return [r * u.cos(), r * u.sin(), minor * v.sin()];
        }
    }
}

fn cube_shell_point(rng: &mut Rng, half: f64) -> Point {
    let face = rng.random_range(0..6usize);
    let a = rng.random_range(-half..half);
    let b = rng.random_range(-half..half);
    let s = if face % 2 == 0 { half } else { -half };
    match face / 2 {
        0 => [s, a, b],
        1 => [a, s, b],
        _ => [a, b, s],
    }
}

type Rotation = [[f64; 3]; 3];

/// Rotation from a random unit quaternion.
fn random_rotation(rng: &mut Rng) -> Rotation {
    let q: [f64; 4] = loop {
        let q = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = q.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            break q.map(|x| x / n);
        }
    };
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn rotate(r: &Rotation, p: Point) -> Point {
    [dot(&r[0], &p), dot(&r[1], &p), dot(&r[2], &p)]
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale(p: Point, s: f64) -> Point {
    [p[0] * s, p[1] * s, p[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fingerprint(s: &PointCloudSample) -> Vec<u64> {
        s.points
            .iter()
            .chain(&s.colors)
            .flatten()
            .map(|x| x.to_bits())
            .collect()
    }

    #[test]
    fn sphere_points_lie_on_radius() {
        let s = generate_pristine(0, 1024, ShapeFamily::Sphere, 42).unwrap();
        assert_eq!(s.len(), 1024);
        for p in &s.points {
            assert!((dot(p, p).sqrt() - 0.5).abs() < 1e-12);
        }
        assert_eq!(s.mos, 10.0);
        assert_eq!(s.distortion.kind, super::super::DistortionKind::None);
        s.validate().unwrap();
    }

    #[test]
    fn deterministic_and_content_dependent() {
        for family in ShapeFamily::ALL {
            let a = generate_pristine(0, 256, family, 9).unwrap();
            let b = generate_pristine(0, 256, family, 9).unwrap();
            let c = generate_pristine(1, 256, family, 9).unwrap();
            assert_eq!(fingerprint(&a), fingerprint(&b));
            assert_ne!(fingerprint(&a), fingerprint(&c));
            a.validate().unwrap();
        }
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(generate_pristine(0, 63, ShapeFamily::Torus, 0).is_err());
    }
}
