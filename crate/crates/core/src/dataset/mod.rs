//! Synthetic point-cloud quality datasets with controllable domain shift.
//!
//! A domain is built from a handful of pristine shapes ("contents"), each
//! degraded by a ladder of distortions. Every distorted sample is scored by
//! an analytic opinion oracle against its pristine reference, and the scores
//! of a domain are rescaled linearly onto `[0, 10]`.

mod distort;
mod io;
mod oracle;
mod shapes;
mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::rng::derive_seed;

pub use distort::{apply_distortion, color_sigma, geometry_sigma, quantize_pitch, MIN_POINTS};
pub use io::{load_dataset, save_dataset, SCHEMA_VERSION};
pub use oracle::{nearest_neighbors, oracle_mos, OracleErrors, OracleWeights};
pub use shapes::generate_pristine;
pub use split::{split_folds, Fold};

pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Target,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ShapeFamily {
    Sphere,
    Torus,
    CubeShell,
    GaussianBlob,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [
        ShapeFamily::Sphere,
        ShapeFamily::Torus,
        ShapeFamily::CubeShell,
        ShapeFamily::GaussianBlob,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Torus => "torus",
            ShapeFamily::CubeShell => "cube_shell",
            ShapeFamily::GaussianBlob => "gaussian_blob",
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| config(format!("unknown shape family `{s}`")))
    }
}

impl TryFrom<String> for ShapeFamily {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ShapeFamily> for String {
    fn from(f: ShapeFamily) -> String {
        f.name().to_string()
    }
}

/// A single degradation primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Distortion {
    ColorNoise,
    GeometryGaussianNoise,
    Downsample,
    Quantize,
}

impl Distortion {
    pub const ALL: [Distortion; 4] = [
        Distortion::ColorNoise,
        Distortion::GeometryGaussianNoise,
        Distortion::Downsample,
        Distortion::Quantize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Distortion::ColorNoise => "color_noise",
            Distortion::GeometryGaussianNoise => "geometry_gaussian_noise",
            Distortion::Downsample => "downsample",
            Distortion::Quantize => "quantize",
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            Distortion::ColorNoise => 1,
            Distortion::GeometryGaussianNoise => 2,
            Distortion::Downsample => 3,
            Distortion::Quantize => 4,
        }
    }
}

/// Distortion kind: identity, one primitive, or two primitives applied in order.
///
/// Serialized as `none`, `<primitive>` or `<first>+<second>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DistortionKind {
    None,
    Single(Distortion),
    Combo(Distortion, Distortion),
}

impl DistortionKind {
    pub fn primitives(self) -> Vec<Distortion> {
        match self {
            DistortionKind::None => vec![],
            DistortionKind::Single(d) => vec![d],
            DistortionKind::Combo(a, b) => vec![a, b],
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistortionKind::None => f.write_str("none"),
            DistortionKind::Single(d) => f.write_str(d.name()),
            DistortionKind::Combo(a, b) => write!(f, "{}+{}", a.name(), b.name()),
        }
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let prim = |p: &str| {
            Distortion::ALL
                .into_iter()
                .find(|d| d.name() == p)
                .ok_or_else(|| config(format!("unknown distortion `{p}`")))
        };
        if s == "none" {
            return Ok(DistortionKind::None);
        }
        match s.split_once('+') {
            Some((a, b)) => {
                let (a, b) = (prim(a)?, prim(b)?);
                if a == b {
                    return Err(config(format!("combo `{s}` repeats a primitive")));
                }
                Ok(DistortionKind::Combo(a, b))
            }
            None => Ok(DistortionKind::Single(prim(s)?)),
        }
    }
}

impl TryFrom<String> for DistortionKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DistortionKind> for String {
    fn from(k: DistortionKind) -> String {
        k.to_string()
    }
}

pub const MAX_LEVEL: u8 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// 1..=6 for real distortions; 0 for [`DistortionKind::None`].
    pub intensity: u8,
}

impl DistortionSpec {
    pub const NONE: DistortionSpec = DistortionSpec {
        kind: DistortionKind::None,
        intensity: 0,
    };

    pub fn new(kind: DistortionKind, intensity: u8) -> Self {
        Self { kind, intensity }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudSample {
    pub points: Vec<Point>,
    pub colors: Vec<Point>,
    pub mos: f64,
    pub content_id: u32,
    pub shape: ShapeFamily,
    pub distortion: DistortionSpec,
    pub domain_tag: DomainTag,
}

impl PointCloudSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks the structural invariants of a sample.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.colors.len() {
            return Err(Error::Contract(format!(
                "{} points but {} colors",
                self.points.len(),
                self.colors.len()
            )));
        }
        if self.points.len() < MIN_POINTS {
            return Err(Error::Degenerate(format!(
                "{} points, need at least {MIN_POINTS}",
                self.points.len()
            )));
        }
        if self.points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Contract("non-finite coordinate".into()));
        }
        if self.colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Contract("color outside [0, 1]".into()));
        }
        if !(0.0..=10.0).contains(&self.mos) {
            return Err(Error::Contract(format!("mos {} outside [0, 10]", self.mos)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_tag: DomainTag,
    pub samples: Vec<PointCloudSample>,
    /// content id → indices into `samples`.
    pub groups: BTreeMap<u32, Vec<usize>>,
}

impl DomainDataset {
    /// Assembles a dataset and derives its group map from the samples.
    pub fn from_samples(domain_tag: DomainTag, samples: Vec<PointCloudSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(config("a domain needs at least one sample"));
        }
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            groups.entry(s.content_id).or_default().push(i);
        }
        Ok(Self {
            domain_tag,
            samples,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mos(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mos).collect()
    }

    pub fn content_ids(&self, indices: &[usize]) -> Vec<u32> {
        indices.iter().map(|&i| self.samples[i].content_id).collect()
    }
}

fn default_levels() -> Vec<u8> {
    (1..=MAX_LEVEL).collect()
}

fn default_points() -> usize {
    1024
}

/// Recipe for one synthetic domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub domain_tag: DomainTag,
    pub shape_families: Vec<ShapeFamily>,
    pub distortions: Vec<DistortionKind>,
    #[serde(default = "default_levels")]
    pub levels: Vec<u8>,
    pub groups: usize,
    /// First content id; contents are numbered consecutively from here.
    #[serde(default)]
    pub content_offset: u32,
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default)]
    pub oracle: OracleWeights,
}

impl DomainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.distortions.is_empty() {
            return Err(config("distortion list is empty"));
        }
        if self.distortions.contains(&DistortionKind::None) {
            return Err(config("`none` is not a distortion ladder"));
        }
        if self.shape_families.is_empty() {
            return Err(config("shape family list is empty"));
        }
        if self.levels.is_empty() {
            return Err(config("level list is empty"));
        }
        if let Some(l) = self.levels.iter().find(|l| !(1..=MAX_LEVEL).contains(l)) {
            return Err(config(format!("level {l} outside 1..={MAX_LEVEL}")));
        }
        if self.groups == 0 {
            return Err(config("group count must be positive"));
        }
        if self.n_points < MIN_POINTS {
            return Err(config(format!("n_points must be at least {MIN_POINTS}")));
        }
        self.oracle.validate()
    }

    pub fn family_of(&self, group: usize) -> ShapeFamily {
        self.shape_families[group % self.shape_families.len()]
    }
}

/// Generates, distorts, scores and rescales a whole domain.
pub fn build_domain(cfg: &DomainConfig, seed: u64) -> Result<DomainDataset> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(cfg.groups * cfg.distortions.len() * cfg.levels.len());
    for g in 0..cfg.groups {
        let content_id = cfg.content_offset + g as u32;
        let mut reference = generate_pristine(content_id, cfg.n_points, cfg.family_of(g), seed)?;
        reference.domain_tag = cfg.domain_tag;
        let distortion_seed = derive_seed(seed, &[0xD157, u64::from(content_id)]);
        for &kind in &cfg.distortions {
            for &level in &cfg.levels {
                let mut s = apply_distortion(&reference, DistortionSpec::new(kind, level), distortion_seed)?;
                s.mos = oracle_mos(&s, &reference, &cfg.oracle)?;
                samples.push(s);
            }
        }
    }
    rescale_mos(&mut samples)?;
    DomainDataset::from_samples(cfg.domain_tag, samples)
}

/// Linear map of the sample scores onto `[0, 10]`.
fn rescale_mos(samples: &mut [PointCloudSample]) -> Result<()> {
    let lo = samples.iter().map(|s| s.mos).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.mos).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Err(Error::Degenerate("all oracle scores are equal; cannot rescale".into()));
    }
    for s in samples {
        s.mos = 10.0 * ((s.mos - lo) / (hi - lo));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config(tag: DomainTag, kinds: &[&str]) -> DomainConfig {
        DomainConfig {
            domain_tag: tag,
            shape_families: vec![ShapeFamily::Sphere, ShapeFamily::Torus],
            distortions: kinds.iter().map(|k| k.parse().unwrap()).collect(),
            levels: default_levels(),
            groups: 4,
            content_offset: 0,
            n_points: 256,
            oracle: OracleWeights::default(),
        }
    }

    #[test]
    fn kind_strings_roundtrip() {
        for s in ["none", "color_noise", "downsample+geometry_gaussian_noise", "quantize"] {
            let k: DistortionKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("blur".parse::<DistortionKind>().is_err());
        assert!("quantize+quantize".parse::<DistortionKind>().is_err());
        assert!(matches!("cylinder".parse::<ShapeFamily>(), Err(Error::Config(_))));
    }

    #[test]
    fn cardinality_and_rescaling() {
        let cfg = small_config(DomainTag::Source, &["color_noise", "downsample", "quantize"]);
        let ds = build_domain(&cfg, 3).unwrap();
        assert_eq!(ds.len(), 72);
        assert_eq!(ds.groups.len(), 4);
        let mos = ds.mos();
        let lo = mos.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 10.0);
        for s in &ds.samples {
            s.validate().unwrap();
        }
        let mut seen = vec![0; ds.len()];
        for idx in ds.groups.values() {
            for &i in idx {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn empty_distortions_rejected() {
        let mut cfg = small_config(DomainTag::Source, &["color_noise"]);
        cfg.distortions.clear();
        assert!(matches!(build_domain(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn cross_distortion_domains_do_not_share_kinds() {
        let s = build_domain(&small_config(DomainTag::Source, &["color_noise"]), 1).unwrap();
        let t = build_domain(&small_config(DomainTag::Target, &["geometry_gaussian_noise"]), 1).unwrap();
        let ks: std::collections::BTreeSet<_> = s.samples.iter().map(|x| x.distortion.kind).collect();
        let kt: std::collections::BTreeSet<_> = t.samples.iter().map(|x| x.distortion.kind).collect();
        assert_eq!(ks.intersection(&kt).count(), 0);
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = small_config(DomainTag::Target, &["geometry_gaussian_noise"]);
        assert_eq!(build_domain(&cfg, 11).unwrap(), build_domain(&cfg, 11).unwrap());
    }
}
