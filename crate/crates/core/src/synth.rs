//! Gaussian-mixture benchmark data with labeled roles.
//!
//! Every class has a mean and a low-rank spread (`intrinsic_dim` random
//! directions) plus isotropic noise. Rows are generated role by role:
//! the labeled pool seeds are drawn from, in-domain background, validation,
//! test, and optionally out-of-domain background from an unrelated mixture.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::labels::DatasetPartition;
use crate::matrix::FeatureMatrix;
use crate::rng;

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub dim: usize,
    pub n_classes: usize,
    /// Standard deviation of the coordinates of random class means.
    #[serde(default = "one")]
    pub mean_scale: f64,
    /// Standard deviation along each within-class direction.
    #[serde(default = "half")]
    pub class_spread: f64,
    /// Number of random within-class directions (`dim` for a full-rank
    /// isotropic spread).
    #[serde(default)]
    pub intrinsic_dim: Option<usize>,
    /// Isotropic noise added to every point.
    #[serde(default)]
    pub noise: f64,
    /// Explicit class means; random means are drawn when empty.
    #[serde(default)]
    pub means: Vec<Vec<f64>>,
    pub counts: Counts,
    #[serde(default)]
    pub out_of_domain: Option<OutOfDomain>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub pool: usize,
    pub background: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutOfDomain {
    pub count: usize,
    pub components: usize,
    #[serde(default = "one")]
    pub mean_scale: f64,
    #[serde(default = "half")]
    pub spread: f64,
    /// Offset added to every coordinate of the out-of-domain means.
    #[serde(default)]
    pub shift: f64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| Error::Format(format!("synth spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_classes == 0 {
            return Err(Error::Parameter("synth spec needs dim > 0 and n_classes > 0".into()));
        }
        if !self.means.is_empty()
            && (self.means.len() != self.n_classes || self.means.iter().any(|m| m.len() != self.dim))
        {
            return Err(Error::Parameter(format!(
                "explicit means must be {} vectors of length {}",
                self.n_classes, self.dim
            )));
        }
        if self.intrinsic_dim.is_some_and(|r| r > self.dim) {
            return Err(Error::Parameter("intrinsic_dim exceeds dim".into()));
        }
        let stds = [self.mean_scale, self.class_spread, self.noise];
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Parameter("scales must be finite and >= 0".into()));
        }
        if let Some(o) = &self.out_of_domain {
            if o.count > 0 && o.components == 0 {
                return Err(Error::Parameter("out-of-domain mixture needs components > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Pool,
    Background,
    Validation,
    Test,
    OutOfDomain,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Pool => "pool",
            Role::Background => "background",
            Role::Validation => "validation",
            Role::Test => "test",
            Role::OutOfDomain => "ood",
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pool" => Role::Pool,
            "background" => Role::Background,
            "validation" => Role::Validation,
            "test" => Role::Test,
            "ood" => Role::OutOfDomain,
            _ => return Err(Error::Format(format!("unknown row role {s:?}"))),
        })
    }
}

/// Role and (for labeled roles) class of every feature row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RowRoles {
    pub roles: Vec<Role>,
    pub classes: Vec<Option<usize>>,
}

impl RowRoles {
    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.iter().flatten().max().map_or(0, |c| c + 1)
    }

    fn push(&mut self, role: Role, class: Option<usize>) {
        self.roles.push(role);
        self.classes.push(class);
    }

    pub fn rows_with(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == role).collect()
    }

    /// Classes of `rows`; errors on an unlabeled row.
    pub fn labels_of(&self, rows: &[usize]) -> Result<Vec<usize>> {
        rows.iter()
            .map(|&r| self.classes[r].ok_or_else(|| Error::Data(format!("row {r} has no class"))))
            .collect()
    }

    /// Lines of `role class`, with `-` for unlabeled rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (r, c) in self.roles.iter().zip(&self.classes) {
            match c {
                Some(c) => writeln!(s, "{} {c}", r.name()),
                None => writeln!(s, "{} -", r.name()),
            }
            .expect("writing to a String");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut out = RowRoles::default();
        for (n, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let (Some(role), Some(class), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Format(format!("rows line {}: expected `role class`", n + 1)));
            };
            let class = match class {
                "-" => None,
                c => Some(c.parse().map_err(|_| Error::Format(format!("rows line {}: bad class", n + 1)))?),
            };
            out.push(role.parse()?, class);
        }
        Ok(out)
    }
}

/// Draws `shots` pool rows per class. Each class uses its own sub-stream of
/// `seed`, so the draw for one class does not depend on the others.
pub fn draw_seeds(roles: &RowRoles, n_classes: usize, shots: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for r in roles.rows_with(Role::Pool) {
        if let Some(c) = roles.classes[r].filter(|&c| c < n_classes) {
            per_class[c].push(r);
        }
    }
    let mut seeds = Vec::with_capacity(n_classes * shots);
    for (c, rows) in per_class.iter().enumerate() {
        if rows.len() < shots {
            return Err(Error::Data(format!("class {c} has {} pool rows, {shots} requested", rows.len())));
        }
        let mut rng = rng::stream_rng(seed, rng::SEED_DRAWS, &[c as u64]);
        let mut pick = sample(&mut rng, rows.len(), shots).into_vec();
        pick.sort_unstable();
        seeds.extend(pick.into_iter().map(|i| (rows[i], c)));
    }
    Ok(seeds)
}

/// Which unlabeled rows join the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackgroundMode {
    /// Seeds only.
    None,
    InDomain,
    OutOfDomain,
    Both,
}

impl FromStr for BackgroundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => BackgroundMode::None,
            "in-domain" => BackgroundMode::InDomain,
            "out-of-domain" => BackgroundMode::OutOfDomain,
            "both" => BackgroundMode::Both,
            _ => return Err(Error::Parameter(format!("unknown background mode {s:?}"))),
        })
    }
}

impl BackgroundMode {
    pub fn name(self) -> &'static str {
        match self {
            BackgroundMode::None => "none",
            BackgroundMode::InDomain => "in-domain",
            BackgroundMode::OutOfDomain => "out-of-domain",
            BackgroundMode::Both => "both",
        }
    }

    pub fn rows(self, roles: &RowRoles) -> Vec<usize> {
        let want = |r: Role| match self {
            BackgroundMode::None => false,
            BackgroundMode::InDomain => r == Role::Background,
            BackgroundMode::OutOfDomain => r == Role::OutOfDomain,
            BackgroundMode::Both => matches!(r, Role::Background | Role::OutOfDomain),
        };
        (0..roles.len()).filter(|&i| want(roles.roles[i])).collect()
    }
}

/// Partition with the given seeds, background rows and all test rows.
pub fn partition(roles: &RowRoles, seeds: Vec<(usize, usize)>, background: BackgroundMode) -> Result<DatasetPartition> {
    DatasetPartition::new(seeds, background.rows(roles), roles.rows_with(Role::Test))
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub features: FeatureMatrix,
    pub roles: RowRoles,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random orthonormal-ish basis: `r` Gaussian directions scaled to unit norm.
fn directions(rng: &mut ChaCha8Rng, r: usize, d: usize) -> Vec<Vec<f64>> {
    (0..r)
        .map(|_| {
            let v = gaussian_vec(rng, d, 1.0);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

struct Component {
    mean: Vec<f64>,
    dirs: Vec<Vec<f64>>,
    spread: f64,
}

impl Component {
    fn sample(&self, rng: &mut ChaCha8Rng, noise: f64, out: &mut Vec<f32>) {
        let mut x = self.mean.clone();
        for dir in &self.dirs {
            let z: f64 = self.spread * rng.sample::<f64, _>(StandardNormal);
            for (xi, di) in x.iter_mut().zip(dir) {
                *xi += z * di;
            }
        }
        if noise > 0.0 {
            for xi in &mut x {
                *xi += noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        out.extend(x.into_iter().map(|v| v as f32));
    }
}

/// Generates the dataset described by `spec`. Identical specs give
/// identical output.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = rng::stream_rng(spec.seed, rng::SYNTH, &[]);
    let r = spec.intrinsic_dim.unwrap_or(d);
    let classes: Vec<Component> = (0..spec.n_classes)
        .map(|c| Component {
            mean: if spec.means.is_empty() { gaussian_vec(&mut rng, d, spec.mean_scale) } else { spec.means[c].clone() },
            dirs: if r == d {
                (0..d).map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect()
            } else {
                directions(&mut rng, r, d)
            },
            spread: spec.class_spread,
        })
        .collect();

    let mut data = Vec::new();
    let mut roles = RowRoles::default();
    let per_role = [
        (Role::Pool, spec.counts.pool),
        (Role::Background, spec.counts.background),
        (Role::Validation, spec.counts.validation),
        (Role::Test, spec.counts.test),
    ];
    for (role, count) in per_role {
        for (c, comp) in classes.iter().enumerate() {
            for _ in 0..count {
                comp.sample(&mut rng, spec.noise, &mut data);
                roles.push(role, Some(c));
            }
        }
    }
    if let Some(o) = spec.out_of_domain.as_ref().filter(|o| o.count > 0) {
        let comps: Vec<Component> = (0..o.components)
            .map(|_| Component {
                mean: gaussian_vec(&mut rng, d, o.mean_scale).into_iter().map(|v| v + o.shift).collect(),
                dirs: (0..d).map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
                spread: o.spread,
            })
            .collect();
        for i in 0..o.count {
            comps[i % o.components].sample(&mut rng, spec.noise, &mut data);
            roles.push(Role::OutOfDomain, None);
        }
    }
    let features = FeatureMatrix::new(roles.len(), d, data)?;
    Ok(SynthData { features, roles })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
seed = 5
dim = 3
n_classes = 2
class_spread = 0.0
means = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]
[counts]
pool = 2
background = 3
validation = 1
test = 2
"#;

    #[test]
    fn zero_spread_puts_points_on_means() {
        let data = generate(&SynthSpec::from_toml(SPEC).unwrap()).unwrap();
        assert_eq!(data.features.n_rows(), 2 * 8);
        for i in 0..data.roles.len() {
            let want: &[f32] = if data.roles.classes[i] == Some(0) { &[1.0, 0.0, 0.0] } else { &[0.0, 2.0, 0.0] };
            assert_eq!(data.features.row(i), want);
        }
    }

    #[test]
    fn deterministic_and_roles_round_trip() {
        let mut spec = SynthSpec::from_toml(SPEC).unwrap();
        spec.class_spread = 0.3;
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(RowRoles::from_text(&a.roles.to_text()).unwrap(), a.roles);
        assert_eq!(a.roles.rows_with(Role::Test).len(), 4);
    }

    #[test]
    fn out_of_domain_mixture_is_shifted() {
        let mut spec = SynthSpec::from_toml(SPEC).unwrap();
        spec.class_spread = 0.1;
        spec.out_of_domain = Some(OutOfDomain {
            count: 400,
            components: 4,
            mean_scale: 0.1,
            spread: 0.1,
            shift: 10.0,
        });
        let data = generate(&spec).unwrap();
        let ood = data.roles.rows_with(Role::OutOfDomain);
        assert_eq!(ood.len(), 400);
        let mean: f64 = ood.iter().map(|&r| f64::from(data.features.row(r)[2])).sum::<f64>() / 400.0;
        assert!((mean - 10.0).abs() < 0.5);
        let ind: f64 = data.roles.rows_with(Role::Background).iter().map(|&r| f64::from(data.features.row(r)[2])).sum::<f64>() / 6.0;
        assert!(ind.abs() < 0.5);
    }

    #[test]
    fn seed_draws() {
        let data = generate(&SynthSpec::from_toml(SPEC).unwrap()).unwrap();
        let s = draw_seeds(&data.roles, 2, 1, 9).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s, draw_seeds(&data.roles, 2, 1, 9).unwrap());
        assert!(s.iter().all(|&(r, c)| data.roles.roles[r] == Role::Pool && data.roles.classes[r] == Some(c)));
        assert!(draw_seeds(&data.roles, 2, 3, 9).is_err());
        let p = partition(&data.roles, s, BackgroundMode::InDomain).unwrap();
        assert_eq!(p.n_background(), 6);
    }

    #[test]
    fn bad_specs() {
        assert!(SynthSpec::from_toml("seed = 1").is_err());
        assert!(SynthSpec::from_toml(&SPEC.replace("n_classes = 2", "n_classes = 3")).is_err());
    }
}
