//! Run configuration: a TOML file with one block per experiment, plus
//! `--set key=value` overrides. Unknown keys are rejected and every default
//! is written back into the echoed configuration.

use serde::{Deserialize, Serialize};

use crate::bergman::SolverOptions;
use crate::domain::{BaseFiberFamily, Domain};
use crate::error::{LabError, Result};
use crate::scalar::{cx, Cx};
use crate::weights::SubMeanOptions;

pub type PointSpec = Vec<[f64; 2]>;

pub fn to_point(p: &[[f64; 2]]) -> Vec<Cx<f64>> {
    p.iter().map(|c| cx(c[0], c[1])).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Kernel,
    Regularize,
    Extendtest,
    Extend,
    Variation,
    Minprinciple,
    Positivity,
}

impl Experiment {
    pub fn key(self) -> &'static str {
        match self {
            Experiment::Kernel => "kernel",
            Experiment::Regularize => "regularize",
            Experiment::Extendtest => "extendtest",
            Experiment::Extend => "extend",
            Experiment::Variation => "variation",
            Experiment::Minprinciple => "minprinciple",
            Experiment::Positivity => "positivity",
        }
    }

    pub const ALL: [Experiment; 7] = [
        Experiment::Kernel,
        Experiment::Regularize,
        Experiment::Extendtest,
        Experiment::Extend,
        Experiment::Variation,
        Experiment::Minprinciple,
        Experiment::Positivity,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainSpec {
    Disc {
        #[serde(default)]
        center: [f64; 2],
        #[serde(default = "one")]
        radius: f64,
    },
    Annulus {
        #[serde(default)]
        center: [f64; 2],
        inner: f64,
        #[serde(default = "one")]
        outer: f64,
    },
    Polydisc {
        #[serde(default)]
        center: PointSpec,
        radii: Vec<f64>,
    },
    Ball {
        #[serde(default)]
        center: PointSpec,
        #[serde(default = "one")]
        radius: f64,
        #[serde(default)]
        dim: usize,
    },
    Product {
        factors: Vec<DomainSpec>,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec::Disc { center: [0.0, 0.0], radius: 1.0 }
    }
}

impl DomainSpec {
    fn normalize(&mut self) {
        match self {
            DomainSpec::Polydisc { center, radii } if center.is_empty() => *center = vec![[0.0, 0.0]; radii.len()],
            DomainSpec::Ball { center, dim, .. } => {
                if center.is_empty() {
                    *center = vec![[0.0, 0.0]; (*dim).max(1)];
                }
                *dim = center.len();
            }
            DomainSpec::Product { factors } => factors.iter_mut().for_each(|f| f.normalize()),
            _ => {}
        }
    }

    pub fn build(&self) -> Result<Domain<f64>> {
        let d = match self {
            DomainSpec::Disc { center, radius } => Domain::Disc { center: cx(center[0], center[1]), radius: *radius },
            DomainSpec::Annulus { center, inner, outer } => {
                Domain::Annulus { center: cx(center[0], center[1]), inner: *inner, outer: *outer }
            }
            DomainSpec::Polydisc { center, radii } => Domain::Polydisc { center: to_point(center), radii: radii.clone() },
            DomainSpec::Ball { center, radius, .. } => Domain::Ball { center: to_point(center), radius: *radius },
            DomainSpec::Product { factors } => Domain::Product(factors.iter().map(|f| f.build()).collect::<Result<_>>()?),
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySpec {
    pub base: DomainSpec,
    pub fiber: DomainSpec,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec { base: DomainSpec::Disc { center: [0.0, 0.0], radius: 0.4 }, fiber: DomainSpec::default() }
    }
}

impl FamilySpec {
    pub fn build(&self) -> Result<BaseFiberFamily<f64>> {
        BaseFiberFamily::new(self.base.build()?, self.fiber.build()?)
    }
}

/// Explicit points plus an optional square lattice `step * (i + i j)` of
/// points with `|x - center| < radius` in the first coordinate (other
/// coordinates zero). Points outside the domain are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub points: Vec<PointSpec>,
    pub center: [f64; 2],
    pub step: f64,
    pub radius: f64,
}

impl GridSpec {
    pub fn lattice(step: f64, radius: f64) -> Self {
        GridSpec { points: Vec::new(), center: [0.0, 0.0], step, radius }
    }

    pub fn build(&self, domain: &Domain<f64>) -> Vec<Vec<Cx<f64>>> {
        let n = domain.dimension();
        let mut out: Vec<Vec<Cx<f64>>> = self.points.iter().map(|p| to_point(p)).collect();
        if self.step > 0.0 && self.radius > 0.0 {
            let k = (self.radius / self.step).floor() as i64;
            let c: Cx<f64> = cx(self.center[0], self.center[1]);
            for i in -k..=k {
                for j in -k..=k {
                    let e: Cx<f64> = cx(self.step * i as f64, self.step * j as f64);
                    if e.norm() < self.radius {
                        let mut p = vec![cx(0.0, 0.0); n];
                        p[0] = c + e;
                        out.push(p);
                    }
                }
            }
        }
        out.retain(|p| p.len() == n && domain.contains(p));
        out
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::lattice(0.1, 0.5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    pub radial: usize,
    pub angular: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { radial: 48, angular: 96 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub starts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub eps_irls: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let o = SolverOptions::<f64>::default();
        SolverSpec { starts: o.starts, tol: o.tol, max_iter: o.max_iter, eps_irls: o.eps_irls }
    }
}

impl SolverSpec {
    pub fn options(&self, seed: u64) -> SolverOptions<f64> {
        SolverOptions { starts: self.starts, tol: self.tol, max_iter: self.max_iter, eps_irls: self.eps_irls, seed }
    }
}

/// Circles for sub-mean-value tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubMeanSpec {
    pub radii: Vec<f64>,
    pub angular_nodes: usize,
    pub tol: f64,
    /// Seeded random directions added to the coordinate ones.
    pub extra_directions: usize,
}

impl Default for SubMeanSpec {
    fn default() -> Self {
        SubMeanSpec { radii: vec![0.05, 0.1], angular_nodes: 256, tol: 1e-6, extra_directions: 0 }
    }
}

impl SubMeanSpec {
    pub fn options(&self, dim: usize, seed: u64) -> SubMeanOptions<f64> {
        SubMeanOptions {
            radii: self.radii.clone(),
            directions: crate::weights::direction_panel(dim, self.extra_directions, seed),
            angular_nodes: self.angular_nodes,
            tol: self.tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSpec {
    pub m: Vec<u32>,
    pub degree: u32,
    pub grid: GridSpec,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { m: vec![1], degree: 20, grid: GridSpec::lattice(0.1, 0.75) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizeSpec {
    /// Exponent `p = 2/k`.
    pub k: u32,
    pub d0: u32,
    pub d_max: u32,
    pub m: Vec<u32>,
    pub grid: GridSpec,
    /// Empty means the default anchor set.
    pub anchors: Vec<PointSpec>,
    pub slack_tol: f64,
}

impl Default for RegularizeSpec {
    fn default() -> Self {
        RegularizeSpec {
            k: 1,
            d0: 8,
            d_max: 40,
            m: vec![2, 4, 8, 16],
            grid: GridSpec::lattice(0.2, 0.95),
            anchors: Vec::new(),
            slack_tol: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtendTestSpec {
    pub k: u32,
    pub d0: u32,
    pub d_max: u32,
    pub m: Vec<u32>,
    pub anchors: Vec<PointSpec>,
    pub m_tail: usize,
    pub threshold: f64,
}

impl Default for ExtendTestSpec {
    fn default() -> Self {
        ExtendTestSpec { k: 1, d0: 8, d_max: 40, m: (1..=8).collect(), anchors: Vec::new(), m_tail: 4, threshold: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtendSpec {
    pub t0: PointSpec,
    /// Fiber datum as a polynomial in the fiber variables.
    pub datum: String,
    pub m: u32,
    pub joint_degree: u32,
    pub cap_t: u32,
    pub cap_z: u32,
    pub max_iter: usize,
    pub tol: f64,
    pub model_tol: f64,
}

impl Default for ExtendSpec {
    fn default() -> Self {
        ExtendSpec {
            t0: vec![[0.0, 0.0]],
            datum: "1".into(),
            m: 1,
            joint_degree: 10,
            cap_t: 6,
            cap_z: 4,
            max_iter: 200,
            tol: 1e-12,
            model_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationSpec {
    pub m: Vec<u32>,
    pub degree: u32,
    /// Each section lists one polynomial in the base variables per fiber
    /// coordinate.
    pub sections: Vec<Vec<String>>,
    pub grid: GridSpec,
    pub submean: SubMeanSpec,
    /// Joint `(t, z)` points for the full sub-mean-value test.
    pub joint_points: Vec<PointSpec>,
    pub joint_submean: SubMeanSpec,
}

impl Default for VariationSpec {
    fn default() -> Self {
        VariationSpec {
            m: vec![1, 2],
            degree: 10,
            sections: vec![vec!["0".into()], vec!["0.3*t".into()], vec!["0.2 + 0.2*t".into()]],
            grid: GridSpec::lattice(0.1, 0.25),
            submean: SubMeanSpec { radii: vec![0.05, 0.1], angular_nodes: 64, tol: 1e-5, extra_directions: 0 },
            joint_points: Vec::new(),
            joint_submean: SubMeanSpec { radii: vec![0.05], angular_nodes: 24, tol: 1e-5, extra_directions: 2 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinPrincipleSpec {
    pub grid: GridSpec,
    pub submean: SubMeanSpec,
}

impl Default for MinPrincipleSpec {
    fn default() -> Self {
        MinPrincipleSpec {
            grid: GridSpec::lattice(0.15, 0.75),
            submean: SubMeanSpec { radii: vec![0.05, 0.1, 0.2], ..SubMeanSpec::default() },
        }
    }
}

/// A dual section: either point evaluation at a fixed fiber point, or one
/// polynomial in the base variables per basis monomial (missing ones are 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum DualSectionSpec {
    Evaluation(PointSpec),
    Components(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PositivitySpec {
    pub degree: u32,
    pub grid: GridSpec,
    pub sections: Vec<DualSectionSpec>,
    pub submean: SubMeanSpec,
}

impl Default for PositivitySpec {
    fn default() -> Self {
        PositivitySpec {
            degree: 6,
            grid: GridSpec::lattice(0.1, 0.35),
            sections: vec![
                DualSectionSpec::Evaluation(vec![[0.0, 0.0]]),
                DualSectionSpec::Evaluation(vec![[0.3, 0.0]]),
                DualSectionSpec::Components(vec!["1".into(), "t".into()]),
            ],
            submean: SubMeanSpec { radii: vec![0.05, 0.1, 0.15], ..SubMeanSpec::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub name: String,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub weight: String,
    pub clamp: f64,
    pub domain: DomainSpec,
    pub family: FamilySpec,
    /// Rule for single-domain experiments.
    pub quadrature: QuadratureSpec,
    /// Rule per fiber (and joint) factor for family experiments.
    pub family_quadrature: QuadratureSpec,
    pub solver: SolverSpec,
    pub kernel: KernelSpec,
    pub regularize: RegularizeSpec,
    pub extendtest: ExtendTestSpec,
    pub extend: ExtendSpec,
    pub variation: VariationSpec,
    pub minprinciple: MinPrincipleSpec,
    pub positivity: PositivitySpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: None,
            name: String::new(),
            seed: 0,
            threads: 0,
            weight: "0".into(),
            clamp: crate::weights::DEFAULT_CLAMP,
            domain: DomainSpec::default(),
            family: FamilySpec::default(),
            quadrature: QuadratureSpec::default(),
            family_quadrature: QuadratureSpec { radial: 16, angular: 32 },
            solver: SolverSpec::default(),
            kernel: KernelSpec::default(),
            regularize: RegularizeSpec::default(),
            extendtest: ExtendTestSpec::default(),
            extend: ExtendSpec::default(),
            variation: VariationSpec::default(),
            minprinciple: MinPrincipleSpec::default(),
            positivity: PositivitySpec::default(),
        }
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, head) = parts.split_last().ok_or_else(|| LabError::Config("empty --set key".into()))?;
    let mut cur = root;
    for p in head {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| LabError::Config(format!("--set {key}: '{p}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses `key=value`; the value is read as a TOML value and falls back to a
/// plain string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| LabError::Config(format!("--set expects key=value, got '{s}'")))?;
    let v = v.trim();
    let value = match format!("x = {v}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").unwrap(),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Parses TOML text and applies overrides. Errors carry the line and
    /// field of the offending entry.
    pub fn from_toml(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let err = |e: toml::de::Error| LabError::Config(e.to_string());
        let mut cfg: RunConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(err)?
        } else {
            let mut table: toml::Table = text.parse().map_err(err)?;
            for (k, v) in overrides {
                set_path(&mut table, k, v.clone())?;
            }
            toml::Value::Table(table).try_into().map_err(err)?
        };
        cfg.normalize();
        Ok(cfg)
    }

    fn normalize(&mut self) {
        self.domain.normalize();
        self.family.base.normalize();
        self.family.fiber.normalize();
    }

    pub fn experiment(&self) -> Result<Experiment> {
        self.experiment.ok_or_else(|| LabError::Config("no experiment selected".into()))
    }

    /// The configuration with every default filled in, limited to the blocks
    /// the selected experiment reads.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let (Some(e), Some(obj)) = (self.experiment, v.as_object_mut()) {
            for other in Experiment::ALL {
                if other != e {
                    obj.remove(other.key());
                }
            }
            let family_based = matches!(e, Experiment::Extend | Experiment::Variation | Experiment::Minprinciple | Experiment::Positivity);
            for k in if family_based { ["domain", "quadrature"] } else { ["family", "family_quadrature"] } {
                obj.remove(k);
            }
        }
        v
    }
}
