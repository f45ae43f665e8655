//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eigen::EigenOptions;
use crate::error::{HiconError, Result};
use crate::fem::ElementOrder;
use crate::mesh::Geometry;
use crate::tensor::ElasticTensor;
use crate::zhikov::ZhikovOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub lambda: f64,
    pub mu: f64,
}

impl Material {
    pub fn tensor(&self) -> ElasticTensor {
        ElasticTensor::isotropic(self.lambda, self.mu)
    }
}

/// Refinement level and element order of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    pub refine: usize,
    #[serde(default)]
    pub element_order: ElementOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochConfig {
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    #[serde(flatten)]
    pub disc: Discretization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZGrid {
    #[serde(default)]
    pub min: f64,
    /// Defaults to `1.2·η_n`.
    #[serde(default)]
    pub max: Option<f64>,
    #[serde(default = "default_z_points")]
    pub points: usize,
}

impl Default for ZGrid {
    fn default() -> Self {
        Self {
            min: 0.0,
            max: None,
            points: default_z_points(),
        }
    }
}

impl ZGrid {
    pub fn resolve(&self, eta_max: f64) -> (f64, f64) {
        (self.min, self.max.unwrap_or(1.2 * eta_max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZhikovConfig {
    #[serde(default)]
    pub z_grid: ZGrid,
    #[serde(default = "default_delta_pole")]
    pub delta_pole_rel: f64,
    #[serde(default = "default_tol_gap")]
    pub tol_gap: f64,
}

impl Default for ZhikovConfig {
    fn default() -> Self {
        Self {
            z_grid: ZGrid::default(),
            delta_pole_rel: default_delta_pole(),
            tol_gap: default_tol_gap(),
        }
    }
}

impl ZhikovConfig {
    pub fn options(&self) -> ZhikovOptions {
        ZhikovOptions {
            delta_pole_rel: self.delta_pole_rel,
            tol_gap: self.tol_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionConfig {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Directions on the upper half circle.
    #[serde(default = "default_theta_points")]
    pub theta_points: usize,
}

impl Default for DispersionConfig {
    fn default() -> Self {
        Self {
            epsilons: default_epsilons(),
            theta_points: default_theta_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteklovConfig {
    #[serde(flatten)]
    pub disc: Discretization,
    #[serde(default = "default_chi_norms")]
    pub chi_norms: Vec<f64>,
    #[serde(default = "default_directions")]
    pub directions: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: default_rtol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_cache")]
    pub cache_dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            out_dir: default_out(),
            cache_dir: default_cache(),
        }
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub material: Material,
    pub bloch: BlochConfig,
    #[serde(rename = "macro")]
    pub macro_: Discretization,
    #[serde(default)]
    pub zhikov: ZhikovConfig,
    #[serde(default)]
    pub dispersion: DispersionConfig,
    pub steklov: SteklovConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_modes() -> usize {
    11
}
fn default_z_points() -> usize {
    400
}
fn default_delta_pole() -> f64 {
    1e-3
}
fn default_tol_gap() -> f64 {
    1e-10
}
fn default_epsilons() -> Vec<f64> {
    vec![1e-3, 1e-4, 1e-5]
}
fn default_theta_points() -> usize {
    64
}
fn default_chi_norms() -> Vec<f64> {
    vec![0.02, 0.04, 0.08, 0.16]
}
fn default_directions() -> Vec<[f64; 2]> {
    vec![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -2.0]]
}
fn default_rtol() -> f64 {
    1e-9
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_cache() -> PathBuf {
    PathBuf::from(".hicon-cache")
}

impl RunConfig {
    /// The shipped example: ellipse 0.04 × 0.045 centred in the cell,
    /// `λ = 1`, `μ = 0.1`.
    pub fn worked_example() -> Self {
        let p2 = |refine| Discretization {
            refine,
            element_order: ElementOrder::P2,
        };
        Self {
            geometry: Geometry::worked_example(),
            material: Material { lambda: 1.0, mu: 0.1 },
            bloch: BlochConfig {
                n_modes: default_modes(),
                disc: p2(2),
            },
            macro_: p2(2),
            zhikov: ZhikovConfig::default(),
            dispersion: DispersionConfig::default(),
            steklov: SteklovConfig {
                disc: p2(1),
                chi_norms: default_chi_norms(),
                directions: default_directions(),
            },
            tolerances: Tolerances::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg = Self::from_toml_str_unchecked(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without range checks.
    pub fn from_toml_str_unchecked(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| HiconError::Config(format!("cannot parse config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| HiconError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Overrides every stage's refinement level.
    pub fn set_refine(&mut self, level: usize) {
        self.bloch.disc.refine = level;
        self.macro_.refine = level;
        self.steklov.disc.refine = level;
    }

    pub fn set_element_order(&mut self, order: ElementOrder) {
        self.bloch.disc.element_order = order;
        self.macro_.element_order = order;
        self.steklov.disc.element_order = order;
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            rtol: self.tolerances.rtol,
            ..EigenOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HiconError::Config(m));
        self.geometry.validate()?;
        let Material { lambda, mu } = self.material;
        // the tensor is λ tr(e) I + 4μ e, positive iff μ > 0 and λ + 2μ > 0
        if !(mu > 0.0) || !(lambda + 2.0 * mu > 0.0) || !lambda.is_finite() || !mu.is_finite() {
            return err(format!(
                "Lamé constants lambda = {lambda}, mu = {mu} are not admissible (need mu > 0 and lambda + 2 mu > 0)"
            ));
        }
        if self.bloch.n_modes == 0 {
            return err("bloch.n_modes must be at least 1".into());
        }
        let pos = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HiconError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("zhikov.delta_pole_rel", self.zhikov.delta_pole_rel)?;
        pos("zhikov.tol_gap", self.zhikov.tol_gap)?;
        pos("tolerances.rtol", self.tolerances.rtol)?;
        if self.dispersion.epsilons.is_empty() {
            return err("dispersion.epsilons must not be empty".into());
        }
        for &e in &self.dispersion.epsilons {
            pos("dispersion.epsilons entry", e)?;
        }
        if self.dispersion.theta_points == 0 {
            return err("dispersion.theta_points must be at least 1".into());
        }
        let z = &self.zhikov.z_grid;
        if z.points < 2 || !z.min.is_finite() || z.min < 0.0 {
            return err("zhikov.z_grid needs min >= 0 and at least two points".into());
        }
        if let Some(max) = z.max {
            if !(max > z.min) {
                return err(format!("zhikov.z_grid.max {max} must exceed min {}", z.min));
            }
        }
        let s = &self.steklov;
        if s.chi_norms.len() < 2
            || s.chi_norms.iter().any(|&c| !(c > 0.0 && c <= 0.3))
            || s.chi_norms.windows(2).any(|w| w[1] <= w[0])
        {
            return err("steklov.chi_norms must be increasing values in (0, 0.3], at least two".into());
        }
        if s.directions.is_empty() || s.directions.iter().any(|d| !(d[0].hypot(d[1]) > 0.0)) {
            return err("steklov.directions must be nonzero vectors".into());
        }
        for (name, d) in [("bloch", self.bloch.disc), ("macro", self.macro_), ("steklov", s.disc)] {
            if d.refine > 4 {
                return err(format!("{name}.refine = {} is above the supported maximum 4", d.refine));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding output locations.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        hash_json(&c)
    }
}

pub(crate) fn hash_json<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("value serializes");
    hex::encode(Sha256::digest(bytes))
}
