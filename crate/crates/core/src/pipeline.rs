//! Stage runners: mesh → bloch → macro → {zhikov, dispersion, steklov}.
//!
//! Every stage result goes through the [`ArtifactStore`]; every output file
//! starts with a header naming the tool version and the config hash, and is
//! written to a temporary name before being renamed into place.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bloch::{bloch_eigs, BlochData};
use crate::config::{Discretization, RunConfig};
use crate::dispersion::{dispersion_surface, half_circle, write_surface_csv, SurfaceRow};
use crate::error::{HiconError, Result};
use crate::macro_tensor::{assemble_macro, MacroTensor};
use crate::mesh::{build_unit_cell_mesh, TriMesh};
use crate::steklov::{dtn_convergence_study, RateReport, SteklovRow};
use crate::store::{ArtifactStore, Cached};
use crate::zhikov::{
    beta_table, find_band_gaps, gap_grid, linspace, write_beta_csv, write_gaps_csv, BandGap, ZhikovEval,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Mesh,
    Bloch,
    Macro,
    Zhikov,
    Dispersion,
    Steklov,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Mesh,
        Stage::Bloch,
        Stage::Macro,
        Stage::Zhikov,
        Stage::Dispersion,
        Stage::Steklov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Mesh => "mesh",
            Stage::Bloch => "bloch",
            Stage::Macro => "macro",
            Stage::Zhikov => "zhikov",
            Stage::Dispersion => "dispersion",
            Stage::Steklov => "steklov",
        }
    }
}

impl FromStr for Stage {
    type Err = HiconError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| HiconError::Config(format!("unknown stage `{s}`")))
    }
}

/// Band-structure artifact of the Zhikov stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZhikovArtifact {
    pub table: Vec<ZhikovEval>,
    pub gaps: Vec<BandGap>,
}

/// Steklov sweep with its rows (the report alone skips them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SteklovArtifact {
    report: RateReport,
    rows: Vec<SteklovRow>,
}

/// File name of the dispersion table for one `ε`.
pub fn dispersion_file_name(epsilon: f64) -> String {
    format!("dispersion_eps{epsilon:e}.csv")
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub store: ArtifactStore,
    pub out_dir: PathBuf,
    /// Replaces the generated base mesh.
    pub mesh_in: Option<TriMesh>,
    /// Destination of the mesh stage output (defaults to `out_dir/mesh.json`).
    pub mesh_out: Option<PathBuf>,
    config_hash: String,
    written: Vec<PathBuf>,
    hits: Vec<(&'static str, bool)>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, store: ArtifactStore, out_dir: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            config_hash: cfg.hash(),
            cfg,
            store,
            out_dir: out_dir.into(),
            mesh_in: None,
            mesh_out: None,
            written: Vec::new(),
            hits: Vec::new(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn header(&self) -> String {
        format!("hicon {TOOL_VERSION} config {}", self.config_hash)
    }

    /// Files written so far by this pipeline.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// `(stage, cache hit)` for every cached lookup so far.
    pub fn cache_events(&self) -> &[(&'static str, bool)] {
        &self.hits
    }

    fn note<T>(&mut self, stage: &'static str, c: Cached<T>) -> (T, String) {
        self.hits.push((stage, c.hit));
        (c.value, c.key)
    }

    /// Mesh at a refinement level, with its cache key.
    pub fn mesh(&mut self, level: usize) -> Result<(TriMesh, String)> {
        let (base, base_key) = match &self.mesh_in {
            Some(m) => (m.clone(), m.hash()),
            None => {
                let geometry = self.cfg.geometry.clone();
                let key = ArtifactStore::key("mesh", &(&geometry, 0usize), &[]);
                let c = self
                    .store
                    .get_or_compute("mesh", key, || build_unit_cell_mesh(&geometry))?;
                self.note("mesh", c)
            }
        };
        if level == 0 {
            return Ok((base, base_key));
        }
        let key = ArtifactStore::key("mesh", &level, &[&base_key]);
        let c = self.store.get_or_compute("mesh", key, || base.refined(level))?;
        Ok(self.note("mesh", c))
    }

    pub fn bloch(&mut self) -> Result<(BlochData, String)> {
        let disc = self.cfg.bloch.disc;
        let (mesh, mesh_key) = self.mesh(disc.refine)?;
        let n = self.cfg.bloch.n_modes;
        let a = self.cfg.material.tensor();
        let opts = self.cfg.eigen_options();
        let key = ArtifactStore::key("bloch", &(n, &self.cfg.material, disc, &opts), &[&mesh_key]);
        let c = self
            .store
            .get_or_compute("bloch", key, || bloch_eigs(&mesh, &a, n, disc.element_order, &opts))?;
        Ok(self.note("bloch", c))
    }

    pub fn macro_at(&mut self, disc: Discretization) -> Result<(MacroTensor, String)> {
        let (mesh, mesh_key) = self.mesh(disc.refine)?;
        let a = self.cfg.material.tensor();
        let key = ArtifactStore::key("macro", &(&self.cfg.material, disc), &[&mesh_key]);
        let c = self
            .store
            .get_or_compute("macro", key, || assemble_macro(&mesh, &a, disc.element_order))?;
        Ok(self.note("macro", c))
    }

    pub fn zhikov(&mut self) -> Result<(ZhikovArtifact, String)> {
        let (data, bloch_key) = self.bloch()?;
        let zc = self.cfg.zhikov.clone();
        let key = ArtifactStore::key("zhikov", &zc, &[&bloch_key]);
        let c = self.store.get_or_compute("zhikov", key, || {
            let (lo, hi) = zc.z_grid.resolve(*data.etas.last().expect("bloch data is nonempty"));
            let opts = zc.options();
            let table = beta_table(&linspace(lo, hi, zc.z_grid.points), &data, &opts);
            let gaps = find_band_gaps(&gap_grid(lo, hi, &data, zc.z_grid.points), &data, &opts)?;
            Ok(ZhikovArtifact { table, gaps })
        })?;
        Ok(self.note("zhikov", c))
    }

    /// Dispersion rows per `ε`, in config order.
    pub fn dispersion(&mut self) -> Result<Vec<(f64, Vec<SurfaceRow>)>> {
        let (data, bloch_key) = self.bloch()?;
        let (am, macro_key) = self.macro_at(self.cfg.macro_)?;
        let zc = self.cfg.zhikov.clone();
        let dc = self.cfg.dispersion.clone();
        let (lo, hi) = zc.z_grid.resolve(*data.etas.last().expect("bloch data is nonempty"));
        let z_grid = linspace(lo, hi, zc.z_grid.points);
        let thetas = half_circle(dc.theta_points);
        let mut out = Vec::new();
        for &eps in &dc.epsilons {
            let key = ArtifactStore::key("dispersion", &(&zc, dc.theta_points, eps), &[&bloch_key, &macro_key]);
            let c = self.store.get_or_compute("dispersion", key, || {
                dispersion_surface(&z_grid, &thetas, eps, &data, &am.tensor(), &zc.options())
            })?;
            let (rows, _) = self.note("dispersion", c);
            out.push((eps, rows));
        }
        Ok(out)
    }

    pub fn steklov(&mut self) -> Result<RateReport> {
        let sc = self.cfg.steklov.clone();
        let (mesh, mesh_key) = self.mesh(sc.disc.refine)?;
        let (am, macro_key) = self.macro_at(sc.disc)?;
        let a = self.cfg.material.tensor();
        let key = ArtifactStore::key("steklov", &(&sc, &self.cfg.material), &[&mesh_key, &macro_key]);
        let c = self.store.get_or_compute("steklov", key, || {
            let mut report = dtn_convergence_study(
                &mesh,
                &a,
                &am.tensor(),
                &sc.chi_norms,
                &sc.directions,
                sc.disc.element_order,
            )?;
            let rows = std::mem::take(&mut report.rows);
            Ok(SteklovArtifact { report, rows })
        })?;
        let (art, _) = self.note("steklov", c);
        let mut report = art.report;
        report.rows = art.rows;
        Ok(report)
    }

    /// Writes `name` atomically inside the output directory.
    fn emit(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        self.emit_to(path, f)
    }

    fn emit_to(&mut self, path: PathBuf, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(&dir)?;
        }
        let file_name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
        let tmp = dir.join(format!(".{file_name}.partial"));
        let result = (|| {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            f(&mut w)?;
            w.flush()?;
            Ok::<_, HiconError>(())
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        fs::rename(&tmp, &path)?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn run_one(&mut self, stage: Stage) -> Result<()> {
        let header = self.header();
        let hash = self.config_hash.clone();
        match stage {
            Stage::Mesh => {
                let (mesh, _) = self.mesh(self.cfg.bloch.disc.refine)?;
                let path = self.mesh_out.clone().unwrap_or_else(|| self.out_dir.join("mesh.json"));
                self.emit_to(path, |w| {
                    w.write_all(mesh.to_json()?.as_bytes())?;
                    Ok(())
                })?;
            }
            Stage::Bloch => {
                let (data, _) = self.bloch()?;
                self.emit("bloch_eigs.csv", |w| data.write_csv(w, &header))?;
            }
            Stage::Macro => {
                let (am, _) = self.macro_at(self.cfg.macro_)?;
                self.emit("amacro.json", |w| am.write_json(w, TOOL_VERSION, &hash))?;
            }
            Stage::Zhikov => {
                let (z, _) = self.zhikov()?;
                self.emit("beta_eigs.csv", |w| write_beta_csv(w, &z.table, &header))?;
                self.emit("band_gaps.csv", |w| write_gaps_csv(w, &z.gaps, &header))?;
            }
            Stage::Dispersion => {
                for (eps, rows) in self.dispersion()? {
                    self.emit(&dispersion_file_name(eps), |w| write_surface_csv(w, &rows, &header))?;
                }
            }
            Stage::Steklov => {
                let r = self.steklov()?;
                self.emit("steklov.csv", |w| r.write_csv(w, &header))?;
                self.emit("steklov_rate.json", |w| r.write_json(w, TOOL_VERSION, &hash))?;
            }
        }
        Ok(())
    }

    /// Runs the given stages in order. On failure every file written by this
    /// call is removed and the error names the failing stage.
    pub fn run(&mut self, stages: &[Stage]) -> Result<Vec<PathBuf>> {
        let start = self.written.len();
        for &stage in stages {
            log::info!("running stage {}", stage.name());
            if let Err(e) = self.run_one(stage) {
                for p in self.written.drain(start..) {
                    let _ = fs::remove_file(p);
                }
                return Err(e.in_stage(stage.name()));
            }
        }
        Ok(self.written[start..].to_vec())
    }

    pub fn run_all(&mut self) -> Result<Vec<PathBuf>> {
        self.run(&Stage::ALL)
    }
}
