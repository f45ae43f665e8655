//! Finite-element homogenization of periodic elastic composites with soft
//! inclusions: macroscopic tensor, Bloch spectrum of the inclusion, the
//! matrix-valued Zhikov function, dispersion surfaces and band gaps, and
//! Steklov asymptotics of the stiff-region DtN map.

pub mod bloch;
pub mod config;
pub mod dispersion;
pub mod eigen;
pub mod error;
pub mod fem;
pub mod macro_tensor;
pub mod mesh;
pub mod pipeline;
pub mod scalar;
pub mod small;
pub mod sparse;
pub mod steklov;
pub mod store;
pub mod tensor;
pub mod validate;
pub mod zhikov;

pub use bloch::{bloch_eigs, BlochData};
pub use config::RunConfig;
pub use dispersion::{dispersion_branches, dispersion_surface, DispersionBranch, SurfaceRow};
pub use eigen::{dense_spectrum, smallest_eigenpairs, EigenOptions, EigenSet};
pub use error::{HiconError, Result};
pub use fem::{ElementOrder, HermitianSystem};
pub use macro_tensor::{assemble_macro, MacroTensor};
pub use mesh::{build_unit_cell_mesh, Geometry, Region, RegionSel, TriMesh};
pub use pipeline::{Pipeline, Stage, TOOL_VERSION};
pub use scalar::{Scalar, C64};
pub use steklov::{dtn_convergence_study, dtn_hom, dtn_schur, steklov_eigs, DtnMatrix, RateReport};
pub use store::ArtifactStore;
pub use tensor::{ElasticTensor, Quasimomentum};
pub use zhikov::{find_band_gaps, zhikov_matrix, BandGap, ZhikovOptions};
