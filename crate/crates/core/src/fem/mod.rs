//! Finite-element spaces and assembly.

pub mod assembly;
pub mod dofmap;
pub mod element;

pub use assembly::{
    assemble_boundary_mass, assemble_mass, assemble_stiffness, assemble_strain_load, element_mass, element_stiffness,
    mean_rows, HermitianSystem, InterfaceMass,
};
pub use dofmap::{Constraints, DofMap};
pub use element::{ElementOrder, TriGeom};
