//! Frame-element structural dynamics: assembly, modal analysis,
//! base-excited transmissibility, bandgap metrics and static stiffness.

mod assembly;
mod dense;
mod modal;
mod response;
mod skyline;
mod sparse;
mod statics;

use serde::{Deserialize, Serialize};

use crate::lattice::BeamGraph;
use crate::{Error, Result};

pub use assembly::{
    assemble, assemble_with, element_mass, element_stiffness, AssemblyOptions, SystemMatrices,
    DEFAULT_MAX_ELEMENT_MM, DOF_PER_NODE,
};
pub use dense::{generalized_eigen, symmetric_eigen, Dense};
pub use modal::{modal, Modes, DENSE_LIMIT, EIGEN_TOL};
pub use response::{
    bg_ratio, bin_freq, detect_bandgaps, half_power_damping, primary_gap, to_db, transmissibility, Bandgap,
    Spectrum, DEFAULT_MIN_WIDTH_HZ, DEFAULT_THRESHOLD_DB, FORCE_AMPLITUDE_N, FREQ_BINS, FREQ_STEP_HZ,
};
pub use skyline::{Ordering, Skyline};
pub use sparse::{CsrMatrix, SymTriplets};
pub use statics::static_force_deflection;

/// Top of the frequency axis.
pub const F_MAX_HZ: f64 = 10_000.0;
/// Modes are retained up to this frequency to limit truncation error near
/// the top of the axis.
pub const MODE_CAP_HZ: f64 = 1.2 * F_MAX_HZ;

/// Isotropic linear-elastic material with a modal damping ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialProps {
    /// Young's modulus, Pa.
    #[serde(rename = "E")]
    pub e: f64,
    /// Density, kg/m^3.
    pub rho: f64,
    pub nu: f64,
    /// Modal damping ratio.
    pub d: f64,
}

impl MaterialProps {
    /// 3D-printed PLA.
    pub fn pla() -> Self {
        MaterialProps { e: 3.5e9, rho: 1240.0, nu: 0.35, d: 0.001 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.e > 0.0
            && self.rho > 0.0
            && (0.0..0.5).contains(&self.nu)
            && (0.0..1.0).contains(&self.d)
            && [self.e, self.rho, self.nu, self.d].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::validation(alloc::format!("invalid material {self:?}")))
        }
    }
}

impl Default for MaterialProps {
    fn default() -> Self {
        Self::pla()
    }
}

/// Assembly, modal analysis up to [`MODE_CAP_HZ`] and transmissibility.
pub fn simulate(g: &BeamGraph, mat: &MaterialProps) -> Result<Spectrum> {
    let sys = assemble(g, mat)?;
    let modes = modal(&sys, MODE_CAP_HZ)?;
    transmissibility(&modes, mat.d, g)
}
