//! Domain types and the differentiable dispersion forward model.

pub mod dual;
mod grid;
mod model;
mod params;
mod spectrum;

pub use grid::WavenumberGrid;
pub use model::{
    emissivity_single_axis, eval_theta_phi, refractive_index, render, render_into,
    render_with_gradient, ComplexIndexCurve, Jacobian, N_FLOOR,
};
pub use params::{
    AxisParams, Band, DispersionParams, OscillatorBank, ParamBox, ParamKind, ParamLayout,
    GAMMA_FLOOR, OMEGA0_FLOOR,
};
pub use spectrum::Spectrum;
