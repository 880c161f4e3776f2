//! High-frequency targets h(x) = ψ(wx): the smoothed landscape, Fourier and
//! variation quantities of ψ, discrepancy brackets, wrapped Gaussians, and the
//! singular pair kernel.

pub mod discrepancy;
pub mod kernel;
pub mod landscape;
pub mod periodic;
pub mod quadrature;
pub mod wrapped;

pub use discrepancy::{
    empirical_star_discrepancy, epsilon_n1_bound, etk_bracket, etk_min, gaussian_char, uniform_char_expectation, variance_bracket,
    variance_bracket_min, InputLaw, VarianceBracket,
};
pub use kernel::{kernel_bound, kernel_expectation_mc, singular_kernel, KernelEstimate};
pub use landscape::{kernel_k, landscape_quadrature, landscape_series, omega_grid, series_truncation};
pub use periodic::PeriodicFn;
pub use wrapped::{wirtinger_ratio, wrapped_gaussian_tv, Gaussian2Cov, WrappedTv};
