//! Special functions evaluated in log space.

pub mod bessel;
pub mod gamma;
pub mod kummer;
pub mod pcf;

pub use bessel::{bessel_i, bessel_i_deriv, bessel_i_scaled, bessel_ik, bessel_k, bessel_k_deriv};
pub use gamma::{digamma, gamma, gamma_ln, pochhammer, rgamma};
pub use kummer::{kummer_m, kummer_m_deriv, kummer_u, kummer_u_deriv};
pub use pcf::{pcf_d, pcf_d_deriv};
