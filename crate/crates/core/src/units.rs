//! Practical unit system used throughout the crate.
//!
//! Lengths are in kilometres, densities in g/cm³, masses in billions of
//! metric tons (10¹² kg) and accelerations in milligals (10⁻⁵ m/s²). In
//! these units one km³ of material at 1 g/cm³ weighs exactly one bln t, and
//! the gravitational constant becomes a number of order one.

/// Gravitational constant in SI units, m³·kg⁻¹·s⁻².
pub const GAMMA_SI: f64 = 6.674e-11;

/// Gravitational constant in mGal·km²·(bln t)⁻¹.
///
/// γ·(10¹² kg)/(10³ m)² = 6.674·10⁻⁵ m/s² = 6.674 mGal.
pub const G_U: f64 = GAMMA_SI * 1.0e12 / 1.0e6 / 1.0e-5;

/// Rounded mass constant of the depth/mass formulas, ≈ 1/G_U.
pub const MASS_CONSTANT_ROUNDED: f64 = 0.15;

/// Exact mass constant 1/G_U in bln t·mGal⁻¹·km⁻².
pub const MASS_CONSTANT: f64 = 1.0 / G_U;
