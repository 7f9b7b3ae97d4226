//! Discrete excitation spectra, Gaussian broadening, and the closure
//! relations of linear optics.
//!
//! A computed excitation spectrum is a list of lines `(Ω_I, f_I)` — energy
//! in eV and dimensionless oscillator strength. Broadening turns the lines
//! into a continuous profile
//!
//! ```text
//! A(E) = Σ_I f_I · exp(−(E − Ω_I)² / (2σ²))
//! ```
//!
//! evaluated over the full line list (no window truncation, so profiles add
//! linearly). The optical descriptors are linked by
//!
//! ```text
//! ε₁ = n² − κ²,   ε₂ = 2nκ,   n = √((|ε| + ε₁)/2),   κ = √((|ε| − ε₁)/2),
//! α = 4π κ E / (hc),          |ε| = √(ε₁² + ε₂²),
//! ```
//!
//! with `hc = 1.23984193e-4 eV·cm`, so `α` comes out in cm⁻¹.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planck constant times speed of light, in eV·cm.
pub const HC_EV_CM: f64 = 1.23984193e-4;

/// Default upper bound for excitation energies, in eV.
pub const DEFAULT_ENERGY_CAP_EV: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("excitation energy {omega} eV lies outside (0, {cap}] eV")]
    EnergyOutOfRange { omega: f64, cap: f64 },
    #[error("oscillator strength must be finite and non-negative, got {0}")]
    InvalidStrength(f64),
    #[error("spectrum contains no excitations")]
    EmptySpectrum,
    #[error("broadening width must be positive and finite, got sigma = {0} eV")]
    InvalidSigma(f64),
    #[error("energy grid must be finite and strictly increasing")]
    InvalidGrid,
    #[error("integration needs at least two grid points, got {0}")]
    GridTooShort(usize),
    #[error("dielectric components must be finite, got eps1 = {eps1}, eps2 = {eps2}")]
    InvalidDielectric { eps1: f64, eps2: f64 },
    #[error("need n > 0 and kappa >= 0, got n = {n}, kappa = {kappa}")]
    InvalidIndex { n: f64, kappa: f64 },
    #[error("photon energy must be positive and finite, got {0} eV")]
    InvalidEnergy(f64),
    #[error("extinction coefficient must be finite and non-negative, got {0}")]
    InvalidKappa(f64),
    #[error("top_k must lie in 1..={max}, got {got}")]
    TopKOutOfRange { got: usize, max: usize },
}

/// One electronic excitation: transition energy and oscillator strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub omega_ev: f64,
    pub strength: f64,
}

/// A validated list of excitations for one system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcitationSpectrum {
    excitations: Vec<Excitation>,
    energy_cap_ev: f64,
}

impl ExcitationSpectrum {
    /// Build a spectrum with the default 10 eV energy cap.
    pub fn new(excitations: Vec<Excitation>) -> Result<Self, SpectraError> {
        Self::with_cap(excitations, DEFAULT_ENERGY_CAP_EV)
    }

    /// Build a spectrum with an explicit energy cap.
    pub fn with_cap(excitations: Vec<Excitation>, energy_cap_ev: f64) -> Result<Self, SpectraError> {
        for line in &excitations {
            if !line.omega_ev.is_finite() || line.omega_ev <= 0.0 || line.omega_ev > energy_cap_ev {
                return Err(SpectraError::EnergyOutOfRange { omega: line.omega_ev, cap: energy_cap_ev });
            }
            if !line.strength.is_finite() || line.strength < 0.0 {
                return Err(SpectraError::InvalidStrength(line.strength));
            }
        }
        Ok(Self { excitations, energy_cap_ev })
    }

    pub fn excitations(&self) -> &[Excitation] {
        &self.excitations
    }

    pub fn energy_cap_ev(&self) -> f64 {
        self.energy_cap_ev
    }

    pub fn len(&self) -> usize {
        self.excitations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excitations.is_empty()
    }

    /// Lines sorted by descending strength; equal strengths tie-break by
    /// ascending energy so the order is deterministic.
    pub fn by_descending_strength(&self) -> Vec<Excitation> {
        let mut sorted = self.excitations.clone();
        sorted.sort_by(|a, b| {
            b.strength
                .partial_cmp(&a.strength)
                .expect("strengths are finite by construction")
                .then(a.omega_ev.partial_cmp(&b.omega_ev).expect("energies are finite"))
        });
        sorted
    }
}

/// A broadened absorption profile sampled on an energy grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbsorptionProfile {
    pub energies_ev: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma_ev: f64,
}

/// Gaussian-broaden a spectrum onto `grid` with width `sigma_ev`.
///
/// Every line contributes to every grid point; nothing is windowed away, so
/// `broaden` is exactly linear in the line list.
pub fn broaden(
    spectrum: &ExcitationSpectrum,
    grid: &[f64],
    sigma_ev: f64,
) -> Result<AbsorptionProfile, SpectraError> {
    if spectrum.is_empty() {
        return Err(SpectraError::EmptySpectrum);
    }
    if !sigma_ev.is_finite() || sigma_ev <= 0.0 {
        return Err(SpectraError::InvalidSigma(sigma_ev));
    }
    validate_grid(grid)?;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma_ev * sigma_ev);
    let values = grid
        .iter()
        .map(|&e| {
            spectrum
                .excitations
                .iter()
                .map(|line| {
                    let d = e - line.omega_ev;
                    line.strength * (-d * d * inv_two_sigma_sq).exp()
                })
                .sum()
        })
        .collect();
    Ok(AbsorptionProfile { energies_ev: grid.to_vec(), values, sigma_ev })
}

fn validate_grid(grid: &[f64]) -> Result<(), SpectraError> {
    if grid.is_empty() || grid.iter().any(|e| !e.is_finite()) {
        return Err(SpectraError::InvalidGrid);
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SpectraError::InvalidGrid);
    }
    Ok(())
}

/// Trapezoidal integral of a profile over its own grid.
pub fn profile_integral(profile: &AbsorptionProfile) -> Result<f64, SpectraError> {
    let n = profile.energies_ev.len();
    if n < 2 {
        return Err(SpectraError::GridTooShort(n));
    }
    let mut total = 0.0;
    for i in 1..n {
        let h = profile.energies_ev[i] - profile.energies_ev[i - 1];
        total += 0.5 * h * (profile.values[i] + profile.values[i - 1]);
    }
    Ok(total)
}

/// Recover `(n, κ)` from the complex dielectric function `ε = ε₁ + iε₂`.
///
/// The principal branch is taken, so `κ ≥ 0`. The smaller of the two outputs
/// is computed as a quotient rather than through the textbook square root:
/// `√((|ε|−ε₁)/2)` cancels catastrophically when `ε₂ ≪ ε₁`, while
/// `κ = ε₂/(2n)` is algebraically identical and keeps the round trip back to
/// `ε` accurate at the 1e-12 level across the full dynamic range.
pub fn nk_from_dielectric(eps1: f64, eps2: f64) -> Result<(f64, f64), SpectraError> {
    if !eps1.is_finite() || !eps2.is_finite() {
        return Err(SpectraError::InvalidDielectric { eps1, eps2 });
    }
    let modulus = eps1.hypot(eps2);
    if eps2 == 0.0 {
        // Purely real dielectric: one of (n, κ) is exactly zero.
        return if eps1 >= 0.0 {
            Ok((eps1.sqrt(), 0.0))
        } else {
            Ok((0.0, (-eps1).sqrt()))
        };
    }
    if eps1 >= 0.0 {
        let n = ((modulus + eps1) / 2.0).sqrt();
        Ok((n, eps2.abs() / (2.0 * n)))
    } else {
        let kappa = ((modulus - eps1) / 2.0).sqrt();
        Ok((eps2.abs() / (2.0 * kappa), kappa))
    }
}

/// Forward closure: `(n, κ) → (ε₁, ε₂)`.
pub fn dielectric_from_nk(n: f64, kappa: f64) -> Result<(f64, f64), SpectraError> {
    if !n.is_finite() || !kappa.is_finite() || n <= 0.0 || kappa < 0.0 {
        return Err(SpectraError::InvalidIndex { n, kappa });
    }
    Ok((n * n - kappa * kappa, 2.0 * n * kappa))
}

/// Absorption coefficient `α = 4π κ E / (hc)` in cm⁻¹ for `E` in eV.
pub fn absorption_coefficient(kappa: f64, energy_ev: f64) -> Result<f64, SpectraError> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(SpectraError::InvalidKappa(kappa));
    }
    if !energy_ev.is_finite() || energy_ev <= 0.0 {
        return Err(SpectraError::InvalidEnergy(energy_ev));
    }
    Ok(4.0 * std::f64::consts::PI * kappa * energy_ev / HC_EV_CM)
}

/// One validated grid point of the descriptor table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OpticalRecord {
    pub energy_ev: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub n: f64,
    pub kappa: f64,
    pub alpha_cm1: f64,
    /// Class label: 0 = pristine, 1 = doped.
    pub label: u8,
}

impl OpticalRecord {
    /// Build a record from `(E, n, κ)`, deriving the dependent columns so the
    /// closure relations hold by construction.
    pub fn from_nk(energy_ev: f64, n: f64, kappa: f64, label: u8) -> Result<Self, SpectraError> {
        if !energy_ev.is_finite() || energy_ev <= 0.0 {
            return Err(SpectraError::InvalidEnergy(energy_ev));
        }
        let (eps1, eps2) = dielectric_from_nk(n, kappa)?;
        let alpha_cm1 = absorption_coefficient(kappa, energy_ev)?;
        Ok(Self { energy_ev, eps1, eps2, n, kappa, alpha_cm1, label })
    }

    /// Check the three closure relations at 1e-9 relative accuracy.
    pub fn is_consistent(&self) -> bool {
        let rel = |got: f64, want: f64| {
            let scale = want.abs().max(1e-300);
            (got - want).abs() / scale
        };
        rel(self.eps1, self.n * self.n - self.kappa * self.kappa) <= 1e-9
            && rel(self.eps2, 2.0 * self.n * self.kappa) <= 1e-9
            && rel(self.alpha_cm1, 4.0 * std::f64::consts::PI * self.kappa * self.energy_ev / HC_EV_CM)
                <= 1e-9
    }
}

/// Rank-paired differences between two spectra: entry `r` compares the
/// `r`-th strongest line of each system (`doped − pristine`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralDiff {
    pub delta_omega_ev: Vec<f64>,
    pub delta_strength: Vec<f64>,
}

/// Pair the `top_k` strongest lines of each spectrum by strength rank.
pub fn spectral_difference(
    doped: &ExcitationSpectrum,
    pristine: &ExcitationSpectrum,
    top_k: usize,
) -> Result<SpectralDiff, SpectraError> {
    let max = doped.len().min(pristine.len());
    if top_k == 0 || top_k > max {
        return Err(SpectraError::TopKOutOfRange { got: top_k, max });
    }
    let d = doped.by_descending_strength();
    let p = pristine.by_descending_strength();
    let mut delta_omega_ev = Vec::with_capacity(top_k);
    let mut delta_strength = Vec::with_capacity(top_k);
    for r in 0..top_k {
        delta_omega_ev.push(d[r].omega_ev - p[r].omega_ev);
        delta_strength.push(d[r].strength - p[r].strength);
    }
    Ok(SpectralDiff { delta_omega_ev, delta_strength })
}

/// Interior local maxima of a profile with height at least `min_height`,
/// sorted by descending height. A peak must be strictly higher than both
/// neighbours, so plateaus and endpoints never qualify.
pub fn find_peaks(profile: &AbsorptionProfile, min_height: f64) -> Vec<(f64, f64)> {
    let v = &profile.values;
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for i in 1..v.len().saturating_sub(1) {
        if v[i] > v[i - 1] && v[i] > v[i + 1] && v[i] >= min_height {
            peaks.push((profile.energies_ev[i], v[i]));
        }
    }
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite heights").then(a.0.partial_cmp(&b.0).unwrap()));
    peaks
}

/// Uniform grid of `points` energies covering `[lo, hi]` inclusive.
pub fn energy_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, SpectraError> {
    if points < 2 || !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(SpectraError::InvalidGrid);
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| lo + step * i as f64).collect())
}
