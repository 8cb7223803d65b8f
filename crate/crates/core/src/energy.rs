//! Per-mode reflection and transmission coefficients, scattered energy
//! flux and parameter sweeps of it.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NumericalError, Result};
use crate::model::SimulationConfig;
use crate::quasifreq::{det_root_quasifrequencies, floquet_quasifrequencies};
use crate::scattering::{solve, ExteriorCoefficients, ScatteringSolution};

pub const REGIME_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Gain,
    Conserve,
    Loss,
}

impl Regime {
    /// Classifies `energy` against `reference` with relative band
    /// [`REGIME_TOL`] (absolute when the reference vanishes).
    pub fn classify(energy: f64, reference: f64) -> Self {
        let band = REGIME_TOL * reference.max(1.0);
        if energy > reference + band {
            Regime::Gain
        } else if energy < reference - band {
            Regime::Loss
        } else {
            Regime::Conserve
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Gain => "gain",
            Regime::Conserve => "conserve",
            Regime::Loss => "loss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub n: i64,
    pub reflection: Complex64,
    pub transmission: Complex64,
    pub cross_section: f64,
    /// `omega + n Omega < 0`: counted in the flux as is, flagged here.
    pub negative_frequency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScatteringTable {
    pub omega: f64,
    /// Reference flux `|theta_1|^2`.
    pub reference: f64,
    pub modes: Vec<ModeEntry>,
    pub energy: f64,
    pub regime: Regime,
}

impl ModeScatteringTable {
    pub fn k(&self) -> usize {
        self.modes.len() / 2
    }

    pub fn mode(&self, n: i64) -> &ModeEntry {
        &self.modes[(n + self.k() as i64) as usize]
    }

    pub fn cross_section(&self, n: i64) -> f64 {
        self.mode(n).cross_section
    }

    pub fn has_negative_frequency_modes(&self) -> bool {
        self.modes.iter().any(|m| m.negative_frequency && m.cross_section > 0.0)
    }

    pub fn from_solution(sol: &ScatteringSolution) -> Self {
        let theta = sol.cfg.incident.left_amplitude();
        mode_table(&sol.exterior, theta, sol.omega.re, sol.cfg.omega_mod())
    }
}

/// `R_n = beta_n^0`, `T_n = alpha_n^N`, `E = sum_n |R_n|^2 + |T_n|^2`.
pub fn mode_table(ext: &ExteriorCoefficients, theta: Complex64, omega: f64, omega_mod: f64) -> ModeScatteringTable {
    let kk = ext.k as i64;
    let modes: Vec<ModeEntry> = (-kk..=kk)
        .map(|n| {
            let reflection = ext.reflection(n);
            let transmission = ext.transmission(n);
            ModeEntry {
                n,
                reflection,
                transmission,
                cross_section: reflection.norm_sqr() + transmission.norm_sqr(),
                negative_frequency: omega + n as f64 * omega_mod < 0.0,
            }
        })
        .collect();
    let energy = modes.iter().map(|m| m.cross_section).sum();
    let reference = theta.norm_sqr();
    ModeScatteringTable { omega, reference, modes, energy, regime: Regime::classify(energy, reference) }
}

/// Solves at the configured operating frequency and tabulates the modes.
pub fn scatter_table(cfg: &SimulationConfig) -> Result<ModeScatteringTable> {
    let sol = solve(cfg, Complex64::new(cfg.incident.omega, 0.0))?;
    Ok(ModeScatteringTable::from_solution(&sol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Eps,
    Omega,
    Length,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Eps => "eps",
            SweepAxis::Omega => "omega",
            SweepAxis::Length => "length",
        }
    }

    /// Configuration for one grid value.
    pub fn apply(&self, cfg: &SimulationConfig, value: f64) -> Result<SimulationConfig> {
        Ok(match self {
            SweepAxis::Eps => cfg.with_amplitude(value)?,
            SweepAxis::Omega => cfg.with_omega(value),
            SweepAxis::Length => cfg.with_length(value)?,
        })
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "eps" => Ok(SweepAxis::Eps),
            "omega" => Ok(SweepAxis::Omega),
            "length" => Ok(SweepAxis::Length),
            other => Err(format!("unknown axis {other:?} (expected eps, omega or length)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub table: Option<ModeScatteringTable>,
    pub error: Option<String>,
    /// Nearest quasifrequency marker (omega sweeps only).
    pub nearest_marker: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergySweep {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    /// `Re(omega_j) + m Omega` inside the swept range (omega sweeps only).
    pub markers: Vec<f64>,
}

impl EnergySweep {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Real parts of the quasifrequencies, shifted by multiples of `Omega` to
/// cover `[lo, hi]`, sorted.
pub fn quasifrequency_markers(cfg: &SimulationConfig, lo: f64, hi: f64) -> Result<Vec<f64>> {
    let floquet = floquet_quasifrequencies(cfg)?;
    let values = match det_root_quasifrequencies(cfg, &floquet.values) {
        Ok(r) if r.set.values.len() == floquet.values.len() => r.set.values,
        _ => floquet.values,
    };
    let om = cfg.omega_mod();
    let mut markers = Vec::new();
    for w in values {
        let first = ((lo - w.re) / om).ceil() as i64;
        let last = ((hi - w.re) / om).floor() as i64;
        markers.extend((first..=last).map(|m| w.re + m as f64 * om));
    }
    markers.sort_by(f64::total_cmp);
    markers.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(markers)
}

/// One scattering solve per grid value, in parallel; rows keep grid order
/// and carry their own failures.
pub fn energy_sweep(cfg: &SimulationConfig, axis: SweepAxis, grid: &[f64]) -> Result<EnergySweep> {
    if grid.is_empty() {
        return Err(NumericalError::Empty("sweep grid").into());
    }
    let configs: Vec<SimulationConfig> = grid.iter().map(|&v| axis.apply(cfg, v)).collect::<Result<_>>()?;
    let markers = if axis == SweepAxis::Omega {
        let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        quasifrequency_markers(cfg, lo, hi)?
    } else {
        Vec::new()
    };
    let rows = grid
        .par_iter()
        .zip(configs.par_iter())
        .map(|(&value, c)| {
            let nearest_marker = markers.iter().cloned().min_by(|a, b| (a - value).abs().total_cmp(&(b - value).abs()));
            match scatter_table(c) {
                Ok(table) => SweepRow { value, table: Some(table), error: None, nearest_marker },
                Err(e) => {
                    log::warn!("{} = {value}: {e}", axis.as_str());
                    SweepRow { value, table: None, error: Some(e.to_string()), nearest_marker }
                }
            }
        })
        .collect();
    Ok(EnergySweep { axis, rows, markers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn regime_thresholds() {
        assert_eq!(Regime::classify(1.0 + 2e-6, 1.0), Regime::Gain);
        assert_eq!(Regime::classify(1.0 - 2e-6, 1.0), Regime::Loss);
        assert_eq!(Regime::classify(1.0 + 5e-7, 1.0), Regime::Conserve);
        assert_eq!(Regime::classify(0.0, 0.0), Regime::Conserve);
    }

    #[test]
    fn static_single_conserves() {
        let table = scatter_table(&SimulationConfig::standard(1, 0.0, 0.0035).unwrap()).unwrap();
        assert!((table.energy - 1.0).abs() < 1e-8);
        assert_eq!(table.regime, Regime::Conserve);
        assert_eq!(table.modes.len(), 9);
        let sum: f64 = table.modes.iter().map(|m| m.cross_section).sum();
        assert_eq!(sum, table.energy);
        assert!(table.mode(-1).negative_frequency && !table.mode(0).negative_frequency);
    }

    #[test]
    fn amplitude_two_scales_energy_by_four() {
        let cfg = SimulationConfig::standard(2, 0.5, 0.004).unwrap();
        let mut doubled = cfg.clone();
        doubled.incident.theta_left = Complex64::new(2.0, 0.0);
        let a = scatter_table(&cfg).unwrap();
        let b = scatter_table(&doubled).unwrap();
        assert_relative_eq!(b.energy, 4.0 * a.energy, max_relative = 1e-10);
        assert_eq!(b.reference, 4.0);
    }

    #[test]
    fn sweep_keeps_order_and_records_markers() {
        let cfg = SimulationConfig::standard(2, 0.3, 0.004).unwrap();
        let grid = [0.002, 0.003, 0.0035, 0.005];
        let sweep = energy_sweep(&cfg, SweepAxis::Omega, &grid).unwrap();
        assert_eq!(sweep.rows.iter().map(|r| r.value).collect::<Vec<_>>(), grid);
        assert!(!sweep.markers.is_empty());
        assert!(sweep.markers.iter().all(|m| (0.002 - 1e-12..=0.005 + 1e-12).contains(m)));
        assert!(sweep.rows.iter().all(|r| r.nearest_marker.is_some()));
        assert_eq!(sweep.failures(), 0);
    }

    #[test]
    fn sweep_rejects_invalid_axis_values() {
        let cfg = SimulationConfig::standard(1, 0.3, 0.004).unwrap();
        assert!(energy_sweep(&cfg, SweepAxis::Eps, &[0.2, 1.0]).is_err());
        assert!(energy_sweep(&cfg, SweepAxis::Eps, &[]).is_err());
        assert!(energy_sweep(&cfg, SweepAxis::Length, &[-1.0]).is_err());
    }

    #[test]
    fn failing_point_is_recorded_in_row() {
        // gap of length 10 resonates for k = pi / 10 in the n = 0 mode
        let cfg = SimulationConfig::standard(2, 0.3, 0.004).unwrap();
        let grid = [std::f64::consts::PI / 10.0, 0.004];
        let sweep = energy_sweep(&cfg, SweepAxis::Omega, &grid).unwrap();
        assert!(sweep.rows[0].error.is_some());
        assert!(sweep.rows[1].table.is_some());
        assert_eq!(sweep.failures(), 1);
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("eps".parse::<SweepAxis>().unwrap(), SweepAxis::Eps);
        assert!("time".parse::<SweepAxis>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn static_energy_is_conserved(omega in 0.0005f64..0.014, n in 1usize..4) {
            let table = scatter_table(&SimulationConfig::standard(n, 0.0, omega).unwrap()).unwrap();
            prop_assert!((table.energy - 1.0).abs() < 1e-8);
            prop_assert!(table.modes.iter().all(|m| m.cross_section >= 0.0));
        }

        #[test]
        fn energy_scales_with_amplitude(re in -3.0f64..3.0, im in -3.0f64..3.0, eps in 0.0f64..0.9) {
            let theta = Complex64::new(re, im);
            prop_assume!(theta.norm() > 1e-2);
            let cfg = SimulationConfig::standard(1, eps, 0.0041).unwrap();
            let mut scaled = cfg.clone();
            scaled.incident.theta_left = theta;
            let a = scatter_table(&cfg).unwrap();
            let b = scatter_table(&scaled).unwrap();
            prop_assert!((b.energy - theta.norm_sqr() * a.energy).abs() <= 1e-9 * b.energy.max(1e-30));
        }
    }
}
