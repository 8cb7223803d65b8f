//! Physical configuration, geometry, truncation and the JSON configuration
//! document.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::modulation::{ModulationEntry, ModulationProfile, ModulationShape};

/// Material parameters inside (`_in`) and outside (`_out`) the resonators,
/// together with the derived contrast and wave speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub rho_out: f64,
    pub rho_in: f64,
    pub kappa_out: f64,
    pub kappa_in: f64,
    pub delta: f64,
    pub v_out: f64,
    pub v_in: f64,
}

impl PhysicalParams {
    pub fn new(rho_out: f64, rho_in: f64, kappa_out: f64, kappa_in: f64) -> Result<Self, ConfigError> {
        for (name, value) in
            [("rho_out", rho_out), ("rho_in", rho_in), ("kappa_out", kappa_out), ("kappa_in", kappa_in)]
        {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        let delta = rho_in / rho_out;
        if !(delta > 0.0 && delta < 1.0) {
            log::warn!("contrast delta = {delta} lies outside the subwavelength regime (0, 1)");
        }
        Ok(Self {
            rho_out,
            rho_in,
            kappa_out,
            kappa_in,
            delta,
            v_out: (kappa_out / rho_out).sqrt(),
            v_in: (kappa_in / rho_in).sqrt(),
        })
    }

    /// Parameters with unit exterior density and the given contrast and
    /// wave speeds.
    pub fn from_contrast(delta: f64, v_out: f64, v_in: f64) -> Result<Self, ConfigError> {
        Self::new(1.0, delta, v_out * v_out, delta * v_in * v_in)
    }

    /// `rho_in / (delta kappa_in)`, the prefactor of the interior inertia
    /// term in the capacitance ODE.
    pub fn interior_prefactor(&self) -> f64 {
        self.rho_in / (self.delta * self.kappa_in)
    }
}

/// Ordered boundary points `x_1^- < x_1^+ < x_2^- < ... < x_N^+`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonatorArray {
    boundaries: Vec<f64>,
}

impl ResonatorArray {
    pub fn new(boundaries: Vec<f64>) -> Result<Self, ConfigError> {
        if boundaries.is_empty() || boundaries.len() % 2 != 0 {
            return Err(ConfigError::BoundaryCount(boundaries.len()));
        }
        if let Some(bad) = boundaries.iter().find(|x| !x.is_finite()) {
            return Err(ConfigError::Malformed(format!("boundary point {bad} is not finite")));
        }
        for (index, pair) in boundaries.windows(2).enumerate() {
            if pair[0] >= pair[1] {
                return Err(ConfigError::Ordering { index, left: pair[0], right: pair[1] });
            }
        }
        Ok(Self { boundaries })
    }

    pub fn len(&self) -> usize {
        self.boundaries.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// `x_i^-` (0-based `i`).
    pub fn left(&self, i: usize) -> f64 {
        self.boundaries[2 * i]
    }

    /// `x_i^+` (0-based `i`).
    pub fn right(&self, i: usize) -> f64 {
        self.boundaries[2 * i + 1]
    }

    pub fn length(&self, i: usize) -> f64 {
        self.right(i) - self.left(i)
    }

    pub fn lengths(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.length(i)).collect()
    }

    /// Gap between resonator `i` and `i + 1` (0-based).
    pub fn gap(&self, i: usize) -> f64 {
        self.left(i + 1) - self.right(i)
    }

    pub fn gaps(&self) -> Vec<f64> {
        (0..self.len().saturating_sub(1)).map(|i| self.gap(i)).collect()
    }

    /// Index of the resonator containing `x` in its open interior.
    pub fn resonator_containing(&self, x: f64) -> Option<usize> {
        (0..self.len()).find(|&i| x > self.left(i) && x < self.right(i))
    }

    /// Same gaps and origin, every resonator resized to `length`.
    pub fn with_uniform_length(&self, length: f64) -> Result<Self, ConfigError> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(ConfigError::NonPositive { name: "length", value: length });
        }
        let mut boundaries = Vec::with_capacity(self.boundaries.len());
        let mut x = self.left(0);
        for i in 0..self.len() {
            boundaries.push(x);
            x += length;
            boundaries.push(x);
            if i + 1 < self.len() {
                x += self.gap(i);
            }
        }
        Self::new(boundaries)
    }
}

/// Equally sized, equally spaced resonators starting at `origin`.
pub fn uniform_array(n: usize, length: f64, gap: f64, origin: f64) -> Result<ResonatorArray, ConfigError> {
    if n == 0 {
        return Err(ConfigError::BoundaryCount(0));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(ConfigError::NonPositive { name: "length", value: length });
    }
    if n > 1 && !(gap > 0.0 && gap.is_finite()) {
        return Err(ConfigError::NonPositive { name: "gap", value: gap });
    }
    let mut boundaries = Vec::with_capacity(2 * n);
    let mut x = origin;
    for i in 0..n {
        boundaries.push(x);
        x += length;
        boundaries.push(x);
        if i + 1 < n {
            x += gap;
        }
    }
    ResonatorArray::new(boundaries)
}

/// Fourier cutoffs: modes `n in [-k, k]`, modulation band `m in [-m, m]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    pub k: usize,
    pub m: usize,
}

impl Truncation {
    pub fn new(k: usize, m: usize) -> Result<Self, ConfigError> {
        if k < m {
            return Err(ConfigError::Truncation { k, m });
        }
        Ok(Self { k, m })
    }

    /// Number of retained modes, `2K + 1`.
    pub fn modes(&self) -> usize {
        2 * self.k + 1
    }

    pub fn mode_range(&self) -> std::ops::RangeInclusive<i64> {
        -(self.k as i64)..=self.k as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Both,
}

/// Plane-wave incidence: `theta_left e^{i(kx - wt)}` on `x < x_1^-` and/or
/// `theta_right e^{i(-kx - wt)}` on `x > x_N^+`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncidentSpec {
    pub direction: Direction,
    pub theta_left: Complex64,
    pub theta_right: Complex64,
    pub omega: f64,
}

impl IncidentSpec {
    pub fn left(theta: Complex64, omega: f64) -> Self {
        Self { direction: Direction::Left, theta_left: theta, theta_right: Complex64::new(0.0, 0.0), omega }
    }

    pub fn right(theta: Complex64, omega: f64) -> Self {
        Self { direction: Direction::Right, theta_left: Complex64::new(0.0, 0.0), theta_right: theta, omega }
    }

    /// Amplitude on the left support (zero unless incidence includes left).
    pub fn left_amplitude(&self) -> Complex64 {
        match self.direction {
            Direction::Left | Direction::Both => self.theta_left,
            Direction::Right => Complex64::new(0.0, 0.0),
        }
    }

    pub fn right_amplitude(&self) -> Complex64 {
        match self.direction {
            Direction::Right | Direction::Both => self.theta_right,
            Direction::Left => Complex64::new(0.0, 0.0),
        }
    }

    /// Total incident flux `|theta_1|^2 + |theta_2|^2`.
    pub fn flux(&self) -> f64 {
        self.left_amplitude().norm_sqr() + self.right_amplitude().norm_sqr()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub params: PhysicalParams,
    pub array: ResonatorArray,
    pub modulation: ModulationProfile,
    pub truncation: Truncation,
    pub incident: IncidentSpec,
}

impl SimulationConfig {
    pub fn new(
        params: PhysicalParams,
        array: ResonatorArray,
        modulation: ModulationProfile,
        truncation: Truncation,
        incident: IncidentSpec,
    ) -> Result<Self, ConfigError> {
        if modulation.len() != array.len() {
            return Err(ConfigError::Length {
                what: "modulation entries",
                got: modulation.len(),
                expected: array.len(),
            });
        }
        if modulation.max_order() > truncation.m {
            return Err(ConfigError::Truncation { k: truncation.k, m: modulation.max_order() });
        }
        let ratio = modulation.omega() / params.delta.sqrt();
        if !(0.1..=10.0).contains(&ratio) {
            log::warn!("Omega / sqrt(delta) = {ratio:.3} is outside [0.1, 10]; asymptotic regime may not apply");
        }
        Ok(Self { params, array, modulation, truncation, incident })
    }

    /// The standard experiment: `delta = 1e-4`, `v_r = v_0 = 1`,
    /// `Omega = 0.03`, `K = 4`, resonators of length 2 spaced by 10, cosine
    /// modulation of amplitude `eps` with phases `pi / i`, unit left
    /// incidence at `omega`.
    pub fn standard(n: usize, eps: f64, omega: f64) -> Result<Self, ConfigError> {
        Self::new(
            PhysicalParams::from_contrast(1e-4, 1.0, 1.0)?,
            uniform_array(n, 2.0, 10.0, 0.0)?,
            ModulationProfile::uniform_cosine(0.03, n, eps)?,
            Truncation::new(4, 1)?,
            IncidentSpec::left(Complex64::new(1.0, 0.0), omega),
        )
    }

    pub fn n(&self) -> usize {
        self.array.len()
    }

    pub fn delta(&self) -> f64 {
        self.params.delta
    }

    pub fn omega_mod(&self) -> f64 {
        self.modulation.omega()
    }

    pub fn with_amplitude(&self, eps: f64) -> Result<Self, ConfigError> {
        Self::new(self.params, self.array.clone(), self.modulation.with_amplitude(eps)?, self.truncation, self.incident)
    }

    pub fn with_k(&self, k: usize) -> Result<Self, ConfigError> {
        Self::new(
            self.params,
            self.array.clone(),
            self.modulation.clone(),
            Truncation::new(k, self.truncation.m)?,
            self.incident,
        )
    }

    pub fn with_length(&self, length: f64) -> Result<Self, ConfigError> {
        Self::new(
            self.params,
            self.array.with_uniform_length(length)?,
            self.modulation.clone(),
            self.truncation,
            self.incident,
        )
    }

    pub fn with_omega(&self, omega: f64) -> Self {
        let mut out = self.clone();
        out.incident.omega = omega;
        out
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let doc: ConfigDocument =
            serde_json::from_str(text).map_err(|e| ConfigError::Malformed(e.to_string()))?;
        build_config(&doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("configuration documents always serialize")
    }

    /// Document form with explicit boundaries.
    pub fn to_document(&self) -> ConfigDocument {
        ConfigDocument {
            physical: PhysicalDoc {
                rho_out: self.params.rho_out,
                rho_in: self.params.rho_in,
                kappa_out: self.params.kappa_out,
                kappa_in: self.params.kappa_in,
            },
            geometry: GeometryDoc { boundaries: Some(self.array.boundaries().to_vec()), uniform: None },
            modulation: ModulationDoc {
                omega: self.modulation.omega(),
                entries: self
                    .modulation
                    .entries()
                    .iter()
                    .map(|e| match &e.shape {
                        ModulationShape::Cosine { eps, phi } => EntryDoc::Cosine { eps: *eps, phi: *phi },
                        ModulationShape::Fourier { half } => {
                            EntryDoc::Fourier { fourier: half.iter().map(|c| ComplexDoc::Pair([c.re, c.im])).collect() }
                        }
                    })
                    .collect(),
            },
            truncation: TruncationDoc { k: self.truncation.k, m: self.truncation.m },
            incident: IncidentDoc {
                direction: self.incident.direction,
                theta1: Some(ComplexDoc::Pair([self.incident.theta_left.re, self.incident.theta_left.im])),
                theta2: Some(ComplexDoc::Pair([self.incident.theta_right.re, self.incident.theta_right.im])),
                omega: self.incident.omega,
            },
        }
    }
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub physical: PhysicalDoc,
    pub geometry: GeometryDoc,
    pub modulation: ModulationDoc,
    pub truncation: TruncationDoc,
    pub incident: IncidentDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalDoc {
    pub rho_out: f64,
    pub rho_in: f64,
    pub kappa_out: f64,
    pub kappa_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<UniformDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformDoc {
    pub n: usize,
    pub length: f64,
    #[serde(default)]
    pub gap: f64,
    #[serde(default)]
    pub origin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationDoc {
    pub omega: f64,
    pub entries: Vec<EntryDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum EntryDoc {
    Cosine { eps: f64, phi: f64 },
    /// `k_0, k_1, ..., k_M` of `1/kappa`.
    Fourier { fourier: Vec<ComplexDoc> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexDoc {
    Real(f64),
    Pair([f64; 2]),
}

impl From<ComplexDoc> for Complex64 {
    fn from(c: ComplexDoc) -> Self {
        match c {
            ComplexDoc::Real(re) => Complex64::new(re, 0.0),
            ComplexDoc::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationDoc {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidentDoc {
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1: Option<ComplexDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2: Option<ComplexDoc>,
    pub omega: f64,
}

/// Validates a parsed document and derives every dependent quantity.
pub fn build_config(doc: &ConfigDocument) -> Result<SimulationConfig, ConfigError> {
    let p = &doc.physical;
    let params = PhysicalParams::new(p.rho_out, p.rho_in, p.kappa_out, p.kappa_in)?;

    let array = match (&doc.geometry.boundaries, &doc.geometry.uniform) {
        (Some(b), None) => ResonatorArray::new(b.clone())?,
        (None, Some(u)) => uniform_array(u.n, u.length, u.gap, u.origin)?,
        _ => {
            return Err(ConfigError::Malformed(
                "geometry needs exactly one of `boundaries` or `uniform`".into(),
            ))
        }
    };

    if doc.modulation.entries.len() != array.len() {
        return Err(ConfigError::Length {
            what: "modulation entries",
            got: doc.modulation.entries.len(),
            expected: array.len(),
        });
    }
    let entries = doc
        .modulation
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| match e {
            EntryDoc::Cosine { eps, phi } => ModulationEntry::cosine(*eps, *phi),
            EntryDoc::Fourier { fourier } => {
                ModulationEntry::fourier(i, fourier.iter().map(|&c| c.into()).collect())
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let modulation = ModulationProfile::new(doc.modulation.omega, entries)?;

    let truncation = Truncation::new(doc.truncation.k, doc.truncation.m)?;

    let inc = &doc.incident;
    if !inc.omega.is_finite() {
        return Err(ConfigError::Malformed(format!("incident omega must be finite, got {}", inc.omega)));
    }
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let (default_left, default_right) = match inc.direction {
        Direction::Left => (one, zero),
        Direction::Right => (zero, one),
        Direction::Both => (one, one),
    };
    let incident = IncidentSpec {
        direction: inc.direction,
        theta_left: inc.theta1.map_or(default_left, Into::into),
        theta_right: inc.theta2.map_or(default_right, Into::into),
        omega: inc.omega,
    };

    SimulationConfig::new(params, array, modulation, truncation, incident)
}
