//! Scenario files: TOML with angles in degrees, SNR in dB and frequencies in
//! GHz / kHz. A file describes one [`Scenario`] plus optional `[sweep]` and
//! `[detection]` tables.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::channel::{Waveform, WaveformMode};
use crate::detection::{DetectionConfig, EstimateMode, ThresholdMode};
use crate::error::{Error, Result};
use crate::geometry::{ArrayLayout, Orientation, Pose, UpaGeometry, Vec3};
use crate::scenario::{ReceiverNode, Ris, Scenario, SnrSpec, Transmitter};

fn default_carrier() -> f64 {
    28.0
}
fn default_one() -> f64 {
    1.0
}
fn default_instants() -> usize {
    2
}
fn default_spacing() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformSpec {
    #[serde(default = "default_carrier")]
    pub carrier_ghz: f64,
    #[serde(default = "default_mode")]
    pub mode: WaveformMode,
    #[serde(default = "default_subcarriers")]
    pub subcarriers: usize,
    #[serde(default)]
    pub subcarrier_spacing_khz: f64,
    #[serde(default = "default_one")]
    pub tx_power_w: f64,
}

fn default_mode() -> WaveformMode {
    WaveformMode::Ofdm
}
fn default_subcarriers() -> usize {
    1
}

/// Exactly one of the three fields must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrSpecFile {
    pub per_antenna_db: Option<f64>,
    pub element_db: Option<f64>,
    /// `[re, im]`.
    pub gain: Option<[f64; 2]>,
}

impl SnrSpecFile {
    pub fn resolve(&self) -> Result<SnrSpec> {
        match (self.per_antenna_db, self.element_db, self.gain) {
            (Some(db), None, None) => Ok(SnrSpec::PerAntennaDb(db)),
            (None, Some(db), None) => Ok(SnrSpec::ElementDb(db)),
            (None, None, Some([re, im])) => Ok(SnrSpec::Gain { re, im }),
            _ => Err(Error::Config("[snr] needs exactly one of per_antenna_db, element_db, gain".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySpec {
    /// `[n_az, n_el]`.
    pub size: [usize; 2],
    #[serde(default)]
    pub layout: ArrayLayout,
    /// Element spacing in wavelengths.
    #[serde(default = "default_spacing")]
    pub spacing_wavelengths: f64,
}

impl ArraySpec {
    pub fn square(n: usize, layout: ArrayLayout) -> Self {
        Self { size: [n, n], layout, spacing_wavelengths: 0.5 }
    }

    fn build(&self, wavelength: f64) -> Result<UpaGeometry> {
        UpaGeometry::new(self.size[0], self.size[1], self.spacing_wavelengths * wavelength, self.layout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxSpec {
    pub position: [f64; 3],
    pub array: ArraySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RisSpec {
    pub position: [f64; 3],
    /// `[alpha_x, alpha_z]` in degrees.
    #[serde(default)]
    pub orientation_deg: [f64; 2],
    /// Placement the phases are designed for; defaults to the actual one.
    pub design_position: Option<[f64; 3]>,
    pub design_orientation_deg: Option<[f64; 2]>,
    pub array: ArraySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RxSpec {
    pub position: [f64; 3],
    pub design_position: Option<[f64; 3]>,
    pub array: ArraySpec,
    /// Isotropic self-positioning error standard deviation (m).
    pub self_error_std_m: Option<f64>,
    /// Full self-positioning error covariance (m^2).
    pub error_cov_m2: Option<[[f64; 3]; 3]>,
}

impl RxSpec {
    pub fn anchor(position: Vec3, array: ArraySpec) -> Self {
        Self { position: position.into(), design_position: None, array, self_error_std_m: None, error_cov_m2: None }
    }

    fn error_cov(&self) -> Result<Matrix3<f64>> {
        match (self.self_error_std_m, self.error_cov_m2) {
            (Some(_), Some(_)) => Err(Error::Config("set only one of self_error_std_m and error_cov_m2".into())),
            (Some(s), None) if s >= 0.0 => Ok(Matrix3::identity() * (s * s)),
            (Some(s), None) => Err(Error::Config(format!("self_error_std_m must be >= 0, got {s}"))),
            (None, Some(q)) => Ok(Matrix3::from_fn(|i, j| q[i][j])),
            (None, None) => Ok(Matrix3::zeros()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSpec {
    Chi2,
    MonteCarlo,
    DisplacementM(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSpec {
    #[serde(default = "default_p_fa")]
    pub p_fa: f64,
    #[serde(default = "default_threshold")]
    pub threshold: ThresholdSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_deformation")]
    pub deformation_m: [f64; 3],
    #[serde(default = "default_half")]
    pub prior_u: f64,
    #[serde(default = "default_half")]
    pub prior_d: f64,
    #[serde(default = "default_estimate")]
    pub estimate: EstimateMode,
}

fn default_p_fa() -> f64 {
    1e-2
}
fn default_threshold() -> ThresholdSpec {
    ThresholdSpec::Chi2
}
fn default_trials() -> usize {
    1000
}
fn default_deformation() -> [f64; 3] {
    [0.0, 0.0, -1e-3]
}
fn default_half() -> f64 {
    0.5
}
fn default_estimate() -> EstimateMode {
    EstimateMode::Bound
}

impl Default for DetectionSpec {
    fn default() -> Self {
        Self {
            p_fa: default_p_fa(),
            threshold: default_threshold(),
            trials: default_trials(),
            deformation_m: default_deformation(),
            prior_u: 0.5,
            prior_d: 0.5,
            estimate: default_estimate(),
        }
    }
}

impl DetectionSpec {
    pub fn resolve(&self) -> Result<DetectionConfig> {
        let c = DetectionConfig {
            p_fa: self.p_fa,
            threshold_mode: match self.threshold {
                ThresholdSpec::Chi2 => ThresholdMode::Chi2Analytic,
                ThresholdSpec::MonteCarlo => ThresholdMode::MonteCarlo,
                ThresholdSpec::DisplacementM(k) => ThresholdMode::Displacement(k),
            },
            trials: self.trials,
            deformation: Vec3::from(self.deformation_m),
            prior_u: self.prior_u,
            prior_d: self.prior_d,
            estimate_mode: self.estimate,
        };
        c.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub waveform: WaveformSpec,
    pub snr: SnrSpecFile,
    pub tx: TxSpec,
    pub ris: RisSpec,
    pub receivers: Vec<RxSpec>,
    #[serde(default = "default_instants")]
    pub instants: usize,
    #[serde(default = "default_one")]
    pub noise_var: f64,
    #[serde(default)]
    pub gain_phase_deg: f64,
    #[serde(default)]
    pub seed: u64,
    pub detection: Option<DetectionSpec>,
    /// Runner parameters; their schema depends on the experiment.
    pub sweep: Option<toml::Table>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        let w = &self.waveform;
        let waveform = Waveform {
            carrier_hz: w.carrier_ghz * 1e9,
            mode: w.mode,
            n_subcarriers: w.subcarriers,
            subcarrier_spacing_hz: w.subcarrier_spacing_khz * 1e3,
            tx_power: w.tx_power_w,
        };
        waveform.validate().map_err(|e| Error::Config(e.to_string()))?;
        let l = waveform.wavelength();
        let cfg = |e: Error| Error::Config(e.to_string());
        let pose = |p: [f64; 3], o: [f64; 2]| Pose::new(Vec3::from(p), Orientation::new(o[0].to_radians(), o[1].to_radians()));
        let ris_pose = pose(self.ris.position, self.ris.orientation_deg);
        let design_pose = pose(
            self.ris.design_position.unwrap_or(self.ris.position),
            self.ris.design_orientation_deg.unwrap_or(self.ris.orientation_deg),
        );
        let mut ris = Ris::new(ris_pose, self.ris.array.build(l).map_err(cfg)?);
        ris.design_pose = design_pose;
        let receivers = self
            .receivers
            .iter()
            .map(|r| {
                let mut node = ReceiverNode::anchor(Vec3::from(r.position), r.array.build(l).map_err(cfg)?);
                node.design_position = Vec3::from(r.design_position.unwrap_or(r.position));
                Ok(node.with_error(r.error_cov()?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut s = Scenario::new(
            Transmitter { position: Vec3::from(self.tx.position), array: self.tx.array.build(l).map_err(cfg)? },
            ris,
            receivers,
            waveform,
            self.snr.resolve()?,
        );
        s.instants = self.instants;
        s.noise_var = self.noise_var;
        s.gain_phase = self.gain_phase_deg.to_radians();
        s.seed = self.seed;
        s.validate().map_err(cfg)?;
        Ok(s)
    }

    /// Runner parameters from the `[sweep]` table, defaults for missing keys.
    pub fn sweep_params<P: for<'de> Deserialize<'de> + Default>(&self) -> Result<P> {
        match &self.sweep {
            None => Ok(P::default()),
            Some(t) => t.clone().try_into().map_err(|e: toml::de::Error| Error::Config(format!("[sweep]: {e}"))),
        }
    }

    pub fn detection_config(&self) -> Result<DetectionConfig> {
        self.detection.clone().unwrap_or_default().resolve()
    }
}

/// Canonical scenario of each experiment, as shipped in `scenarios/`.
pub fn canonical(experiment: &str) -> Option<&'static str> {
    Some(match experiment {
        "fig4" => include_str!("../../scenarios/fig4.toml"),
        "fig5" => include_str!("../../scenarios/fig5.toml"),
        "fig6" => include_str!("../../scenarios/fig6.toml"),
        "deploy" => include_str!("../../scenarios/deploy.toml"),
        "selferr" => include_str!("../../scenarios/selferr.toml"),
        "detect9" => include_str!("../../scenarios/detect9.toml"),
        "detect10" => include_str!("../../scenarios/detect10.toml"),
        "rmse7" => include_str!("../../scenarios/rmse7.toml"),
        _ => return None,
    })
}
