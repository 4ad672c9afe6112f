//! Monte Carlo experiments: specs, result records, the sweep runner and
//! result files.

pub mod io;
pub mod metrics;
pub mod overhead;
pub mod sweep;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::baselines::LrConfig;
use crate::channel::{GainModel, SystemDims};
use crate::error::{Error, Result};
use crate::mf::MfConfig;
use crate::signal::ScheduleKind;

pub use io::{read_results, write_results, Format};
pub use metrics::{nmse, nmse_multi, spectral_efficiency, BeamDesign, SeMode};
pub use overhead::{overhead_table, OverheadRow};
pub use sweep::{run_sweep, run_sweep_with_threads, trial_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SingleUserDownlink,
    MultiUserUplink,
    OverheadTable,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::SingleUserDownlink => "single_user_downlink",
            ScenarioKind::MultiUserUplink => "multi_user_uplink",
            ScenarioKind::OverheadTable => "overhead_table",
        }
    }

    fn tag(self) -> u64 {
        match self {
            ScenarioKind::SingleUserDownlink => 1,
            ScenarioKind::MultiUserUplink => 2,
            ScenarioKind::OverheadTable => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorId {
    #[serde(rename = "MF_AM")]
    MfAm,
    #[serde(rename = "MF_GD")]
    MfGd,
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "LR")]
    Lr,
    /// Two-stage uplink estimator.
    #[serde(rename = "MF_UL")]
    MfUl,
}

impl EstimatorId {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::MfAm => "MF_AM",
            EstimatorId::MfGd => "MF_GD",
            EstimatorId::Ls => "LS",
            EstimatorId::Lr => "LR",
            EstimatorId::MfUl => "MF_UL",
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Estimator labels for the spectral-efficiency reference rows.
pub const SE_RANDOM: &str = "RANDOM";
pub const SE_OPTIMAL: &str = "OPTIMAL";

/// Full description of a sweep. Missing JSON fields take the defaults of
/// [`ExperimentSpec::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioKind,
    /// `k_pilots` is ignored; the sweep uses `k_grid`.
    pub dims: SystemDims,
    pub snr_grid_db: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub estimators: Vec<EstimatorId>,
    pub n_trials: usize,
    pub master_seed: u64,
    pub schedule_kind: ScheduleKind,
    /// Distribution of the BS-RIS path gain.
    pub gain_model: GainModel,
    /// Observe without noise. The SNR grid still labels the rows and sets
    /// the noise level used for spectral efficiency.
    pub noiseless: bool,
    /// Uplink only: give the second stage the true angle.
    pub inject_true_psi: bool,
    /// Downlink only: fill the `se` column.
    pub spectral_efficiency: bool,
    /// Add `RANDOM` and `OPTIMAL` rows with reference spectral efficiencies.
    pub se_benchmarks: bool,
    /// Record wall time per estimate. Off by default so that output files
    /// are reproducible byte for byte.
    pub record_timing: bool,
    pub mf_am: MfConfig,
    pub mf_gd: MfConfig,
    pub lr: LrConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::single_user_default()
    }
}

impl ExperimentSpec {
    /// Downlink NMSE sweep with `N = 32`, `M = 50`.
    pub fn single_user_default() -> Self {
        Self {
            scenario: ScenarioKind::SingleUserDownlink,
            dims: SystemDims::single_user(32, 50, 400),
            snr_grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            k_grid: vec![400],
            estimators: vec![EstimatorId::MfAm, EstimatorId::MfGd, EstimatorId::Lr, EstimatorId::Ls],
            n_trials: 200,
            master_seed: 0,
            schedule_kind: ScheduleKind::Random,
            gain_model: GainModel::default(),
            noiseless: false,
            inject_true_psi: false,
            spectral_efficiency: false,
            se_benchmarks: false,
            record_timing: false,
            mf_am: MfConfig::am(),
            mf_gd: MfConfig::gd(),
            lr: LrConfig::default(),
        }
    }

    /// Uplink NMSE-versus-K sweep with `N = 32`, `M = 50`, `Q = 5`, `T = 5`.
    pub fn multi_user_default() -> Self {
        Self {
            scenario: ScenarioKind::MultiUserUplink,
            dims: SystemDims { n_bs: 32, m_ris: 50, q_users: 5, t_symbols: 5, k_pilots: 50 },
            snr_grid_db: vec![10.0],
            k_grid: vec![50, 100, 200, 400],
            estimators: vec![EstimatorId::MfUl],
            schedule_kind: ScheduleKind::Dft,
            ..Self::single_user_default()
        }
    }

    pub fn for_scenario(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::MultiUserUplink => Self::multi_user_default(),
            ScenarioKind::SingleUserDownlink | ScenarioKind::OverheadTable => Self {
                scenario: kind,
                ..Self::single_user_default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        self.dims.validate().or_else(|e| bad(e.to_string()))?;
        if self.scenario == ScenarioKind::OverheadTable {
            return Ok(());
        }
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1".into());
        }
        if self.snr_grid_db.is_empty() || self.k_grid.is_empty() || self.estimators.is_empty() {
            return bad("snr_grid_db, k_grid and estimators must be non-empty".into());
        }
        if let Some(s) = self.snr_grid_db.iter().find(|s| !s.is_finite()) {
            return bad(format!("SNR {s} is not finite"));
        }
        if self.k_grid.contains(&0) {
            return bad("k_grid entries must be positive".into());
        }
        for (i, e) in self.estimators.iter().enumerate() {
            if self.estimators[..i].contains(e) {
                return bad(format!("estimator {e} listed twice"));
            }
        }
        let uplink = self.scenario == ScenarioKind::MultiUserUplink;
        if let Some(e) = self.estimators.iter().find(|e| (**e == EstimatorId::MfUl) != uplink) {
            return bad(format!("estimator {e} does not apply to {}", self.scenario.as_str()));
        }
        if uplink {
            self.dims.validate_uplink().or_else(|e| bad(e.to_string()))?;
            if self.spectral_efficiency || self.se_benchmarks {
                return bad("spectral efficiency is only computed for the downlink".into());
            }
        } else {
            if self.dims.q_users != 1 {
                return bad("the downlink scenario has a single user".into());
            }
            if self.inject_true_psi {
                return bad("inject_true_psi applies to the uplink only".into());
            }
        }
        for cfg in [&self.mf_am, &self.mf_gd] {
            cfg.validate().or_else(|e| bad(e.to_string()))?;
        }
        if self.lr.max_iters == 0 {
            return bad("lr.max_iters must be positive".into());
        }
        Ok(())
    }
}

/// A metric cell: a number, an infeasibility marker, or absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Value(f64),
    /// The estimator cannot run at this `K`.
    Infeasible,
    Missing,
}

impl Metric {
    pub const INFEASIBLE: &'static str = "infeasible";

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite_or_marker(self) -> bool {
        match self {
            Metric::Value(v) => v.is_finite(),
            _ => true,
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            Metric::Infeasible => s.serialize_str(Self::INFEASIBLE),
            Metric::Missing => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Metric;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a number, \"{}\" or null", Metric::INFEASIBLE)
            }
            fn visit_f64<E>(self, v: f64) -> std::result::Result<Metric, E> {
                Ok(Metric::Value(v))
            }
            fn visit_i64<E>(self, v: i64) -> std::result::Result<Metric, E> {
                Ok(Metric::Value(v as f64))
            }
            fn visit_u64<E>(self, v: u64) -> std::result::Result<Metric, E> {
                Ok(Metric::Value(v as f64))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<Metric, E> {
                if v == Metric::INFEASIBLE {
                    Ok(Metric::Infeasible)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(v), &self))
                }
            }
            fn visit_unit<E>(self) -> std::result::Result<Metric, E> {
                Ok(Metric::Missing)
            }
            fn visit_none<E>(self) -> std::result::Result<Metric, E> {
                Ok(Metric::Missing)
            }
        }
        d.deserialize_any(V)
    }
}

/// One row of sweep output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub scenario: String,
    pub estimator: String,
    pub snr_db: f64,
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub nmse: Metric,
    pub se: Metric,
    pub wall_time_ms: f64,
}

impl ResultRecord {
    pub fn check_finite(&self) -> Result<()> {
        let finite = self.snr_db.is_finite()
            && self.wall_time_ms.is_finite()
            && self.nmse.is_finite_or_marker()
            && self.se.is_finite_or_marker();
        let non_negative = self.nmse.value().is_none_or(|v| v >= 0.0) && self.wall_time_ms >= 0.0;
        if finite && non_negative {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "record {} {} snr={} k={} trial={} has a non-finite or negative metric",
                self.scenario, self.estimator, self.snr_db, self.k, self.trial
            )))
        }
    }
}
