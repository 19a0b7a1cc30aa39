//! Experiment configuration: a TOML document with fixed sections, strict
//! key checking, dotted `section.key=value` overrides and a canonical hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use swlab_core::covariance::Phi;
use swlab_core::kernel::InitialFamily;
use swlab_core::solver::SnapshotPolicy;
use swlab_core::Coefficient;
use toml::{Table, Value};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub time: TimeSection,
    pub noise: NoiseSection,
    pub init: InitSection,
    pub coeffs: CoeffSection,
    pub control: ControlSection,
    pub event: EventSection,
    pub ladder: LadderSection,
    pub optimizer: OptimizerSection,
    pub regularity: RegularitySection,
    pub checks: ChecksSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { l: 8.0, n: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "J")]
    pub j: usize,
    pub snapshots: SnapshotPolicy,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            t: 1.0,
            j: 64,
            snapshots: SnapshotPolicy::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub beta: f64,
    pub phi: Phi,
    pub delta: f64,
    pub seed: u64,
    pub epsilon: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            beta: 1.0,
            phi: Phi::Constant { value: 1.0 },
            delta: 1.0,
            seed: 0,
            epsilon: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub family: InitialFamily,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        Self {
            family: InitialFamily::SingleMode {
                k: [1, 0, 0],
                amplitude: 1.0,
            },
            gamma1: 1.0,
            gamma2: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoeffSection {
    pub sigma: Coefficient,
    pub b: Coefficient,
}

impl Default for CoeffSection {
    fn default() -> Self {
        Self {
            sigma: Coefficient::Constant { value: 1.0 },
            b: Coefficient::ZERO,
        }
    }
}

/// Control for the `skeleton` subcommand:
/// `h(t, x) = amplitude · cos(ξ_k · x) · s(t)` with `s ≡ 1` when
/// `frequency = 0` and `s(t) = sin(frequency · t)` otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub k: [i64; 3],
    pub amplitude: f64,
    pub frequency: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            k: [1, 0, 0],
            amplitude: 0.0,
            frequency: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKindName {
    PointExceed,
    SupExceed,
    LinearExceed,
}

/// `site` defaults to the grid centre; `sup_exceed` uses the central cube of
/// side `region_side`; `linear_exceed` tests against `cos(ξ_k · x)` with
/// `k = test_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventSection {
    pub kind: EventKindName,
    pub threshold: f64,
    pub site: Option<[usize; 3]>,
    pub region_side: usize,
    pub test_k: [i64; 3],
}

impl Default for EventSection {
    fn default() -> Self {
        Self {
            kind: EventKindName::PointExceed,
            threshold: 1.0,
            site: None,
            region_side: 4,
            test_k: [1, 0, 0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceRate {
    /// The Gaussian oracle when it applies, otherwise the minimiser.
    Auto,
    Oracle,
    Minimizer,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderSection {
    pub epsilons: Vec<f64>,
    #[serde(rename = "M")]
    pub m: usize,
    pub tolerance: f64,
    pub reference: ReferenceRate,
}

impl Default for LadderSection {
    fn default() -> Self {
        Self {
            epsilons: vec![1.0, 0.5, 0.25, 0.125],
            m: 10_000,
            tolerance: 0.1,
            reference: ReferenceRate::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    #[serde(rename = "K")]
    pub k: usize,
    pub stages: usize,
    pub lambda0: f64,
    pub lambda_growth: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub feasibility_tol: f64,
    pub kappa0: f64,
    pub restart_scale: f64,
    pub bound: Option<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            k: 8,
            stages: 6,
            lambda0: 1.0,
            lambda_growth: 10.0,
            max_iters: 200,
            restarts: 4,
            feasibility_tol: 1e-6,
            kappa0: 20.0,
            restart_scale: 1.0,
            bound: None,
        }
    }
}

/// Spatial lags are lattice offsets along the first axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularitySection {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub q: f64,
    pub trajectories: usize,
    pub lags: Vec<i64>,
    pub region_side: usize,
    pub deltas: Vec<f64>,
    pub bootstrap: usize,
    pub pair_budget: usize,
}

impl Default for RegularitySection {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            alpha_prime: 0.3,
            q: 2.0,
            trajectories: 100,
            lags: vec![1, 2, 4, 8, 12],
            region_side: 8,
            deltas: vec![0.25, 0.5, 1.0, 2.0],
            bootstrap: 200,
            pair_budget: 10_000_000,
        }
    }
}

/// Parameters of `noise-check` (`draws`, `lags` in cells) and
/// `kernel-check` (`betas`, `times`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSection {
    pub draws: usize,
    pub lags: Vec<usize>,
    pub betas: Vec<f64>,
    pub times: Vec<f64>,
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self {
            draws: 1000,
            lags: vec![1, 2, 3, 4],
            betas: vec![0.5, 1.0, 1.5],
            times: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<Format>,
    pub dump_fields: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "runs".into(),
            formats: vec![Format::Csv, Format::Json],
            dump_fields: true,
        }
    }
}

/// Reads the config file (or the empty document), applies the overrides in
/// order and deserialises strictly.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, String> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?,
        None => String::new(),
    };
    let mut table: Table = text.parse().map_err(|e| format!("config parse error: {e}"))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| format!("config error: {}", e.message()))
}

/// `section.key=value`; the value is read as a TOML value and falls back to a
/// bare string, so `event.kind=sup_exceed` works unquoted.
pub fn apply_override(table: &mut Table, item: &str) -> Result<(), String> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| format!("override `{item}` is not of the form key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("override `{item}` has an empty key"));
    }
    let value = parse_value(raw.trim());
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("override `{item}`: `{k}` is not a table"))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// SHA-256 of the canonical JSON form (object keys sorted).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serialises").to_string();
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
