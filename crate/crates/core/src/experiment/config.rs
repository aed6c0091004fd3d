//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comment lines and trailing comments start with '#'
//! experiment = fig1_power_sweep
//! seed = 7
//! power_dbw = -10, -5, 0        # lists are comma separated
//! weights = 1,1,1,1; 1,1,5.3,5.3  # lists of lists use ';'
//! ```
//!
//! Keys are case-sensitive, may appear once, and unknown keys are rejected.
//! `a:b:c` expands to the inclusive range `a, a+b, ..., c` wherever a list of
//! numbers is expected.

use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fig1PowerSweep,
    Fig2UsersPerGroup,
    Fig34DasUtilization,
    Fig6ModulationParadigm,
    Fig78Ula,
    Fig910Robust,
    SolveInstance,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Fig1PowerSweep,
        ExperimentKind::Fig2UsersPerGroup,
        ExperimentKind::Fig34DasUtilization,
        ExperimentKind::Fig6ModulationParadigm,
        ExperimentKind::Fig78Ula,
        ExperimentKind::Fig910Robust,
        ExperimentKind::SolveInstance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fig1PowerSweep => "fig1_power_sweep",
            ExperimentKind::Fig2UsersPerGroup => "fig2_users_per_group",
            ExperimentKind::Fig34DasUtilization => "fig3_4_das_utilization",
            ExperimentKind::Fig6ModulationParadigm => "fig6_modulation_paradigm",
            ExperimentKind::Fig78Ula => "fig7_8_ula",
            ExperimentKind::Fig910Robust => "fig9_10_robust",
            ExperimentKind::SolveInstance => "solve_instance",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            format!("unknown experiment '{s}', expected one of {}", names.join(", "))
        })
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the group-size study reaches `rho` users per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// Keep `groups` fixed and set `Nu = rho * groups`.
    GrowUsers,
    /// Keep `nu` fixed and set `G = nu / rho`.
    MergeGroups,
}

/// Parameters of one run. Fields a study does not use are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub nt: usize,
    pub nu: usize,
    pub groups: usize,
    /// Total power budgets swept (dBW), split equally over the antennas.
    pub power_dbw: Vec<f64>,
    pub n_rand: usize,
    pub realizations: usize,
    /// Users per group swept by the group-size study.
    pub rho: Vec<usize>,
    pub rho_mode: RhoMode,
    pub sigma_eps: Vec<f64>,
    /// Co-group angular separations (degrees).
    pub theta_a_deg: Vec<f64>,
    /// Angle between the two group centres (degrees).
    pub group_spacing_deg: f64,
    /// Separation used for the beampattern snapshot.
    pub beampattern_theta_a_deg: f64,
    pub beampattern_step_deg: f64,
    /// One weight vector per weighting.
    pub weights: Vec<Vec<f64>>,
    /// Per-antenna budget (W) of fixed-channel studies.
    pub antenna_power_w: f64,
    /// Error-sample count per user for the sampled worst case.
    pub error_samples: usize,
    /// Instances in the rank-one frequency batch.
    pub batch: usize,
    /// Uniform per-user angle jitter (degrees) across the batch.
    pub batch_jitter_deg: f64,
    /// Largest modulation order of the ladder (2 = BPSK/QPSK only).
    pub max_modulation_order: u32,
    pub channel_file: Option<PathBuf>,
    pub reference_channel: Option<String>,
    /// 1-based user lists, one per group.
    pub partition: Option<Vec<Vec<usize>>>,
    pub pac_w: Option<Vec<f64>>,
    pub noise: Option<Vec<f64>>,
    pub targets: Option<Vec<f64>>,
    pub out_dir: PathBuf,
    pub parallel: bool,
}

impl ExperimentConfig {
    /// Defaults for `kind`, matching the published setups where they are stated.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            seed: 1,
            nt: 5,
            nu: 4,
            groups: 2,
            power_dbw: (0..=15).map(|k| -10.0 + 2.0 * k as f64).collect(),
            n_rand: 100,
            realizations: 100,
            rho: vec![1, 2, 3, 4],
            rho_mode: RhoMode::GrowUsers,
            sigma_eps: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            theta_a_deg: (0..=9).map(|k| 5.0 * k as f64).collect(),
            group_spacing_deg: 45.0,
            beampattern_theta_a_deg: 35.0,
            beampattern_step_deg: 0.5,
            weights: vec![vec![1.0, 1.0, 1.0, 1.0], vec![1.0, 1.0, 5.3, 5.3]],
            antenna_power_w: 1.0,
            error_samples: 1000,
            batch: 30,
            batch_jitter_deg: 5.0,
            max_modulation_order: 4,
            channel_file: None,
            reference_channel: None,
            partition: None,
            pac_w: None,
            noise: None,
            targets: None,
            out_dir: PathBuf::from("out"),
            parallel: true,
        };
        match kind {
            ExperimentKind::Fig2UsersPerGroup => Self { power_dbw: vec![10.0], ..base },
            ExperimentKind::Fig34DasUtilization => {
                Self { power_dbw: (0..=8).map(|k| -10.0 + 5.0 * k as f64).collect(), realizations: 1, ..base }
            }
            ExperimentKind::Fig6ModulationParadigm => Self { nt: 2, realizations: 1, ..base },
            ExperimentKind::Fig78Ula => Self { nt: 4, power_dbw: vec![10.0], n_rand: 200, realizations: 1, ..base },
            ExperimentKind::Fig910Robust => Self {
                nt: 3,
                nu: 6,
                power_dbw: vec![10.0],
                n_rand: 200,
                theta_a_deg: vec![10.0],
                realizations: 1,
                ..base
            },
            ExperimentKind::SolveInstance => Self { power_dbw: vec![0.0], ..base },
            _ => base,
        }
    }

    /// Parses a configuration file's contents.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                field: String::new(),
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config { line: line_no, field: String::new(), message: "empty key".into() });
            }
            if let Some((first, ..)) = entries.iter().find(|(_, k, _)| *k == key) {
                return Err(Error::Config {
                    line: line_no,
                    field: key,
                    message: format!("duplicate key, first set on line {first}"),
                });
            }
            entries.push((line_no, key, value.trim().to_string()));
        }

        let kind = match entries.iter().find(|(_, k, _)| k == "experiment") {
            Some((line, _, v)) => {
                v.parse().map_err(|m| Error::Config { line: *line, field: "experiment".into(), message: m })?
            }
            None => {
                return Err(Error::Config { line: 0, field: "experiment".into(), message: "missing required key".into() })
            }
        };
        let mut cfg = Self::defaults(kind);
        for (line, key, value) in &entries {
            cfg.set(key, value).map_err(|message| Error::Config { line: *line, field: key.clone(), message })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "experiment" => self.experiment = value.parse()?,
            "seed" => self.seed = scalar(value)?,
            "nt" => self.nt = scalar(value)?,
            "nu" => self.nu = scalar(value)?,
            "groups" => self.groups = scalar(value)?,
            "power_dbw" => self.power_dbw = numbers(value)?,
            "n_rand" => self.n_rand = scalar(value)?,
            "realizations" => self.realizations = scalar(value)?,
            "rho" => self.rho = numbers(value)?.into_iter().map(as_count).collect::<std::result::Result<_, _>>()?,
            "rho_mode" => {
                self.rho_mode = match value {
                    "grow_users" => RhoMode::GrowUsers,
                    "merge_groups" => RhoMode::MergeGroups,
                    _ => return Err(format!("expected grow_users or merge_groups, got '{value}'")),
                }
            }
            "sigma_eps" => self.sigma_eps = numbers(value)?,
            "theta_a_deg" => self.theta_a_deg = numbers(value)?,
            "group_spacing_deg" => self.group_spacing_deg = scalar(value)?,
            "beampattern_theta_a_deg" => self.beampattern_theta_a_deg = scalar(value)?,
            "beampattern_step_deg" => self.beampattern_step_deg = scalar(value)?,
            "weights" => {
                self.weights = value.split(';').map(numbers).collect::<std::result::Result<_, _>>()?;
            }
            "antenna_power_w" => self.antenna_power_w = scalar(value)?,
            "error_samples" => self.error_samples = scalar(value)?,
            "batch" => self.batch = scalar(value)?,
            "batch_jitter_deg" => self.batch_jitter_deg = scalar(value)?,
            "max_modulation_order" => self.max_modulation_order = scalar(value)?,
            "channel_file" => self.channel_file = Some(PathBuf::from(value)),
            "reference_channel" => self.reference_channel = Some(value.to_string()),
            "partition" => {
                let groups = value
                    .split(';')
                    .map(|g| numbers(g)?.into_iter().map(as_count).collect())
                    .collect::<std::result::Result<_, _>>()?;
                self.partition = Some(groups);
            }
            "pac_w" => self.pac_w = Some(numbers(value)?),
            "noise" => self.noise = Some(numbers(value)?),
            "targets" => self.targets = Some(numbers(value)?),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "parallel" => {
                self.parallel = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(format!("expected true or false, got '{value}'")),
                }
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: &str| {
            Err(Error::Config { line: 0, field: field.into(), message: message.into() })
        };
        if self.nt == 0 || self.nu == 0 || self.groups == 0 {
            return fail("nt", "nt, nu and groups must be positive");
        }
        if self.groups > self.nu {
            return fail("groups", "more groups than users");
        }
        if self.power_dbw.is_empty() || self.power_dbw.iter().any(|p| !p.is_finite()) {
            return fail("power_dbw", "grid must be nonempty and finite");
        }
        if self.n_rand == 0 {
            return fail("n_rand", "need at least one randomization");
        }
        if self.realizations == 0 {
            return fail("realizations", "need at least one realization");
        }
        if self.rho.is_empty() || self.rho.contains(&0) {
            return fail("rho", "grid must be nonempty with positive entries");
        }
        if self.rho_mode == RhoMode::MergeGroups && self.rho.iter().any(|r| !self.nu.is_multiple_of(*r)) {
            return fail("rho", "with merge_groups every rho must divide nu");
        }
        if self.sigma_eps.is_empty() || self.sigma_eps.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return fail("sigma_eps", "grid must be nonempty and nonnegative");
        }
        if self.theta_a_deg.is_empty() || self.theta_a_deg.iter().any(|t| !t.is_finite()) {
            return fail("theta_a_deg", "grid must be nonempty and finite");
        }
        if !(self.beampattern_step_deg > 0.0) {
            return fail("beampattern_step_deg", "step must be positive");
        }
        if self.weights.is_empty() || self.weights.iter().any(|w| w.is_empty() || w.iter().any(|g| !(*g > 0.0))) {
            return fail("weights", "each weighting needs positive weights");
        }
        if !(self.antenna_power_w > 0.0 && self.antenna_power_w.is_finite()) {
            return fail("antenna_power_w", "budget must be positive");
        }
        if self.error_samples == 0 {
            return fail("error_samples", "need at least one sample");
        }
        if self.batch == 0 {
            return fail("batch", "batch must be nonempty");
        }
        if self.max_modulation_order < 2 {
            return fail("max_modulation_order", "order must be at least 2");
        }
        Ok(())
    }
}

fn scalar<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| format!("invalid value '{}': {e}", value.trim()))
}

fn numbers(value: &str) -> std::result::Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim) {
        if item.is_empty() {
            return Err(format!("empty entry in list '{value}'"));
        }
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            [single] => out.push(scalar(single)?),
            [a, step, b] => {
                let (a, step, b): (f64, f64, f64) = (scalar(a)?, scalar(step)?, scalar(b)?);
                if !(step > 0.0) || b < a {
                    return Err(format!("range '{item}' needs a positive step and end >= start"));
                }
                let n = ((b - a) / step + 1e-9).floor() as usize;
                // snap accumulated range error back to short decimals
                out.extend((0..=n).map(|k| ((a + step * k as f64) * 1e9).round() / 1e9));
            }
            _ => return Err(format!("cannot parse '{item}' as a number or start:step:end range")),
        }
    }
    Ok(out)
}

fn as_count(x: f64) -> std::result::Result<usize, String> {
    if x >= 0.0 && x.fract() == 0.0 {
        Ok(x as usize)
    } else {
        Err(format!("expected a nonnegative integer, got {x}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_lists_and_ranges() {
        let cfg = ExperimentConfig::parse(
            "# sweep\nexperiment = fig1_power_sweep\nseed = 42 # trailing\npower_dbw = -10:5:10\nweights = 1,2; 3,4\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.power_dbw, vec![-10.0, -5.0, 0.0, 5.0, 10.0]);
        assert_eq!(cfg.weights, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn reports_line_and_field() {
        let err = ExperimentConfig::parse("experiment = fig1_power_sweep\n\nnt = five\n").unwrap_err();
        match err {
            Error::Config { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "nt");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = ExperimentConfig::parse("experiment = fig1_power_sweep\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let err = ExperimentConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        assert!(ExperimentConfig::parse("seed = 1\n").is_err());
        assert!(ExperimentConfig::parse("experiment = fig1_power_sweep\nmissing equals\n").is_err());
    }

    #[test]
    fn rejects_empty_grids() {
        let err = ExperimentConfig::parse("experiment = fig9_10_robust\nsigma_eps = -1\n").unwrap_err();
        assert!(matches!(err, Error::Config { field, .. } if field == "sigma_eps"));
    }

    #[test]
    fn partition_is_one_based_lists() {
        let cfg = ExperimentConfig::parse("experiment = solve_instance\npartition = 1,2;3\n").unwrap();
        assert_eq!(cfg.partition, Some(vec![vec![1, 2], vec![3]]));
    }
}
