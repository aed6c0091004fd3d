//! Numerical studies: parameter sweeps over the solvers, written out as CSV
//! tables plus a JSON summary.
//!
//! Grid points run concurrently. Each point draws its channel and
//! randomization streams from `(seed, point index)`, and rows are emitted in
//! index order, so output does not depend on scheduling.

pub mod config;

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, ExperimentKind, RhoMode};

use crate::error::{Error, Result};
use crate::fair::{rescale_to_pac, solve_relaxed, PowerBudget, SolverSettings};
use crate::linalg::inner_gain;
use crate::model::{
    antenna_utilization, all_sinr, assign_modulation, gen_rayleigh, gen_ula, group_min_sinr, linear_to_db,
    min_weighted_sinr, per_antenna_power, power_utilization, reference_channel, steering_vector,
    ula_group_angles, ChannelSet, GroupPartition, ModulationLadder, PrecoderSet, ProblemInstance,
};
use crate::randomization::{solve_pipeline_with, PipelineSettings, SolvePath, SolveReport};
use crate::robust::{certified_worst_case_t, sampled_worstcase_sinr, solve_robust_with, RobustSpec};

/// One CSV file: a header row and string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new<S: AsRef<str>>(name: &str, header: &[S]) -> Self {
        Self { name: name.into(), header: header.iter().map(|h| h.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parsed numeric column; non-numeric cells become NaN.
    pub fn values(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column(name)?;
        Some(self.rows.iter().map(|r| r[c].parse().unwrap_or(f64::NAN)).collect())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Shortest decimal that round-trips to the same `f64`, in exponent form
/// for very small or large magnitudes.
fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointFailure {
    pub point: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub n_rand: usize,
    pub files: Vec<String>,
    pub points: usize,
    pub failures: Vec<PointFailure>,
    /// Headline statistics; accuracy entries are achieved level over relaxed bound.
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve_report: Option<SolveReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes `<name>.csv` for every table and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in &self.tables {
            std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv()?)?;
        }
        let json = serde_json::to_vec_pretty(&self.summary)?;
        std::fs::write(dir.join("summary.json"), json)?;
        Ok(())
    }
}

/// Independent 64-bit seed for stream `index` of `master`.
pub fn point_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

// stream ranges keep channel, randomization and batch draws apart
const RANDOMIZATION_STREAMS: u64 = 1 << 40;
const BATCH_STREAMS: u64 = 2 << 40;
const SAMPLING_STREAMS: u64 = 3 << 40;

/// Rayleigh channel of realization `r`; shared by every grid point of a sweep.
pub fn realization_channel(master: u64, r: usize, nt: usize, nu: usize) -> ChannelSet {
    gen_rayleigh(nt, nu, point_seed(master, r as u64))
}

/// Two-group ULA instance with group centres `±spacing/2` and co-group
/// separation `theta_a` (degrees).
pub fn ula_instance(nt: usize, nu: usize, spacing_deg: f64, theta_a_deg: f64, p_tot: f64) -> Result<ProblemInstance> {
    if !nu.is_multiple_of(2) {
        return Err(Error::invalid("the ULA layout needs an even number of users"));
    }
    let angles = ula_group_angles(
        nu / 2,
        (-spacing_deg / 2.0).to_radians(),
        (spacing_deg / 2.0).to_radians(),
        theta_a_deg.to_radians(),
    );
    ProblemInstance::equal_split(gen_ula(nt, &angles)?, GroupPartition::contiguous(nu, 2)?, p_tot)
}

/// Per-group radiated pattern `|w_k† a(θ)|²` in dB relative to the group's peak.
pub fn beampattern(w: &PrecoderSet, thetas: &[f64]) -> Vec<Vec<f64>> {
    w.vectors()
        .iter()
        .map(|wk| {
            let g: Vec<f64> = thetas.iter().map(|&t| inner_gain(wk, &steering_vector(w.nt(), t))).collect();
            let peak = g.iter().cloned().fold(0.0, f64::max);
            g.iter().map(|&x| linear_to_db(x / peak)).collect()
        })
        .collect()
}

fn dbw(p: f64) -> f64 {
    10f64.powf(p / 10.0)
}

fn rate(t: f64) -> f64 {
    (1.0 + t).log2()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn map_points<T, U, F>(parallel: bool, items: &[U], f: F) -> Vec<T>
where
    T: Send,
    U: Sync,
    F: Fn(usize, &U) -> T + Sync + Send,
{
    if parallel {
        items.par_iter().enumerate().map(|(i, u)| f(i, u)).collect()
    } else {
        items.iter().enumerate().map(|(i, u)| f(i, u)).collect()
    }
}

fn pipeline_settings(cfg: &ExperimentConfig) -> PipelineSettings {
    PipelineSettings { solver: SolverSettings::default(), n_rand: cfg.n_rand, parallel: cfg.parallel }
}

fn precoder_rows(table: &mut Table, prefix: &[String], scheme: &str, w: &PrecoderSet) {
    for (k, wk) in w.vectors().iter().enumerate() {
        for (n, z) in wk.iter().enumerate() {
            let mut row = prefix.to_vec();
            row.extend([scheme.to_string(), (k + 1).to_string(), (n + 1).to_string(), num(z.re), num(z.im)]);
            table.push(row);
        }
    }
}

fn precoder_table(name: &str, keys: &[&str]) -> Table {
    let mut header: Vec<&str> = keys.to_vec();
    header.extend(["scheme", "group", "antenna", "re", "im"]);
    Table::new(name, &header)
}

/// Reads back a precoder table written by a study. Rows whose leading key
/// cells equal `keys` and whose scheme matches are collected.
pub fn read_precoders(table: &Table, keys: &[&str], scheme: &str) -> Result<PrecoderSet> {
    let nk = keys.len();
    let mut cols: Vec<Vec<crate::linalg::C64>> = Vec::new();
    for row in &table.rows {
        if row[..nk].iter().zip(keys).all(|(a, b)| a == b) && row[nk] == scheme {
            let k: usize = row[nk + 1].parse().map_err(|_| Error::invalid("bad group index"))?;
            let n: usize = row[nk + 2].parse().map_err(|_| Error::invalid("bad antenna index"))?;
            let re: f64 = row[nk + 3].parse().map_err(|_| Error::invalid("bad real part"))?;
            let im: f64 = row[nk + 4].parse().map_err(|_| Error::invalid("bad imaginary part"))?;
            if cols.len() < k {
                cols.resize(k, Vec::new());
            }
            if cols[k - 1].len() < n {
                cols[k - 1].resize(n, crate::linalg::C64::new(0.0, 0.0));
            }
            cols[k - 1][n - 1] = crate::linalg::C64::new(re, im);
        }
    }
    if cols.is_empty() {
        return Err(Error::invalid(format!("no precoder rows for {keys:?}/{scheme}")));
    }
    PrecoderSet::new(cols.into_iter().map(crate::linalg::CVec::from_vec).collect())
}

/// PAC solution next to the SPC solution and its per-antenna rescaling.
struct Comparison {
    pac: PrecoderSet,
    pac_report: SolveReport,
    spc: PrecoderSet,
    spc_report: SolveReport,
    rescaled: PrecoderSet,
}

fn compare(inst: &ProblemInstance, seed: u64, ps: &PipelineSettings) -> Result<Comparison> {
    let (pac, pac_report) = solve_pipeline_with(inst, &PowerBudget::per_antenna(inst), seed, ps)?;
    let (spc, spc_report) = solve_pipeline_with(inst, &PowerBudget::SumPower(inst.total_power()), seed, ps)?;
    let rescaled = rescale_to_pac(&spc, inst.pac());
    Ok(Comparison { pac, pac_report, spc, spc_report, rescaled })
}

struct Metrics(BTreeMap<String, f64>);

impl Metrics {
    fn new() -> Self {
        Self(BTreeMap::new())
    }

    fn set(&mut self, key: impl Into<String>, v: f64) {
        self.0.insert(key.into(), v);
    }

    fn accuracy(&mut self, prefix: &str, acc: &[f64]) {
        if acc.is_empty() {
            return;
        }
        self.set(format!("{prefix}_accuracy_mean"), mean(acc.iter().copied()));
        self.set(format!("{prefix}_accuracy_min"), acc.iter().cloned().fold(f64::INFINITY, f64::min));
        self.set(format!("{prefix}_accuracy_max"), acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
}

struct Study {
    tables: Vec<Table>,
    failures: Vec<PointFailure>,
    metrics: Metrics,
    points: usize,
    solve_report: Option<SolveReport>,
}

/// Runs the configured study and returns its tables without touching disk.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    info!("running {} (seed {}, {} randomizations)", cfg.experiment, cfg.seed, cfg.n_rand);
    let study = match cfg.experiment {
        ExperimentKind::Fig1PowerSweep => fig1(cfg)?,
        ExperimentKind::Fig2UsersPerGroup => fig2(cfg)?,
        ExperimentKind::Fig34DasUtilization => fig3_4(cfg)?,
        ExperimentKind::Fig6ModulationParadigm => fig6(cfg)?,
        ExperimentKind::Fig78Ula => fig7_8(cfg)?,
        ExperimentKind::Fig910Robust => fig9_10(cfg)?,
        ExperimentKind::SolveInstance => solve_instance(cfg)?,
    };
    for f in &study.failures {
        warn!("point {} failed: {}", f.point, f.error);
    }
    let summary = RunSummary {
        experiment: cfg.experiment,
        seed: cfg.seed,
        n_rand: cfg.n_rand,
        files: study.tables.iter().map(|t| format!("{}.csv", t.name)).collect(),
        points: study.points,
        failures: study.failures,
        metrics: study.metrics.0,
        solve_report: study.solve_report,
    };
    Ok(RunOutput { tables: study.tables, summary })
}

/// Runs the study and writes its files to `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let out = execute(cfg)?;
    out.write(&cfg.out_dir)?;
    info!("wrote {} files to {}", out.summary.files.len() + 1, cfg.out_dir.display());
    Ok(out.summary)
}

/// One Monte Carlo sweep point: x-axis label and one instance per realization.
struct SweepPoint {
    x: String,
    instances: Vec<ProblemInstance>,
}

/// PAC vs SPC over an x-axis grid, averaging over realizations.
fn sweep(cfg: &ExperimentConfig, prefix: &str, x_name: &str, grid: Vec<SweepPoint>) -> Study {
    let ps = pipeline_settings(cfg);
    let jobs: Vec<(usize, usize)> =
        grid.iter().enumerate().flat_map(|(p, g)| (0..g.instances.len()).map(move |r| (p, r))).collect();
    let results = map_points(cfg.parallel, &jobs, |j, &(p, r)| {
        let seed = point_seed(cfg.seed, RANDOMIZATION_STREAMS + j as u64);
        let out = compare(&grid[p].instances[r], seed, &ps);
        info!("{prefix}: {x_name}={} realization {r} done", grid[p].x);
        out
    });

    let mut rate_t = Table::new(
        &format!("{prefix}_min_rate"),
        &[x_name, "pac", "pac_bound", "spc", "spc_rescaled", "realizations"],
    );
    let mut acc_t = Table::new(&format!("{prefix}_accuracy"), &[x_name, "pac", "spc"]);
    let mut gap_t = Table::new(&format!("{prefix}_gap"), &[x_name, "pac", "spc"]);
    let mut real_t = Table::new(
        &format!("{prefix}_realizations"),
        &[
            x_name,
            "realization",
            "pac_t",
            "pac_relaxed_t",
            "pac_path",
            "pac_max_load",
            "spc_t",
            "spc_relaxed_t",
            "spc_rescaled_t",
        ],
    );
    let mut prec_t = precoder_table(&format!("{prefix}_precoders"), &[x_name, "realization"]);
    let mut failures = Vec::new();
    let (mut pac_acc, mut spc_acc) = (Vec::new(), Vec::new());

    for (p, point) in grid.iter().enumerate() {
        let mut rows = Vec::new();
        for (j, &(jp, r)) in jobs.iter().enumerate() {
            if jp != p {
                continue;
            }
            let inst = &point.instances[r];
            let measured = results[j].as_ref().map_err(|e| e.to_string()).and_then(|c| {
                let f = |w: &PrecoderSet| min_weighted_sinr(w, inst).map_err(|e| e.to_string());
                Ok((f(&c.pac)?, f(&c.spc)?, f(&c.rescaled)?, c))
            });
            match measured {
                Ok((tp, ts, tr, c)) => {
                    real_t.push(vec![
                        point.x.clone(),
                        r.to_string(),
                        num(tp),
                        num(c.pac_report.relaxed_t),
                        path_name(c.pac_report.path).into(),
                        num(c.pac_report.max_load),
                        num(ts),
                        num(c.spc_report.relaxed_t),
                        num(tr),
                    ]);
                    let keys = [point.x.clone(), r.to_string()];
                    precoder_rows(&mut prec_t, &keys, "pac", &c.pac);
                    precoder_rows(&mut prec_t, &keys, "spc", &c.spc);
                    precoder_rows(&mut prec_t, &keys, "spc_rescaled", &c.rescaled);
                    let (ap, as_) = (tp / c.pac_report.relaxed_t, ts / c.spc_report.relaxed_t);
                    pac_acc.push(ap);
                    spc_acc.push(as_);
                    rows.push((rate(tp), rate(c.pac_report.relaxed_t), rate(ts), rate(tr), ap, as_));
                }
                Err(e) => failures.push(PointFailure { point: format!("{x_name}={} realization={r}", point.x), error: e }),
            }
        }
        let col = |f: fn(&(f64, f64, f64, f64, f64, f64)) -> f64| num(mean(rows.iter().map(f)));
        rate_t.push(vec![
            point.x.clone(),
            col(|r| r.0),
            col(|r| r.1),
            col(|r| r.2),
            col(|r| r.3),
            rows.len().to_string(),
        ]);
        acc_t.push(vec![point.x.clone(), col(|r| r.4), col(|r| r.5)]);
        gap_t.push(vec![point.x.clone(), col(|r| 1.0 - r.4), col(|r| 1.0 - r.5)]);
    }

    let mut metrics = Metrics::new();
    metrics.accuracy("pac", &pac_acc);
    metrics.accuracy("spc", &spc_acc);
    Study {
        tables: vec![rate_t, acc_t, gap_t, real_t, prec_t],
        failures,
        metrics,
        points: jobs.len(),
        solve_report: None,
    }
}

fn path_name(p: SolvePath) -> &'static str {
    match p {
        SolvePath::RankOne => "rank_one",
        SolvePath::Randomization => "randomization",
    }
}

fn fig1(cfg: &ExperimentConfig) -> Result<Study> {
    let part = GroupPartition::contiguous(cfg.nu, cfg.groups)?;
    let channels: Vec<ChannelSet> =
        (0..cfg.realizations).map(|r| realization_channel(cfg.seed, r, cfg.nt, cfg.nu)).collect();
    let grid = cfg
        .power_dbw
        .iter()
        .map(|&p| {
            let instances = channels
                .iter()
                .map(|ch| ProblemInstance::equal_split(ch.clone(), part.clone(), dbw(p)))
                .collect::<Result<_>>()?;
            Ok(SweepPoint { x: num(p), instances })
        })
        .collect::<Result<_>>()?;
    Ok(sweep(cfg, "fig1", "power_dbw", grid))
}

fn fig2(cfg: &ExperimentConfig) -> Result<Study> {
    let p_tot = dbw(cfg.power_dbw[0]);
    let grid = cfg
        .rho
        .iter()
        .map(|&rho| {
            let (nu, g) = match cfg.rho_mode {
                RhoMode::GrowUsers => (rho * cfg.groups, cfg.groups),
                RhoMode::MergeGroups => (cfg.nu, cfg.nu / rho),
            };
            let part = GroupPartition::contiguous(nu, g)?;
            let instances = (0..cfg.realizations)
                .map(|r| {
                    ProblemInstance::equal_split(realization_channel(cfg.seed, r, cfg.nt, nu), part.clone(), p_tot)
                })
                .collect::<Result<_>>()?;
            Ok(SweepPoint { x: rho.to_string(), instances })
        })
        .collect::<Result<_>>()?;
    Ok(sweep(cfg, "fig2", "rho", grid))
}

fn fig3_4(cfg: &ExperimentConfig) -> Result<Study> {
    let ch = reference_channel("das_5x4")?;
    let (nt, nu) = (ch.nt(), ch.nu());
    let part = GroupPartition::contiguous(nu, cfg.groups)?;
    let ps = pipeline_settings(cfg);
    let insts: Vec<ProblemInstance> = cfg
        .power_dbw
        .iter()
        .map(|&p| ProblemInstance::equal_split(ch.clone(), part.clone(), dbw(p)))
        .collect::<Result<_>>()?;
    let results = map_points(cfg.parallel, &insts, |j, inst| {
        compare(inst, point_seed(cfg.seed, RANDOMIZATION_STREAMS + j as u64), &ps)
    });

    let mut pu = Table::new("fig3_power_utilization", &["power_dbw", "pac", "spc_rescaled"]);
    let mut au_header = vec!["power_dbw".to_string()];
    au_header.extend((1..=nt).map(|n| format!("antenna_{n}")));
    let mut au = Table::new("fig4_antenna_utilization", &au_header);
    let mut mr = Table::new("fig3_4_min_rate", &["power_dbw", "pac", "pac_bound", "spc_rescaled"]);
    let mut prec = precoder_table("fig3_4_precoders", &["power_dbw"]);
    let mut failures = Vec::new();
    let mut acc = Vec::new();
    let mut metrics = Metrics::new();
    for ((&p, inst), res) in cfg.power_dbw.iter().zip(&insts).zip(results) {
        let c = match res {
            Ok(c) => c,
            Err(e) => {
                failures.push(PointFailure { point: format!("power_dbw={}", num(p)), error: e.to_string() });
                continue;
            }
        };
        let x = num(p);
        pu.push(vec![x.clone(), num(power_utilization(&c.pac, inst)?), num(power_utilization(&c.rescaled, inst)?)]);
        let mut row = vec![x.clone()];
        row.extend(antenna_utilization(&c.pac, inst)?.into_iter().map(num));
        au.push(row);
        let tp = min_weighted_sinr(&c.pac, inst)?;
        mr.push(vec![
            x.clone(),
            num(rate(tp)),
            num(rate(c.pac_report.relaxed_t)),
            num(rate(min_weighted_sinr(&c.rescaled, inst)?)),
        ]);
        precoder_rows(&mut prec, std::slice::from_ref(&x), "pac", &c.pac);
        precoder_rows(&mut prec, std::slice::from_ref(&x), "spc_rescaled", &c.rescaled);
        acc.push(tp / c.pac_report.relaxed_t);
    }
    metrics.accuracy("pac", &acc);
    Ok(Study { tables: vec![pu, au, mr, prec], failures, metrics, points: insts.len(), solve_report: None })
}

fn weighting_label(w: &[f64]) -> String {
    w.iter().map(|g| num(*g)).collect::<Vec<_>>().join("/")
}

fn fig6(cfg: &ExperimentConfig) -> Result<Study> {
    let ch = reference_channel("paradigm_2x4")?;
    let (nt, nu) = (ch.nt(), ch.nu());
    let part = GroupPartition::contiguous(nu, cfg.groups)?;
    let ladder = ModulationLadder::up_to(cfg.max_modulation_order);
    let ps = pipeline_settings(cfg);
    let insts: Vec<ProblemInstance> = cfg
        .weights
        .iter()
        .map(|g| {
            if g.len() != nu {
                return Err(Error::Config {
                    line: 0,
                    field: "weights".into(),
                    message: format!("each weighting needs {nu} entries"),
                });
            }
            ProblemInstance::new(ch.clone(), part.clone(), g.clone(), vec![cfg.antenna_power_w; nt], vec![1.0; nu])
        })
        .collect::<Result<_>>()?;
    let results = map_points(cfg.parallel, &insts, |j, inst| {
        solve_pipeline_with(inst, &PowerBudget::per_antenna(inst), point_seed(cfg.seed, RANDOMIZATION_STREAMS + j as u64), &ps)
    });

    let mut header = vec!["weighting".to_string(), "kind".to_string()];
    header.extend((1..=nu).map(|u| format!("user_{u}")));
    let mut ur = Table::new("fig6_user_rate", &header);
    let mut md = Table::new("fig6_modulation", &["weighting", "group", "min_sinr_db", "modulation"]);
    let mut prec = precoder_table("fig6_precoders", &["weighting"]);
    let mut failures = Vec::new();
    let mut metrics = Metrics::new();
    let mut acc = Vec::new();
    for (j, (inst, res)) in insts.iter().zip(results).enumerate() {
        let label = weighting_label(inst.targets());
        let (w, report) = match res {
            Ok(v) => v,
            Err(e) => {
                failures.push(PointFailure { point: format!("weighting={label}"), error: e.to_string() });
                continue;
            }
        };
        let s = all_sinr(&w, inst)?;
        let gmin = group_min_sinr(&w, inst)?;
        let mut rates = vec![label.clone(), "rate".to_string()];
        rates.extend(s.iter().map(|&x| num(rate(x))));
        ur.push(rates);
        let mut grp = vec![label.clone(), "group_rate".to_string()];
        grp.extend((0..nu).map(|i| num(rate(gmin[inst.partition().group_of(i)]))));
        ur.push(grp);
        for (k, m) in assign_modulation(&w, inst, &ladder)?.iter().enumerate() {
            md.push(vec![label.clone(), (k + 1).to_string(), num(linear_to_db(gmin[k])), m.label()]);
        }
        precoder_rows(&mut prec, std::slice::from_ref(&label), "pac", &w);
        let min_rate = rate(s.iter().cloned().fold(f64::INFINITY, f64::min));
        metrics.set(format!("weighting_{}_min_rate", j + 1), min_rate);
        acc.push(min_weighted_sinr(&w, inst)? / report.relaxed_t);
    }
    metrics.accuracy("pac", &acc);
    Ok(Study { tables: vec![ur, md, prec], failures, metrics, points: insts.len(), solve_report: None })
}

fn fig7_8(cfg: &ExperimentConfig) -> Result<Study> {
    if cfg.groups != 2 {
        return Err(Error::Config { line: 0, field: "groups".into(), message: "the ULA layout has two groups".into() });
    }
    let p_tot = dbw(cfg.power_dbw[0]);
    let mut thetas = cfg.theta_a_deg.clone();
    thetas.push(cfg.beampattern_theta_a_deg);
    let insts: Vec<ProblemInstance> = thetas
        .iter()
        .map(|&t| ula_instance(cfg.nt, cfg.nu, cfg.group_spacing_deg, t, p_tot))
        .collect::<Result<_>>()?;
    let ps = pipeline_settings(cfg);
    let mut results = map_points(cfg.parallel, &insts, |j, inst| {
        compare(inst, point_seed(cfg.seed, RANDOMIZATION_STREAMS + j as u64), &ps)
    });
    let snapshot = results.pop().expect("snapshot point");
    let snapshot_inst = insts.last().expect("snapshot instance");

    let mut mr = Table::new("fig8_min_rate", &["theta_a_deg", "pac", "pac_bound", "spc", "spc_rescaled"]);
    let mut ac = Table::new("fig8_accuracy", &["theta_a_deg", "pac", "spc", "pac_rank_one"]);
    let mut prec = precoder_table("fig7_8_precoders", &["theta_a_deg"]);
    let mut failures = Vec::new();
    let mut metrics = Metrics::new();
    let (mut pac_acc, mut spc_acc) = (Vec::new(), Vec::new());
    for ((&t, inst), res) in cfg.theta_a_deg.iter().zip(&insts).zip(results) {
        let x = num(t);
        let c = match res {
            Ok(c) => c,
            Err(e) => {
                failures.push(PointFailure { point: format!("theta_a_deg={x}"), error: e.to_string() });
                continue;
            }
        };
        let tp = min_weighted_sinr(&c.pac, inst)?;
        let ts = min_weighted_sinr(&c.spc, inst)?;
        mr.push(vec![
            x.clone(),
            num(rate(tp)),
            num(rate(c.pac_report.relaxed_t)),
            num(rate(ts)),
            num(rate(min_weighted_sinr(&c.rescaled, inst)?)),
        ]);
        let (ap, as_) = (tp / c.pac_report.relaxed_t, ts / c.spc_report.relaxed_t);
        pac_acc.push(ap);
        spc_acc.push(as_);
        let rank_one = u8::from(c.pac_report.path == SolvePath::RankOne);
        ac.push(vec![x.clone(), num(ap), num(as_), rank_one.to_string()]);
        precoder_rows(&mut prec, std::slice::from_ref(&x), "pac", &c.pac);
        precoder_rows(&mut prec, std::slice::from_ref(&x), "spc", &c.spc);
        precoder_rows(&mut prec, std::slice::from_ref(&x), "spc_rescaled", &c.rescaled);
    }
    metrics.accuracy("pac", &pac_acc);
    metrics.accuracy("spc", &spc_acc);

    let mut tables = vec![mr, ac, prec];
    match snapshot {
        Ok(c) => {
            let n = (180.0 / cfg.beampattern_step_deg).round() as usize;
            let grid: Vec<f64> = (0..=n).map(|j| -90.0 + j as f64 * cfg.beampattern_step_deg).collect();
            let rad: Vec<f64> = grid.iter().map(|d| d.to_radians()).collect();
            let pac = beampattern(&c.pac, &rad);
            let spc = beampattern(&c.rescaled, &rad);
            let mut header = vec!["theta_deg".to_string()];
            header.extend((1..=pac.len()).map(|k| format!("pac_group_{k}")));
            header.extend((1..=spc.len()).map(|k| format!("spc_rescaled_group_{k}")));
            let mut bp = Table::new("fig7_beampattern", &header);
            for (j, d) in grid.iter().enumerate() {
                let mut row = vec![num(*d)];
                row.extend(pac.iter().chain(&spc).map(|g| num(g[j])));
                bp.push(row);
            }
            tables.push(bp);
            // null depth of each PAC beam toward the other group's users
            let angles = ula_group_angles(
                cfg.nu / 2,
                (-cfg.group_spacing_deg / 2.0).to_radians(),
                (cfg.group_spacing_deg / 2.0).to_radians(),
                cfg.beampattern_theta_a_deg.to_radians(),
            );
            let part = snapshot_inst.partition();
            for k in 0..part.len() {
                let mut probe = rad.clone();
                probe.extend((0..cfg.nu).filter(|&i| part.group_of(i) != k).map(|i| angles[i]));
                let depth = beampattern(&c.pac, &probe)[k][rad.len()..]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                metrics.set(format!("beampattern_pac_group_{}_leakage_db", k + 1), depth);
            }
            let keys = [num(cfg.beampattern_theta_a_deg)];
            let mut sp = precoder_table("fig7_precoders", &["theta_a_deg"]);
            precoder_rows(&mut sp, &keys, "pac", &c.pac);
            precoder_rows(&mut sp, &keys, "spc_rescaled", &c.rescaled);
            tables.push(sp);
        }
        Err(e) => failures.push(PointFailure {
            point: format!("beampattern theta_a_deg={}", num(cfg.beampattern_theta_a_deg)),
            error: e.to_string(),
        }),
    }
    Ok(Study { tables, failures, metrics, points: thetas.len(), solve_report: None })
}

struct RobustPoint {
    pac: PrecoderSet,
    pac_report: SolveReport,
    spc_report: SolveReport,
    rescaled: PrecoderSet,
    pac_sampled: f64,
    rescaled_sampled: f64,
}

fn robust_point(
    inst: &ProblemInstance,
    spec: &RobustSpec,
    seed: u64,
    samples: usize,
    ps: &PipelineSettings,
) -> Result<RobustPoint> {
    let (pac, pac_report) = solve_robust_with(inst, spec, &PowerBudget::per_antenna(inst), seed, ps)?;
    let (spc, spc_report) = solve_robust_with(inst, spec, &PowerBudget::SumPower(inst.total_power()), seed, ps)?;
    let rescaled = rescale_to_pac(&spc, inst.pac());
    let sampled = |w: &PrecoderSet| -> Result<f64> {
        Ok(sampled_worstcase_sinr(w, inst, spec, samples, seed ^ SAMPLING_STREAMS)?
            .iter()
            .zip(inst.targets())
            .map(|(s, g)| s / g)
            .fold(f64::INFINITY, f64::min))
    };
    Ok(RobustPoint {
        pac_sampled: sampled(&pac)?,
        rescaled_sampled: sampled(&rescaled)?,
        pac,
        pac_report,
        spc_report,
        rescaled,
    })
}

fn fig9_10(cfg: &ExperimentConfig) -> Result<Study> {
    if cfg.groups != 2 {
        return Err(Error::Config { line: 0, field: "groups".into(), message: "the ULA layout has two groups".into() });
    }
    let p_tot = dbw(cfg.power_dbw[0]);
    let theta_a = cfg.theta_a_deg[0];
    let inst = ula_instance(cfg.nt, cfg.nu, cfg.group_spacing_deg, theta_a, p_tot)?;
    let ps = pipeline_settings(cfg);
    let specs: Vec<RobustSpec> = cfg.sigma_eps.iter().map(|&s| RobustSpec::sphere(s)).collect::<Result<_>>()?;
    let results = map_points(cfg.parallel, &specs, |j, spec| {
        let out = robust_point(&inst, spec, point_seed(cfg.seed, RANDOMIZATION_STREAMS + j as u64), cfg.error_samples, &ps);
        info!("fig9_10: sigma_eps={} done", cfg.sigma_eps[j]);
        out
    });

    let mut mr = Table::new(
        "fig9_min_rate",
        &["sigma_eps", "pac_certified", "pac_sampled", "pac_bound", "spc_rescaled_certified", "spc_rescaled_sampled"],
    );
    let mut ac = Table::new("fig10_accuracy", &["sigma_eps", "pac", "spc"]);
    let mut prec = precoder_table("fig9_10_precoders", &["sigma_eps"]);
    let mut failures = Vec::new();
    let mut metrics = Metrics::new();
    let (mut pac_acc, mut spc_acc) = (Vec::new(), Vec::new());
    for ((&s, spec), res) in cfg.sigma_eps.iter().zip(&specs).zip(results) {
        let x = num(s);
        let r = match res {
            Ok(r) => r,
            Err(e) => {
                failures.push(PointFailure { point: format!("sigma_eps={x}"), error: e.to_string() });
                continue;
            }
        };
        let tp = certified_worst_case_t(&r.pac, &inst, spec)?;
        let tr = certified_worst_case_t(&r.rescaled, &inst, spec)?;
        mr.push(vec![
            x.clone(),
            num(rate(tp)),
            num(rate(r.pac_sampled)),
            num(rate(r.pac_report.relaxed_t)),
            num(rate(tr)),
            num(rate(r.rescaled_sampled)),
        ]);
        let (ap, as_) = (tp / r.pac_report.relaxed_t, r.spc_report.achieved_t / r.spc_report.relaxed_t);
        pac_acc.push(ap);
        spc_acc.push(as_);
        ac.push(vec![x.clone(), num(ap), num(as_)]);
        precoder_rows(&mut prec, std::slice::from_ref(&x), "pac", &r.pac);
        precoder_rows(&mut prec, std::slice::from_ref(&x), "spc_rescaled", &r.rescaled);
    }
    metrics.accuracy("pac", &pac_acc);
    metrics.accuracy("spc", &spc_acc);

    // rank-one frequency of the relaxed robust solution over a jittered batch
    let batch: Vec<ProblemInstance> = (0..cfg.batch)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(point_seed(cfg.seed, BATCH_STREAMS + b as u64));
            let base = ula_group_angles(
                cfg.nu / 2,
                (-cfg.group_spacing_deg / 2.0).to_radians(),
                (cfg.group_spacing_deg / 2.0).to_radians(),
                theta_a.to_radians(),
            );
            let j = cfg.batch_jitter_deg;
            let angles: Vec<f64> = base.iter().map(|a| a + rng.random_range(-j..=j).to_radians()).collect();
            ProblemInstance::equal_split(gen_ula(cfg.nt, &angles)?, inst.partition().clone(), p_tot)
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..specs.len()).flat_map(|s| (0..batch.len()).map(move |b| (s, b))).collect();
    let settings = SolverSettings::default();
    let flags = map_points(cfg.parallel, &jobs, |_, &(s, b)| {
        solve_relaxed(&batch[b], &PowerBudget::per_antenna(&batch[b]), &specs[s], &settings)
            .map(|fr| fr.is_rank_one(settings.rank_tol))
    });
    let mut ro = Table::new("fig10_rank_one", &["sigma_eps", "pac_frequency", "solved"]);
    for (s, &sigma) in cfg.sigma_eps.iter().enumerate() {
        let mut solved = Vec::new();
        for (j, &(js, b)) in jobs.iter().enumerate() {
            if js != s {
                continue;
            }
            match &flags[j] {
                Ok(f) => solved.push(f64::from(u8::from(*f))),
                Err(e) => failures.push(PointFailure {
                    point: format!("rank batch sigma_eps={} instance={b}", num(sigma)),
                    error: e.to_string(),
                }),
            }
        }
        let freq = mean(solved.iter().copied());
        ro.push(vec![num(sigma), num(freq), solved.len().to_string()]);
        metrics.set(format!("rank_one_frequency_sigma_{}", num(sigma)), freq);
    }
    Ok(Study {
        tables: vec![mr, ac, ro, prec],
        failures,
        metrics,
        points: specs.len() + jobs.len(),
        solve_report: None,
    })
}

fn solve_instance(cfg: &ExperimentConfig) -> Result<Study> {
    let cfg_err = |field: &str, message: String| Error::Config { line: 0, field: field.into(), message };
    let ch = match (&cfg.channel_file, &cfg.reference_channel) {
        (Some(path), None) => ChannelSet::read_csv(std::fs::File::open(path).map_err(|e| {
            cfg_err("channel_file", format!("cannot open {}: {e}", path.display()))
        })?)?,
        (None, Some(name)) => reference_channel(name)?,
        (Some(_), Some(_)) => {
            return Err(cfg_err("channel_file", "set either channel_file or reference_channel, not both".into()))
        }
        (None, None) => return Err(cfg_err("channel_file", "solve_instance needs a channel".into())),
    };
    let (nt, nu) = (ch.nt(), ch.nu());
    let part = match &cfg.partition {
        Some(groups) => {
            let zero_based = groups
                .iter()
                .map(|g| g.iter().map(|&u| u.checked_sub(1).ok_or_else(|| cfg_err("partition", "users are 1-based".into()))).collect())
                .collect::<Result<Vec<Vec<usize>>>>()?;
            GroupPartition::new(zero_based, nu)?
        }
        None => GroupPartition::contiguous(nu, cfg.groups.min(nu))?,
    };
    let pac = cfg.pac_w.clone().unwrap_or_else(|| vec![dbw(cfg.power_dbw[0]) / nt as f64; nt]);
    let targets = cfg.targets.clone().unwrap_or_else(|| vec![1.0; nu]);
    let noise = cfg.noise.clone().unwrap_or_else(|| vec![1.0; nu]);
    let inst = ProblemInstance::new(ch, part, targets, pac, noise)?;
    let (w, report) = solve_pipeline_with(
        &inst,
        &PowerBudget::per_antenna(&inst),
        point_seed(cfg.seed, RANDOMIZATION_STREAMS),
        &pipeline_settings(cfg),
    )?;

    let s = all_sinr(&w, &inst)?;
    let mut users = Table::new("solution_users", &["user", "group", "target", "sinr", "weighted_sinr", "rate"]);
    for (i, &x) in s.iter().enumerate() {
        let g = inst.targets()[i];
        users.push(vec![
            (i + 1).to_string(),
            (inst.partition().group_of(i) + 1).to_string(),
            num(g),
            num(x),
            num(x / g),
            num(rate(x)),
        ]);
    }
    let mut ant = Table::new("solution_antennas", &["antenna", "power", "budget", "utilization"]);
    for (n, (p, b)) in per_antenna_power(&w).iter().zip(inst.pac()).enumerate() {
        ant.push(vec![(n + 1).to_string(), num(*p), num(*b), num(p / b)]);
    }
    let mut prec = precoder_table("solution_precoders", &[]);
    precoder_rows(&mut prec, &[], "pac", &w);

    let t = min_weighted_sinr(&w, &inst)?;
    let mut metrics = Metrics::new();
    metrics.set("t", t);
    metrics.set("relaxed_t", report.relaxed_t);
    metrics.set("accuracy", t / report.relaxed_t);
    metrics.set("max_load", report.max_load);
    Ok(Study {
        tables: vec![users, ant, prec],
        failures: Vec::new(),
        metrics,
        points: 1,
        solve_report: Some(report),
    })
}
