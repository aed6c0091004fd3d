//! Domain types for the multigroup multicast downlink and the scalar metrics
//! evaluated on them.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inner_gain, outer, CMat, CVec, C64};

/// Channel coefficients, one column per user and one row per transmit antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    h: CMat,
}

impl ChannelSet {
    pub fn new(h: CMat) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::invalid("channel matrix must have at least one antenna and one user"));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("channel matrix has non-finite entries"));
        }
        Ok(Self { h })
    }

    pub fn nt(&self) -> usize {
        self.h.nrows()
    }

    pub fn nu(&self) -> usize {
        self.h.ncols()
    }

    pub fn matrix(&self) -> &CMat {
        &self.h
    }

    pub fn user(&self, i: usize) -> CVec {
        self.h.column(i).into_owned()
    }

    /// `h_i h_i†`
    pub fn outer(&self, i: usize) -> CMat {
        outer(&self.user(i))
    }

    pub fn gain(&self, i: usize) -> f64 {
        self.h.column(i).norm_squared()
    }

    /// Writes the matrix as CSV: one row per antenna, `re,im` column pairs per user.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = Vec::with_capacity(2 * self.nu());
        for u in 1..=self.nu() {
            header.push(format!("re_u{u}"));
            header.push(format!("im_u{u}"));
        }
        w.write_record(&header)?;
        for n in 0..self.nt() {
            let mut rec = Vec::with_capacity(2 * self.nu());
            for u in 0..self.nu() {
                rec.push(format!("{:e}", self.h[(n, u)].re));
                rec.push(format!("{:e}", self.h[(n, u)].im));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`ChannelSet::write_csv`]. A header row is
    /// optional; `#` lines are comments.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(v) => rows.push(v),
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::invalid(format!("channel csv row {}: {e}", line + 1))),
            }
        }
        let nt = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if nt == 0 || width == 0 || !width.is_multiple_of(2) || rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("channel csv must be a rectangular table of re,im pairs"));
        }
        let nu = width / 2;
        let h = CMat::from_fn(nt, nu, |n, u| C64::new(rows[n][2 * u], rows[n][2 * u + 1]));
        Self::new(h)
    }
}

/// Partition of the users into disjoint, nonempty multicast groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl GroupPartition {
    /// `groups` holds zero-based user indices.
    pub fn new(groups: Vec<Vec<usize>>, nu: usize) -> Result<Self> {
        if groups.is_empty() || groups.len() > nu {
            return Err(Error::invalid(format!(
                "need 1 <= G <= Nu, got G = {} for Nu = {nu}",
                groups.len()
            )));
        }
        let mut group_of = vec![usize::MAX; nu];
        for (k, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::invalid(format!("group {} is empty", k + 1)));
            }
            for &i in g {
                if i >= nu {
                    return Err(Error::invalid(format!("user index {i} out of range for Nu = {nu}")));
                }
                if group_of[i] != usize::MAX {
                    return Err(Error::invalid(format!("user {i} appears in more than one group")));
                }
                group_of[i] = k;
            }
        }
        if let Some(i) = group_of.iter().position(|&k| k == usize::MAX) {
            return Err(Error::invalid(format!("user {i} belongs to no group")));
        }
        Ok(Self { groups, group_of })
    }

    /// Consecutive users in `g` groups of (nearly) equal size.
    pub fn contiguous(nu: usize, g: usize) -> Result<Self> {
        if g == 0 || g > nu {
            return Err(Error::invalid(format!("need 1 <= G <= Nu, got G = {g}, Nu = {nu}")));
        }
        let base = nu / g;
        let extra = nu % g;
        let mut groups = Vec::with_capacity(g);
        let mut next = 0;
        for k in 0..g {
            let size = base + usize::from(k < extra);
            groups.push((next..next + size).collect());
            next += size;
        }
        Self::new(groups, nu)
    }

    pub fn unicast(nu: usize) -> Self {
        Self::contiguous(nu, nu).expect("unicast partition is always valid")
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn nu(&self) -> usize {
        self.group_of.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn members(&self, k: usize) -> &[usize] {
        &self.groups[k]
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.group_of[i]
    }

    pub fn is_unicast(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }
}

/// Everything a solver needs: channels, groups, weights, per-antenna limits, noise.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    channels: ChannelSet,
    partition: GroupPartition,
    targets: Vec<f64>,
    pac: Vec<f64>,
    noise: Vec<f64>,
}

impl ProblemInstance {
    pub fn new(
        channels: ChannelSet,
        partition: GroupPartition,
        targets: Vec<f64>,
        pac: Vec<f64>,
        noise: Vec<f64>,
    ) -> Result<Self> {
        let (nt, nu) = (channels.nt(), channels.nu());
        if partition.nu() != nu {
            return Err(Error::invalid(format!(
                "partition covers {} users but the channel has {nu}",
                partition.nu()
            )));
        }
        check_positive("SINR target", &targets, nu)?;
        check_positive("per-antenna power", &pac, nt)?;
        check_positive("noise power", &noise, nu)?;
        Ok(Self { channels, partition, targets, pac, noise })
    }

    /// Unit weights, unit noise, and `p_tot` split evenly over the antennas.
    pub fn equal_split(channels: ChannelSet, partition: GroupPartition, p_tot: f64) -> Result<Self> {
        let (nt, nu) = (channels.nt(), channels.nu());
        Self::new(channels, partition, vec![1.0; nu], vec![p_tot / nt as f64; nt], vec![1.0; nu])
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn pac(&self) -> &[f64] {
        &self.pac
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn nt(&self) -> usize {
        self.channels.nt()
    }

    pub fn nu(&self) -> usize {
        self.channels.nu()
    }

    pub fn groups(&self) -> usize {
        self.partition.len()
    }

    pub fn total_power(&self) -> f64 {
        self.pac.iter().sum()
    }

    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Self> {
        Self::new(self.channels.clone(), self.partition.clone(), targets, self.pac.clone(), self.noise.clone())
    }

    pub fn with_pac(&self, pac: Vec<f64>) -> Result<Self> {
        Self::new(self.channels.clone(), self.partition.clone(), self.targets.clone(), pac, self.noise.clone())
    }

    pub fn with_noise(&self, noise: Vec<f64>) -> Result<Self> {
        Self::new(self.channels.clone(), self.partition.clone(), self.targets.clone(), self.pac.clone(), noise)
    }

    pub fn with_channels(&self, channels: ChannelSet) -> Result<Self> {
        Self::new(channels, self.partition.clone(), self.targets.clone(), self.pac.clone(), self.noise.clone())
    }
}

fn check_positive(what: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::invalid(format!("{what} vector has length {} but expected {len}", v.len())));
    }
    if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::invalid(format!("{what} must be finite and positive, got {x}")));
    }
    Ok(())
}

/// One beamforming vector per multicast group.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    w: Vec<CVec>,
}

impl PrecoderSet {
    pub fn new(w: Vec<CVec>) -> Result<Self> {
        let nt = w.first().map(|v| v.len()).ok_or_else(|| Error::invalid("empty precoder set"))?;
        if nt == 0 || w.iter().any(|v| v.len() != nt) {
            return Err(Error::invalid("precoders must share a nonzero length"));
        }
        if w.iter().flat_map(|v| v.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("precoder has non-finite entries"));
        }
        Ok(Self { w })
    }

    pub fn groups(&self) -> usize {
        self.w.len()
    }

    pub fn nt(&self) -> usize {
        self.w[0].len()
    }

    pub fn vectors(&self) -> &[CVec] {
        &self.w
    }

    pub fn vector(&self, k: usize) -> &CVec {
        &self.w[k]
    }

    pub fn total_power(&self) -> f64 {
        self.w.iter().map(|v| v.norm_squared()).sum()
    }

    /// Scales group `k` by `sqrt(powers[k])`.
    pub fn with_group_powers(&self, powers: &[f64]) -> Self {
        let w = self
            .w
            .iter()
            .zip(powers)
            .map(|(v, &p)| v.scale(p.max(0.0).sqrt()))
            .collect();
        Self { w }
    }

    /// Multiplies antenna row `n` of every precoder by `factors[n]`.
    pub fn with_row_scaling(&self, factors: &[f64]) -> Self {
        let w = self
            .w
            .iter()
            .map(|v| DVector::from_iterator(v.len(), v.iter().zip(factors).map(|(z, &f)| z * f)))
            .collect();
        Self { w }
    }

    pub fn covariances(&self) -> CovarianceSet {
        CovarianceSet { x: self.w.iter().map(outer).collect() }
    }
}

/// Relaxed transmit covariances, one Hermitian PSD matrix per group.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    x: Vec<CMat>,
}

impl CovarianceSet {
    pub fn new(x: Vec<CMat>, psd_tol: f64) -> Result<Self> {
        let n = x.first().map(|m| m.nrows()).ok_or_else(|| Error::invalid("empty covariance set"))?;
        for (k, m) in x.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::invalid(format!("covariance {k} is not {n}x{n}")));
            }
            if !crate::linalg::is_hermitian(m, 1e-9) {
                return Err(Error::invalid(format!("covariance {k} is not Hermitian")));
            }
            let (eig, _) = crate::linalg::hermitian_eigen(m);
            let (top, bottom) = (eig[0], eig[eig.len() - 1]);
            if bottom < -psd_tol * top.max(1.0) {
                return Err(Error::invalid(format!(
                    "covariance {k} is not PSD (min eigenvalue {bottom:e})"
                )));
            }
        }
        Ok(Self { x })
    }

    pub fn groups(&self) -> usize {
        self.x.len()
    }

    pub fn nt(&self) -> usize {
        self.x[0].nrows()
    }

    pub fn matrices(&self) -> &[CMat] {
        &self.x
    }

    pub fn matrix(&self, k: usize) -> &CMat {
        &self.x[k]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { x: self.x.iter().map(|m| m.scale(c)).collect() }
    }

    /// `[Σ_k X_k]_nn` for every antenna.
    pub fn per_antenna_power(&self) -> Vec<f64> {
        (0..self.nt()).map(|n| self.x.iter().map(|m| m[(n, n)].re).sum()).collect()
    }

    /// Relaxed SINR of user `i`: `Tr(Q_i X_k) / (Σ_{l≠k} Tr(Q_i X_l) + σ_i²)`.
    pub fn sinr(&self, inst: &ProblemInstance, i: usize) -> f64 {
        let h = inst.channels().user(i);
        let k = inst.partition().group_of(i);
        let quad = |m: &CMat| h.dotc(&(m * &h)).re.max(0.0);
        let interference: f64 = (0..self.groups()).filter(|&l| l != k).map(|l| quad(&self.x[l])).sum();
        quad(&self.x[k]) / (interference + inst.noise()[i])
    }

    /// `min_i SINR_i / γ_i` in the relaxed domain.
    pub fn min_weighted_sinr(&self, inst: &ProblemInstance) -> f64 {
        (0..inst.nu())
            .map(|i| self.sinr(inst, i) / inst.targets()[i])
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_dims(w: &PrecoderSet, inst: &ProblemInstance) -> Result<()> {
    if w.nt() != inst.nt() || w.groups() != inst.groups() {
        return Err(Error::invalid(format!(
            "precoder set is {} groups x {} antennas, instance is {} x {}",
            w.groups(),
            w.nt(),
            inst.groups(),
            inst.nt()
        )));
    }
    Ok(())
}

/// SINR of user `i` (zero-based) under precoders `w`.
pub fn sinr(w: &PrecoderSet, inst: &ProblemInstance, i: usize) -> Result<f64> {
    check_dims(w, inst)?;
    if i >= inst.nu() {
        return Err(Error::invalid(format!("user {i} out of range for Nu = {}", inst.nu())));
    }
    Ok(sinr_with_channel(w, &inst.channels().user(i), inst.partition().group_of(i), inst.noise()[i]))
}

/// SINR seen through an explicit channel vector, used when the true channel
/// differs from the nominal one.
pub fn sinr_with_channel(w: &PrecoderSet, h: &CVec, group: usize, noise: f64) -> f64 {
    let mut interference = 0.0;
    for (l, v) in w.vectors().iter().enumerate() {
        if l != group {
            interference += inner_gain(v, h);
        }
    }
    inner_gain(w.vector(group), h) / (interference + noise)
}

pub fn all_sinr(w: &PrecoderSet, inst: &ProblemInstance) -> Result<Vec<f64>> {
    (0..inst.nu()).map(|i| sinr(w, inst, i)).collect()
}

/// Achieved fairness level `min_i SINR_i / γ_i`.
pub fn min_weighted_sinr(w: &PrecoderSet, inst: &ProblemInstance) -> Result<f64> {
    Ok(all_sinr(w, inst)?
        .iter()
        .zip(inst.targets())
        .map(|(s, g)| s / g)
        .fold(f64::INFINITY, f64::min))
}

/// `n ↦ Σ_k |w_k[n]|²`
pub fn per_antenna_power(w: &PrecoderSet) -> Vec<f64> {
    (0..w.nt())
        .map(|n| w.vectors().iter().map(|v| v[n].norm_sqr()).sum())
        .collect()
}

/// `log2(1 + min_i SINR_i)`
pub fn min_rate(w: &PrecoderSet, inst: &ProblemInstance) -> Result<f64> {
    let min = all_sinr(w, inst)?.into_iter().fold(f64::INFINITY, f64::min);
    Ok((1.0 + min).log2())
}

pub fn rates(w: &PrecoderSet, inst: &ProblemInstance) -> Result<Vec<f64>> {
    Ok(all_sinr(w, inst)?.into_iter().map(|s| (1.0 + s).log2()).collect())
}

/// Radiated power over the summed per-antenna budgets.
pub fn power_utilization(w: &PrecoderSet, inst: &ProblemInstance) -> Result<f64> {
    check_dims(w, inst)?;
    Ok(w.total_power() / inst.total_power())
}

/// Per-antenna load `P_n(w) / P_n`.
pub fn antenna_utilization(w: &PrecoderSet, inst: &ProblemInstance) -> Result<Vec<f64>> {
    check_dims(w, inst)?;
    Ok(per_antenna_power(w).iter().zip(inst.pac()).map(|(a, b)| a / b).collect())
}

/// Circularly-symmetric complex Gaussian channel, unit variance per entry.
pub fn gen_rayleigh(nt: usize, nu: usize, seed: u64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_rayleigh_with(nt, nu, &mut rng)
}

pub fn gen_rayleigh_with<R: rand::Rng + ?Sized>(nt: usize, nu: usize, rng: &mut R) -> ChannelSet {
    let h = CMat::from_fn(nt.max(1), nu.max(1), |_, _| complex_normal(rng));
    ChannelSet::new(h).expect("gaussian entries are finite")
}

/// Standard complex normal sample, `E|z|² = 1`.
pub fn complex_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Half-wavelength ULA steering vector `a(θ)[n] = exp(jπ n sin θ)`.
pub fn steering_vector(nt: usize, theta: f64) -> CVec {
    let phase = std::f64::consts::PI * theta.sin();
    CVec::from_fn(nt, |n, _| C64::from_polar(1.0, phase * n as f64))
}

/// Line-of-sight ULA channels, one user per angle (radians from broadside).
pub fn gen_ula(nt: usize, angles: &[f64]) -> Result<ChannelSet> {
    if nt == 0 || angles.is_empty() {
        return Err(Error::invalid("ULA needs at least one antenna and one user"));
    }
    let mut h = CMat::zeros(nt, angles.len());
    for (u, &theta) in angles.iter().enumerate() {
        h.set_column(u, &steering_vector(nt, theta));
    }
    ChannelSet::new(h)
}

/// Two-group ULA layout: group 1 users spread by `separation` around
/// `center_a`, group 2 around `center_b`. Returns angles in radians.
pub fn ula_group_angles(per_group: usize, center_a: f64, center_b: f64, separation: f64) -> Vec<f64> {
    let offsets: Vec<f64> = (0..per_group)
        .map(|j| (j as f64 - (per_group as f64 - 1.0) / 2.0) * separation)
        .collect();
    offsets
        .iter()
        .map(|o| center_a + o)
        .chain(offsets.iter().map(|o| center_b + o))
        .collect()
}

/// Names of the built-in literal channel matrices.
pub const REFERENCE_CHANNELS: [&str; 2] = ["das_5x4", "paradigm_2x4"];

// (magnitude, phase in degrees); rows are antennas, columns are users.
const DAS_5X4: [[(f64, f64); 4]; 5] = [
    [(2.94, 41.0), (11.0, -25.0), (4.4, 50.0), (6.6, -4.0)],
    [(13.2, -150.0), (4.8, 14.0), (15.2, -7.0), (4.8, -37.0)],
    [(12.0, -155.0), (1.5, 163.0), (13.5, -105.0), (3.9, -46.0)],
    [(0.02, -53.0), (0.03, -66.0), (0.03, 120.0), (0.03, -129.0)],
    [(5.66, 137.0), (9.2, 49.0), (13.0, -175.0), (2.45, 126.0)],
];

const PARADIGM_2X4: [[(f64, f64); 4]; 2] = [
    [(0.2, 106.0), (90.0, -69.0), (0.5, -99.0), (0.5, 61.0)],
    [(0.8, 111.0), (120.0, -112.0), (1.0, 127.0), (1.5, 49.0)],
];

fn polar_table<const R: usize, const C: usize>(t: &[[(f64, f64); C]; R]) -> CMat {
    CMat::from_fn(R, C, |n, u| {
        let (mag, deg) = t[n][u];
        C64::from_polar(mag, deg.to_radians())
    })
}

/// Literal channel matrices: `das_5x4` (5 antennas, antenna 4 nearly dead)
/// and `paradigm_2x4` (2 antennas, one strong user in group 1).
pub fn reference_channel(name: &str) -> Result<ChannelSet> {
    match name {
        "das_5x4" => ChannelSet::new(polar_table(&DAS_5X4)),
        "paradigm_2x4" => ChannelSet::new(polar_table(&PARADIGM_2X4)),
        other => Err(Error::invalid(format!(
            "unknown reference channel `{other}` (known: {})",
            REFERENCE_CHANNELS.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    Bpsk,
    Qpsk,
    /// M-ary constellation for orders above 4.
    Order(u32),
}

impl Modulation {
    pub fn from_order(m: u32) -> Self {
        match m {
            0..=2 => Modulation::Bpsk,
            4 => Modulation::Qpsk,
            m => Modulation::Order(m),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Modulation::Bpsk => "BPSK".into(),
            Modulation::Qpsk => "QPSK".into(),
            Modulation::Order(m) => format!("{m}-ary"),
        }
    }
}

/// SINR thresholds (linear, ascending) at which a group upgrades its constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationLadder {
    steps: Vec<(f64, Modulation)>,
}

impl Default for ModulationLadder {
    /// BPSK below 0 dB, QPSK at or above.
    fn default() -> Self {
        Self { steps: vec![(1.0, Modulation::Qpsk)] }
    }
}

impl ModulationLadder {
    pub fn new(steps: Vec<(f64, Modulation)>) -> Result<Self> {
        if steps.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::invalid("modulation thresholds must be ascending"));
        }
        Ok(Self { steps })
    }

    /// Power-of-two orders up to `max_order`; leaving order `M` needs `SINR ≥ log2 M`.
    pub fn up_to(max_order: u32) -> Self {
        let mut steps = Vec::new();
        let mut m = 2;
        while m * 2 <= max_order {
            steps.push(((m as f64).log2(), Modulation::from_order(m * 2)));
            m *= 2;
        }
        Self { steps }
    }

    pub fn select(&self, min_sinr: f64) -> Modulation {
        self.steps
            .iter()
            .rev()
            .find(|(th, _)| min_sinr >= *th)
            .map_or(Modulation::Bpsk, |(_, m)| *m)
    }
}

/// Per-group constellation chosen from the worst member SINR.
pub fn assign_modulation(
    w: &PrecoderSet,
    inst: &ProblemInstance,
    ladder: &ModulationLadder,
) -> Result<Vec<Modulation>> {
    let s = all_sinr(w, inst)?;
    Ok(inst
        .partition()
        .groups()
        .iter()
        .map(|g| ladder.select(g.iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min)))
        .collect())
}

pub fn group_min_sinr(w: &PrecoderSet, inst: &ProblemInstance) -> Result<Vec<f64>> {
    let s = all_sinr(w, inst)?;
    Ok(inst
        .partition()
        .groups()
        .iter()
        .map(|g| g.iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min))
        .collect())
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Real-valued convenience constructor for tests and small literals.
pub fn real_matrix(nt: usize, nu: usize, data: &[f64]) -> Result<ChannelSet> {
    let m = DMatrix::from_row_slice(nt, nu, data);
    ChannelSet::new(m.map(|x| C64::new(x, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cvec(v: &[(f64, f64)]) -> CVec {
        CVec::from_iterator(v.len(), v.iter().map(|&(a, b)| C64::new(a, b)))
    }

    fn single(nt: usize, h: &[f64], p: f64) -> ProblemInstance {
        let ch = real_matrix(nt, 1, h).unwrap();
        ProblemInstance::new(ch, GroupPartition::unicast(1), vec![1.0], vec![p; nt], vec![1.0]).unwrap()
    }

    #[test]
    fn sinr_single_antenna_no_interference() {
        let inst = single(1, &[1.0], 4.0);
        let w = PrecoderSet::new(vec![cvec(&[(2.0, 0.0)])]).unwrap();
        assert_relative_eq!(sinr(&w, &inst, 0).unwrap(), 4.0);
    }

    #[test]
    fn sinr_orthogonal_precoders() {
        let ch = real_matrix(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let inst = ProblemInstance::equal_split(ch, GroupPartition::unicast(2), 2.0).unwrap();
        let w = PrecoderSet::new(vec![cvec(&[(1.0, 0.0), (0.0, 0.0)]), cvec(&[(0.0, 0.0), (1.0, 0.0)])]).unwrap();
        assert_relative_eq!(sinr(&w, &inst, 0).unwrap(), 1.0);
        assert_relative_eq!(sinr(&w, &inst, 1).unwrap(), 1.0);
    }

    #[test]
    fn sinr_matches_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ch = gen_rayleigh(3, 4, 5);
        let part = GroupPartition::new(vec![vec![0, 2], vec![1, 3]], 4).unwrap();
        let noise = vec![0.5, 1.0, 1.5, 2.0];
        let inst = ProblemInstance::new(ch.clone(), part, vec![1.0; 4], vec![1.0; 3], noise.clone()).unwrap();
        let w = PrecoderSet::new((0..2).map(|_| CVec::from_fn(3, |_, _| complex_normal(&mut rng))).collect()).unwrap();
        let group = [0usize, 1, 0, 1];
        for i in 0..4 {
            let mut power = [0.0f64; 2];
            for (k, p) in power.iter_mut().enumerate() {
                let mut acc_re = 0.0;
                let mut acc_im = 0.0;
                for n in 0..3 {
                    // conj(w) * h
                    let a = w.vector(k)[n];
                    let b = ch.matrix()[(n, i)];
                    acc_re += a.re * b.re + a.im * b.im;
                    acc_im += a.re * b.im - a.im * b.re;
                }
                *p = acc_re * acc_re + acc_im * acc_im;
            }
            let own = power[group[i]];
            let other = power[1 - group[i]];
            assert_relative_eq!(sinr(&w, &inst, i).unwrap(), own / (other + noise[i]), max_relative = 1e-12);
        }
    }

    #[test]
    fn sinr_dimension_mismatch_is_error() {
        let inst = single(2, &[1.0, 1.0], 1.0);
        let w = PrecoderSet::new(vec![cvec(&[(1.0, 0.0)])]).unwrap();
        assert!(matches!(sinr(&w, &inst, 0), Err(Error::InvalidInput(_))));
        let w = PrecoderSet::new(vec![cvec(&[(1.0, 0.0), (0.0, 0.0)])]).unwrap();
        assert!(sinr(&w, &inst, 3).is_err());
    }

    #[test]
    fn per_antenna_power_examples() {
        let w = PrecoderSet::new(vec![cvec(&[(1.0, 0.0), (0.0, 0.0)])]).unwrap();
        assert_eq!(per_antenna_power(&w), vec![1.0, 0.0]);
        let w = PrecoderSet::new(vec![cvec(&[(1.0, 0.0), (0.0, 0.0)]), cvec(&[(0.0, 0.0), (1.0, 0.0)])]).unwrap();
        assert_eq!(per_antenna_power(&w), vec![1.0, 1.0]);
    }

    #[test]
    fn per_antenna_power_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = PrecoderSet::new((0..3).map(|_| CVec::from_fn(4, |_, _| complex_normal(&mut rng))).collect()).unwrap();
        let got = per_antenna_power(&w);
        for n in 0..4 {
            let mut acc = 0.0;
            for k in 0..3 {
                let z = w.vector(k)[n];
                acc += z.re * z.re + z.im * z.im;
            }
            assert_relative_eq!(got[n], acc, max_relative = 1e-14);
        }
    }

    #[test]
    fn rayleigh_is_seed_deterministic() {
        assert_eq!(gen_rayleigh(4, 3, 9), gen_rayleigh(4, 3, 9));
        assert_ne!(gen_rayleigh(4, 3, 9), gen_rayleigh(4, 3, 10));
    }

    #[test]
    fn rayleigh_statistics() {
        let samples = 10_000;
        let ch = gen_rayleigh(1, samples, 2024);
        let entries: Vec<C64> = ch.matrix().iter().copied().collect();
        let mean = entries.iter().sum::<C64>() / samples as f64;
        let var = entries.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / (samples as f64 - 1.0);
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        assert!(mean.norm() <= 3.0 / (samples as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn ula_broadside_and_norm() {
        let ch = gen_ula(4, &[0.0, 0.3, -1.1]).unwrap();
        for n in 0..4 {
            assert_relative_eq!(ch.matrix()[(n, 0)].re, 1.0);
            assert_relative_eq!(ch.matrix()[(n, 0)].im, 0.0);
        }
        for u in 0..3 {
            assert_relative_eq!(ch.gain(u), 4.0, max_relative = 1e-12);
            for n in 0..4 {
                assert_relative_eq!(ch.matrix()[(n, u)].norm(), 1.0, max_relative = 1e-12);
            }
        }
        let same = gen_ula(3, &[0.4, 0.4]).unwrap();
        assert_eq!(same.user(0), same.user(1));
    }

    #[test]
    fn reference_channels() {
        let das = reference_channel("das_5x4").unwrap();
        assert_eq!((das.nt(), das.nu()), (5, 4));
        let z = das.matrix()[(3, 0)];
        assert_relative_eq!(z.norm(), 0.02, max_relative = 1e-12);
        assert_relative_eq!(z.arg().to_degrees(), -53.0, max_relative = 1e-12);
        let par = reference_channel("paradigm_2x4").unwrap();
        assert_eq!((par.nt(), par.nu()), (2, 4));
        let z = par.matrix()[(1, 1)];
        assert_relative_eq!(z.norm(), 120.0, max_relative = 1e-12);
        assert_relative_eq!(z.arg().to_degrees(), -112.0, max_relative = 1e-12);
        assert!(reference_channel("nope").is_err());
    }

    #[test]
    fn rate_and_utilization() {
        let ch = real_matrix(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let inst = ProblemInstance::equal_split(ch, GroupPartition::unicast(2), 2.0).unwrap();
        let w = PrecoderSet::new(vec![cvec(&[(1.0, 0.0), (0.0, 0.0)]), cvec(&[(0.0, 0.0), (1.0, 0.0)])]).unwrap();
        assert_relative_eq!(min_rate(&w, &inst).unwrap(), 1.0);
        assert_relative_eq!(power_utilization(&w, &inst).unwrap(), 1.0);
    }

    #[test]
    fn modulation_thresholds() {
        let ladder = ModulationLadder::default();
        assert_eq!(ladder.select(0.5), Modulation::Bpsk);
        assert_eq!(ladder.select(2.0), Modulation::Qpsk);
        assert_eq!(ladder.select(1.0), Modulation::Qpsk);
        let deep = ModulationLadder::up_to(16);
        assert_eq!(deep.select(2.5), Modulation::Order(8));
        assert_eq!(deep.select(3.0), Modulation::Order(16));
        assert!(ModulationLadder::new(vec![(2.0, Modulation::Order(8)), (1.0, Modulation::Qpsk)]).is_err());
    }

    #[test]
    fn partition_validation() {
        assert!(GroupPartition::new(vec![vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(GroupPartition::new(vec![vec![0], vec![2]], 3).is_err());
        assert!(GroupPartition::new(vec![vec![0, 1, 2], vec![]], 3).is_err());
        assert!(GroupPartition::new(vec![vec![0, 5]], 3).is_err());
        let p = GroupPartition::contiguous(5, 2).unwrap();
        assert_eq!(p.groups(), &[vec![0, 1, 2], vec![3, 4]]);
        assert_eq!(p.group_of(4), 1);
    }

    #[test]
    fn instance_validation() {
        let ch = gen_rayleigh(2, 2, 1);
        let part = GroupPartition::unicast(2);
        assert!(ProblemInstance::new(ch.clone(), part.clone(), vec![1.0, 0.0], vec![1.0; 2], vec![1.0; 2]).is_err());
        assert!(ProblemInstance::new(ch.clone(), part.clone(), vec![1.0; 2], vec![1.0; 3], vec![1.0; 2]).is_err());
        assert!(ProblemInstance::new(ch, GroupPartition::unicast(3), vec![1.0; 2], vec![1.0; 2], vec![1.0; 2]).is_err());
    }

    #[test]
    fn channel_csv_round_trip() {
        let ch = gen_rayleigh(3, 2, 77);
        let mut buf = Vec::new();
        ch.write_csv(&mut buf).unwrap();
        let back = ChannelSet::read_csv(buf.as_slice()).unwrap();
        for (a, b) in ch.matrix().iter().zip(back.matrix().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(ChannelSet::read_csv("1,2,3\n".as_bytes()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn antenna_powers_sum_to_total(seed in 0u64..500, g in 1usize..4, nt in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = PrecoderSet::new((0..g).map(|_| CVec::from_fn(nt, |_, _| complex_normal(&mut rng))).collect()).unwrap();
            let s: f64 = per_antenna_power(&w).iter().sum();
            proptest::prop_assert!((s - w.total_power()).abs() <= 1e-12 * (1.0 + s));
        }

        #[test]
        fn sinr_scale_covariant_in_noise(seed in 0u64..500, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ch = gen_rayleigh(3, 4, seed);
            let noise: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..2.0)).collect();
            let inst = ProblemInstance::new(ch, GroupPartition::contiguous(4, 2).unwrap(), vec![1.0; 4], vec![1.0; 3], noise.clone()).unwrap();
            let scaled = inst.with_noise(noise.iter().map(|x| x * c).collect()).unwrap();
            let w = PrecoderSet::new((0..2).map(|_| CVec::from_fn(3, |_, _| complex_normal(&mut rng))).collect()).unwrap();
            let ws = w.with_group_powers(&[c, c]);
            for i in 0..4 {
                let a = sinr(&w, &inst, i).unwrap();
                let b = sinr(&ws, &scaled, i).unwrap();
                proptest::prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
            }
        }
    }
}
