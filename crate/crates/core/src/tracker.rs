//! Second-order statistics: closed-form values for oracle mode and
//! exponentially averaged estimates for tracked mode.
//!
//! Every scope (one AP, the CPU, or a master AP over fused signals) exposes the
//! same quantities for a target UE `k`:
//!
//! * `Q`, correlation of the received pilot matrix,
//! * `Q_tk`, covariance of the despread signal of UE `k`,
//! * `Rbreve`, the scattered-component correlation of the target channel,
//!
//! linked by `Rbreve = (tau Q_tk + tau p hbar hbar^H - Q) / (p tau (tau - 1))`.

use crate::config::{Averaging, LosMode, SimConfig};
use crate::error::{Result, SimError};
use crate::estimators::FusionSet;
use crate::linalg::{hermitian_part, clip_between, identity, outer, psd_project_scaled, CMat, CVec, C64};
use crate::network::{collective, NetworkStats};

/// `eta * prev + (1 - eta) * sample`, returned Hermitian.
pub fn exp_update(prev: &CMat, sample: &CMat, eta: f64) -> CMat {
    hermitian_part(&(prev.scale(eta) + sample.scale(1.0 - eta)))
}

/// Recovers the scattered correlation from the received and despread
/// correlations, then repairs it to PSD by eigenvalue clipping in the
/// coordinates where `q` has unit diagonal.
pub fn recover_rbreve(q_tk: &CMat, q: &CMat, los: &CVec, power: f64, tau_p: usize) -> Result<CMat> {
    if tau_p < 2 {
        return Err(SimError::InvalidConfig("recovering Rbreve needs tau_p >= 2".into()));
    }
    let tau = tau_p as f64;
    let raw = (q_tk.scale(tau) + outer(los).scale(tau * power) - q).scale(1.0 / (power * tau * (tau - 1.0)));
    Ok(psd_project_scaled(&raw, q))
}

/// Where a set of statistics lives.
#[derive(Debug, Clone, Copy)]
pub enum Scope<'a> {
    /// AP `j`, dimension `N`.
    Local(usize),
    /// All APs stacked, dimension `L N`.
    Central,
    /// The master AP of a fusion set, dimension `N + L - 1`.
    Master(&'a FusionSet),
}

/// Closed-form statistics for one target UE at one scope.
#[derive(Debug, Clone)]
pub struct TrueStats {
    pub q: CMat,
    pub q_tk: CMat,
    /// Scattered correlation of the target (the LMMSE numerator).
    pub rbreve: CMat,
    /// Mean of the target channel.
    pub los: CVec,
    /// Full correlation of the target channel.
    pub cov: CMat,
}

impl TrueStats {
    /// The same statistics seen through `V^H (.) V`. The noise term becomes
    /// `sigma^2 V^H V` exactly.
    pub fn fused(&self, fusion: &FusionSet) -> TrueStats {
        TrueStats {
            q: fusion.conjugate(&self.q),
            q_tk: fusion.conjugate(&self.q_tk),
            rbreve: fusion.conjugate(&self.rbreve),
            los: fusion.apply_adjoint(&self.los),
            cov: fusion.conjugate(&self.cov),
        }
    }

    pub fn dim(&self) -> usize {
        self.los.len()
    }
}

fn scope_views(stats: &NetworkStats, scope: Scope<'_>) -> Vec<(CVec, CMat)> {
    (0..stats.ues())
        .map(|ue| match scope {
            Scope::Local(ap) => {
                let link = stats.link(ap, ue);
                (link.los.clone(), link.nlos_cov.clone())
            }
            _ => {
                let col = collective(stats, ue);
                (col.los, col.nlos_cov)
            }
        })
        .collect()
}

fn assemble(views: &[(CVec, CMat)], cfg: &SimConfig, target: usize) -> TrueStats {
    let dim = views[0].0.len();
    let tau = cfg.tau_p as f64;
    let p = cfg.power;
    let mut q = CMat::zeros(dim, dim);
    let mut q_tk = CMat::zeros(dim, dim);
    let mut target_cov = CMat::zeros(dim, dim);
    for (ue, (los, nlos)) in views.iter().enumerate() {
        let cov = outer(los) + nlos;
        q += cov.scale(tau * p);
        if ue == target {
            q_tk += nlos.scale(p * tau);
            target_cov = cov;
        } else {
            q_tk += cov.scale(p);
        }
    }
    q += identity(dim).scale(tau * cfg.sigma2);
    q_tk += identity(dim).scale(cfg.sigma2);
    TrueStats {
        q,
        q_tk,
        rbreve: views[target].1.clone(),
        los: views[target].0.clone(),
        cov: target_cov,
    }
}

fn empty_stats(dim: usize, cfg: &SimConfig) -> TrueStats {
    TrueStats {
        q: identity(dim).scale(cfg.tau_p as f64 * cfg.sigma2),
        q_tk: identity(dim).scale(cfg.sigma2),
        rbreve: CMat::zeros(dim, dim),
        los: CVec::zeros(dim),
        cov: CMat::zeros(dim, dim),
    }
}

/// All closed-form statistics for `target` at `scope`. Master scope
/// conditions on the realized fusion vectors.
pub fn true_stats(stats: &NetworkStats, cfg: &SimConfig, target: usize, scope: Scope<'_>) -> TrueStats {
    let views = scope_views(stats, scope);
    let base = if views.is_empty() {
        let dim = match scope {
            Scope::Local(_) => stats.antennas(),
            _ => stats.aps() * stats.antennas(),
        };
        empty_stats(dim, cfg)
    } else {
        assemble(&views, cfg, target)
    };
    match scope {
        Scope::Master(fusion) => base.fused(fusion),
        _ => base,
    }
}

/// Closed-form received-signal correlation at `scope`.
pub fn true_q(stats: &NetworkStats, cfg: &SimConfig, scope: Scope<'_>) -> CMat {
    true_stats(stats, cfg, 0, scope).q
}

/// Closed-form despread covariance of `target` at `scope`.
pub fn true_q_tk(stats: &NetworkStats, cfg: &SimConfig, target: usize, scope: Scope<'_>) -> CMat {
    true_stats(stats, cfg, target, scope).q_tk
}

/// Running mean of `y / sqrt(p tau)`.
#[derive(Debug, Clone)]
pub struct LosMean {
    sum: CVec,
    count: usize,
    limit: Option<usize>,
}

impl LosMean {
    pub fn new(dim: usize, limit: Option<usize>) -> Self {
        Self { sum: CVec::zeros(dim), count: 0, limit }
    }

    pub fn update(&mut self, y: &CVec) {
        if self.limit.is_some_and(|limit| self.count >= limit) {
            return;
        }
        self.sum += y;
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean of the despread samples themselves, `sqrt(p tau) hbar`.
    pub fn mean_observation(&self) -> CVec {
        if self.count == 0 {
            return CVec::zeros(self.sum.len());
        }
        self.sum.unscale(self.count as f64)
    }

    pub fn mean(&self, power: f64, tau_p: usize) -> CVec {
        if self.count == 0 {
            return CVec::zeros(self.sum.len());
        }
        self.sum.scale(1.0 / (self.count as f64 * (power * tau_p as f64).sqrt()))
    }
}

/// Statistics estimated by a tracker for one target.
#[derive(Debug, Clone)]
pub struct TrackedStats {
    pub los: CVec,
    pub rbreve: CMat,
    /// Centered despread covariance.
    pub q_tk: CMat,
}

/// Exponentially averaged correlations at one scope.
///
/// Each despread sample is centered at the current LoS estimate before it
/// enters `q_tk`, so every update adds a PSD term. Averaging raw `y y^H` and
/// subtracting `p tau hbar hbar^H` afterwards leaves LoS cross terms whose
/// fluctuations dwarf the scattered covariance and make the result indefinite.
#[derive(Debug, Clone)]
pub struct ScopeTracker {
    averaging: Averaging,
    eta: f64,
    q: CMat,
    q_tk: Vec<CMat>,
    los: Vec<LosMean>,
    q_seen: usize,
    q_tk_seen: Vec<usize>,
}

impl ScopeTracker {
    /// Tracker initialized at the noise floor: `Q = tau sigma^2 F`, `Q_tk = sigma^2 F`.
    pub fn with_floor(floor: &CMat, targets: usize, cfg: &SimConfig) -> Self {
        let limit = match cfg.los_mode {
            LosMode::Running => None,
            LosMode::Frozen => Some(cfg.los_blocks),
        };
        let dim = floor.nrows();
        Self {
            averaging: cfg.averaging,
            eta: cfg.eta,
            q: floor.scale(cfg.tau_p as f64 * cfg.sigma2),
            q_tk: vec![floor.scale(cfg.sigma2); targets],
            los: (0..targets).map(|_| LosMean::new(dim, limit)).collect(),
            q_seen: 0,
            q_tk_seen: vec![0; targets],
        }
    }

    pub fn new(dim: usize, targets: usize, cfg: &SimConfig) -> Self {
        Self::with_floor(&identity(dim), targets, cfg)
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn blend(averaging: Averaging, eta: f64, prev: &CMat, sample: &CMat, seen: usize) -> CMat {
        match averaging {
            Averaging::Exponential => exp_update(prev, sample, eta),
            Averaging::Running => {
                let w = 1.0 / (seen + 1) as f64;
                hermitian_part(&(prev.scale(1.0 - w) + sample.scale(w)))
            }
        }
    }

    pub fn update_received(&mut self, received: &CMat) {
        let sample = received * received.adjoint();
        self.q = Self::blend(self.averaging, self.eta, &self.q, &sample, self.q_seen);
        self.q_seen += 1;
    }

    pub fn update_despread(&mut self, target: usize, y: &CVec) {
        self.los[target].update(y);
        let centered = y - self.los[target].mean_observation();
        let seen = self.q_tk_seen[target];
        self.q_tk[target] = Self::blend(self.averaging, self.eta, &self.q_tk[target], &outer(&centered), seen);
        self.q_tk_seen[target] += 1;
    }

    pub fn q(&self) -> &CMat {
        &self.q
    }

    /// Averaged outer product of the centered despread signal.
    pub fn q_tk(&self, target: usize) -> &CMat {
        &self.q_tk[target]
    }

    pub fn los(&self, target: usize) -> &LosMean {
        &self.los[target]
    }

    pub fn blocks_seen(&self) -> usize {
        self.q_seen
    }

    pub fn estimate(&self, target: usize, power: f64, tau_p: usize) -> Result<TrackedStats> {
        let los = self.los[target].mean(power, tau_p);
        let q_tk = self.q_tk[target].clone();
        // Any consistent pair has 0 <= p tau Rbreve <= Q_tk; finite averaging
        // can break the upper bound and the filter would then amplify noise.
        let gain = power * tau_p as f64;
        let recovered = recover_rbreve(&q_tk, &self.q, &los, power, tau_p)?;
        let rbreve = clip_between(&recovered.scale(gain), &q_tk).unscale(gain);
        Ok(TrackedStats { los, rbreve, q_tk })
    }
}

/// Dumps a matrix as row-major little-endian `f64` pairs `(re, im)`.
pub fn write_matrix_le<W: std::io::Write>(matrix: &CMat, out: &mut W) -> std::io::Result<()> {
    for r in 0..matrix.nrows() {
        for col in 0..matrix.ncols() {
            let z: C64 = matrix[(r, col)];
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Dumps a matrix as CSV lines `row,col,re,im`.
pub fn write_matrix_csv<W: std::io::Write>(matrix: &CMat, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "row,col,re,im")?;
    for r in 0..matrix.nrows() {
        for col in 0..matrix.ncols() {
            let z = matrix[(r, col)];
            writeln!(out, "{r},{col},{:e},{:e}", z.re, z.im)?;
        }
    }
    Ok(())
}
