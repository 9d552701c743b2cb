//! Network layout, correlated Rician channel statistics and channel sampling.
//!
//! Propagation model (distances in meters):
//!
//! * large-scale fading `beta_dB = -30.5 - 36.7 log10(d_3D)`, APs 10 m above the UEs;
//! * Rician factor `kappa = 10^(1.3 - 0.003 d_2D)`;
//! * horizontal distances are floored at `min_distance_m`.
//!
//! Each AP carries a half-wavelength uniform linear array. The LoS component is
//! the steering vector towards the UE with a random phase fixed at build time;
//! the scattered component follows the local scattering model with a Gaussian
//! azimuth spread around the geometric angle. Both are scaled so that
//! `||hbar||^2 = N beta kappa / (kappa + 1)` and `tr(Rbreve) = N beta / (kappa + 1)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{Fading, SimConfig};
use crate::error::{Result, SimError};
use crate::linalg::{block_diag, c, outer, psd_factor, trace_re, CMat, CVec, C64};

/// Quadrature intervals used for the local scattering integral.
const SCATTERING_INTERVALS: usize = 2000;
/// Gaussian tails beyond this many standard deviations are dropped.
const SCATTERING_SPAN: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Positions {
    pub aps: Vec<Point>,
    pub ues: Vec<Point>,
}

/// One circularly-symmetric complex Gaussian draw with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> CVec {
    CVec::from_fn(len, |_, _| complex_normal(rng))
}

/// Drops APs then UEs uniformly in the square `[0, area_m]^2`.
pub fn place_network<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Positions {
    let point = |rng: &mut R| Point {
        x: rng.random::<f64>() * cfg.area_m,
        y: rng.random::<f64>() * cfg.area_m,
    };
    let aps = (0..cfg.aps).map(|_| point(rng)).collect();
    let ues = (0..cfg.ues).map(|_| point(rng)).collect();
    Positions { aps, ues }
}

/// Statistics of the channel between one AP and one UE.
#[derive(Debug, Clone)]
pub struct LinkStats {
    /// Deterministic LoS component.
    pub los: CVec,
    /// Correlation matrix of the scattered component.
    pub nlos_cov: CMat,
    /// `F` with `F F^H = nlos_cov`.
    nlos_factor: CMat,
    /// Large-scale fading coefficient, `tr(R) / N`.
    pub beta: f64,
}

impl LinkStats {
    pub fn new(los: CVec, nlos_cov: CMat) -> Result<Self> {
        let n = los.len();
        if nlos_cov.nrows() != n || nlos_cov.ncols() != n {
            return Err(SimError::Dimension(format!(
                "LoS vector of length {n} with a {}x{} scattering matrix",
                nlos_cov.nrows(),
                nlos_cov.ncols()
            )));
        }
        let nlos_factor = psd_factor(&nlos_cov, 1e-10)?;
        let beta = (los.norm_squared() + trace_re(&nlos_cov)) / n as f64;
        Ok(Self { los, nlos_cov, nlos_factor, beta })
    }

    /// Full correlation `hbar hbar^H + Rbreve`.
    pub fn cov(&self) -> CMat {
        outer(&self.los) + &self.nlos_cov
    }
}

/// Second-order statistics for every (AP, UE) pair. Immutable once built.
#[derive(Debug, Clone)]
pub struct NetworkStats {
    aps: usize,
    ues: usize,
    antennas: usize,
    links: Vec<LinkStats>,
    pub positions: Option<Positions>,
}

impl NetworkStats {
    /// Assembles statistics from explicit links, ordered AP-major (`j * K + k`).
    pub fn from_links(aps: usize, ues: usize, antennas: usize, links: Vec<LinkStats>) -> Result<Self> {
        if links.len() != aps * ues {
            return Err(SimError::Dimension(format!(
                "expected {} links, got {}",
                aps * ues,
                links.len()
            )));
        }
        if links.iter().any(|l| l.los.len() != antennas) {
            return Err(SimError::Dimension(format!("links must have {antennas} antennas")));
        }
        Ok(Self { aps, ues, antennas, links, positions: None })
    }

    pub fn aps(&self) -> usize {
        self.aps
    }

    pub fn ues(&self) -> usize {
        self.ues
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn link(&self, ap: usize, ue: usize) -> &LinkStats {
        &self.links[ap * self.ues + ue]
    }

    pub fn beta(&self, ap: usize, ue: usize) -> f64 {
        self.link(ap, ue).beta
    }
}

/// Normalized (unit diagonal) local scattering correlation for a ULA with
/// half-wavelength spacing, nominal angle `theta` and Gaussian spread `spread`.
pub fn local_scattering(antennas: usize, theta: f64, spread: f64) -> CMat {
    let coeffs: Vec<C64> = if spread == 0.0 {
        (0..antennas).map(|d| C64::from_polar(1.0, PI * d as f64 * theta.sin())).collect()
    } else {
        let m = SCATTERING_INTERVALS;
        let h = 2.0 * SCATTERING_SPAN * spread / m as f64;
        let mut coeffs = vec![C64::new(0.0, 0.0); antennas];
        for step in 0..=m {
            let phi = -SCATTERING_SPAN * spread + h * step as f64;
            let simpson = if step == 0 || step == m {
                1.0
            } else if step % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let weight = simpson * (-0.5 * (phi / spread).powi(2)).exp();
            let s = (theta + phi).sin();
            for (d, acc) in coeffs.iter_mut().enumerate() {
                *acc += C64::from_polar(weight, PI * d as f64 * s);
            }
        }
        let norm = coeffs[0].re;
        coeffs.iter().map(|z| z / norm).collect()
    };
    CMat::from_fn(antennas, antennas, |r, col| {
        if r >= col {
            coeffs[r - col]
        } else {
            coeffs[col - r].conj()
        }
    })
}

pub fn large_scale_fading(cfg: &SimConfig, horizontal: f64) -> f64 {
    let d3 = horizontal.max(cfg.min_distance_m).hypot(cfg.ap_height_m);
    10f64.powf((-30.5 - 36.7 * d3.log10()) / 10.0)
}

pub fn rician_factor(cfg: &SimConfig, horizontal: f64) -> f64 {
    match cfg.fading {
        Fading::Rician => 10f64.powf(1.3 - 0.003 * horizontal.max(cfg.min_distance_m)),
        Fading::PureLos => f64::INFINITY,
        Fading::PureNlos => 0.0,
    }
}

/// Builds the statistics for a layout. Draws one LoS phase per (AP, UE), AP-major.
pub fn build_stats<R: Rng + ?Sized>(positions: &Positions, cfg: &SimConfig, rng: &mut R) -> Result<NetworkStats> {
    let n = cfg.antennas;
    let spread = cfg.angular_spread_deg.to_radians();
    let mut links = Vec::with_capacity(positions.aps.len() * positions.ues.len());
    for ap in &positions.aps {
        for ue in &positions.ues {
            let phase = 2.0 * PI * rng.random::<f64>();
            let horizontal = ap.distance(ue);
            let beta = large_scale_fading(cfg, horizontal);
            let kappa = rician_factor(cfg, horizontal);
            let (los_share, nlos_share) = if kappa.is_infinite() {
                (1.0, 0.0)
            } else {
                (kappa / (kappa + 1.0), 1.0 / (kappa + 1.0))
            };
            let theta = (ue.y - ap.y).atan2(ue.x - ap.x);
            let amplitude = (beta * los_share).sqrt();
            let los = CVec::from_fn(n, |i, _| C64::from_polar(amplitude, phase + PI * i as f64 * theta.sin()));
            let nlos = local_scattering(n, theta, spread).scale(beta * nlos_share);
            let mut link = LinkStats::new(los, nlos)?;
            // Store the model value rather than the recomputed one.
            link.beta = beta;
            links.push(link);
        }
    }
    let mut stats = NetworkStats::from_links(positions.aps.len(), positions.ues.len(), n, links)?;
    stats.positions = Some(positions.clone());
    Ok(stats)
}

/// Statistics of the collective channel of one UE across all APs.
#[derive(Debug, Clone)]
pub struct CollectiveStats {
    pub los: CVec,
    pub nlos_cov: CMat,
    pub cov: CMat,
}

pub fn collective(stats: &NetworkStats, ue: usize) -> CollectiveStats {
    let n = stats.antennas;
    let mut los = CVec::zeros(stats.aps * n);
    for ap in 0..stats.aps {
        los.rows_mut(ap * n, n).copy_from(&stats.link(ap, ue).los);
    }
    let blocks: Vec<CMat> = (0..stats.aps).map(|ap| stats.link(ap, ue).nlos_cov.clone()).collect();
    let nlos_cov = block_diag(&blocks);
    let cov = outer(&los) + &nlos_cov;
    CollectiveStats { los, nlos_cov, cov }
}

/// Channel vectors for one coherence block, indexed AP-major.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    ues: usize,
    channels: Vec<CVec>,
}

impl ChannelRealization {
    pub fn get(&self, ap: usize, ue: usize) -> &CVec {
        &self.channels[ap * self.ues + ue]
    }

    pub fn ues(&self) -> usize {
        self.ues
    }

    pub fn aps(&self) -> usize {
        self.channels.len().checked_div(self.ues).unwrap_or(0)
    }

    /// Stacked channel of one UE across APs.
    pub fn collective(&self, ue: usize) -> CVec {
        let parts: Vec<&CVec> = (0..self.aps()).map(|ap| self.get(ap, ue)).collect();
        let n = parts.first().map_or(0, |v| v.len());
        let mut out = CVec::zeros(parts.len() * n);
        for (ap, v) in parts.iter().enumerate() {
            out.rows_mut(ap * n, n).copy_from(v);
        }
        out
    }
}

/// Draws `h = hbar + F w` for every link, AP-major, `N` complex normals per link.
pub fn sample_channels<R: Rng + ?Sized>(stats: &NetworkStats, rng: &mut R) -> ChannelRealization {
    let channels = stats
        .links
        .iter()
        .map(|link| {
            let w = complex_normal_vec(rng, stats.antennas);
            &link.los + &link.nlos_factor * w
        })
        .collect();
    ChannelRealization { ues: stats.ues, channels }
}

/// Master AP of a UE: largest large-scale fading coefficient, lowest index on ties.
pub fn assign_master(stats: &NetworkStats, ue: usize) -> usize {
    let mut best = 0;
    for ap in 1..stats.aps {
        if stats.beta(ap, ue) > stats.beta(best, ue) {
            best = ap;
        }
    }
    best
}
