//! Per-realization block processing for all three estimation schemes.
//!
//! Within one block the order is fixed: trackers ingest the block's local and
//! central signals, local estimates are formed at every AP, the CPU forms the
//! collective estimates, and finally each master fuses the assisting APs'
//! signals (using their current local estimates), updates its own tracker and
//! estimates. All schemes see the same channels and the same noise.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::estimators::{
    extract_block, fuse_block, theoretical_nmse, ChannelEstimate, FusionSet, LmmseFilter, LmmseStats, Scheme,
};
use crate::linalg::{psd_project_scaled, CVec};
use crate::network::{assign_master, sample_channels, NetworkStats};
use crate::pilot::{despread_local, draw_assignment, make_pilot_book, stack, stack_rows, synthesize_received, PilotBlock, PilotBook};
use crate::tracker::{true_stats, Scope, ScopeTracker, TrueStats};

/// Where the estimators take their second-order statistics from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsMode {
    /// Closed-form statistics; the master conditions on realized fusion vectors.
    True,
    /// Exponentially averaged estimates built from the received signals only.
    Tracked,
}

impl fmt::Display for StatsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatsMode::True => "true",
            StatsMode::Tracked => "tracked",
        })
    }
}

impl FromStr for StatsMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(StatsMode::True),
            "tracked" => Ok(StatsMode::Tracked),
            other => Err(SimError::InvalidConfig(format!("unknown stats source `{other}` (expected true or tracked)"))),
        }
    }
}

#[derive(Debug, Clone)]
struct Trackers {
    local: Vec<ScopeTracker>,
    central: ScopeTracker,
    master: Vec<Option<ScopeTracker>>,
}

/// Estimates produced for one block.
#[derive(Debug, Clone)]
pub struct BlockOutcome {
    /// Local estimates, indexed `ap * K + ue`.
    pub local: Vec<CVec>,
    /// Collective centralized estimates, one per UE.
    pub central: Vec<CVec>,
    /// Master slice of the fused estimate, one per UE.
    pub mace: Vec<CVec>,
    /// Master-pair NMSE of MACE conditioned on this block's fusion vectors
    /// (built from closed-form local estimates).
    pub mace_theory: Vec<f64>,
}

impl BlockOutcome {
    pub fn estimate(&self, scheme: Scheme, ap: usize, ue: usize, ues: usize, antennas: usize, block: usize) -> ChannelEstimate {
        let vector = match scheme {
            Scheme::Local => self.local[ap * ues + ue].clone(),
            Scheme::Central => extract_block(&self.central[ue], ap, antennas),
            Scheme::Mace => self.mace[ue].clone(),
        };
        ChannelEstimate { vector, scheme, ap, ue, block }
    }
}

/// One network realization: statistics, closed-form filters and trackers.
#[derive(Debug, Clone)]
pub struct Realization {
    cfg: SimConfig,
    stats: NetworkStats,
    book: PilotBook,
    masters: Vec<usize>,
    mode: StatsMode,
    local_truth: Vec<TrueStats>,
    central_truth: Vec<TrueStats>,
    local_filters: Vec<LmmseFilter>,
    central_filters: Vec<LmmseFilter>,
    trackers: Option<Trackers>,
}

impl Realization {
    pub fn new(cfg: &SimConfig, stats: NetworkStats, mode: StatsMode) -> Result<Self> {
        cfg.validate()?;
        if stats.aps() != cfg.aps || stats.ues() != cfg.ues || stats.antennas() != cfg.antennas {
            return Err(SimError::Dimension("statistics do not match the configuration".into()));
        }
        let (l, k) = (cfg.aps, cfg.ues);
        let masters = (0..k).map(|ue| assign_master(&stats, ue)).collect();
        let mut local_truth = Vec::with_capacity(l * k);
        let mut local_filters = Vec::with_capacity(l * k);
        for ap in 0..l {
            for ue in 0..k {
                let t = true_stats(&stats, cfg, ue, Scope::Local(ap));
                let f = LmmseFilter::from_stats(&LmmseStats::from(&t), cfg.power, cfg.tau_p)
                    .map_err(|e| e.in_scope(format!("local AP {ap} UE {ue}"), None))?;
                local_truth.push(t);
                local_filters.push(f);
            }
        }
        let mut central_truth = Vec::with_capacity(k);
        let mut central_filters = Vec::with_capacity(k);
        for ue in 0..k {
            let t = true_stats(&stats, cfg, ue, Scope::Central);
            let f = LmmseFilter::from_stats(&LmmseStats::from(&t), cfg.power, cfg.tau_p)
                .map_err(|e| e.in_scope(format!("central UE {ue}"), None))?;
            central_truth.push(t);
            central_filters.push(f);
        }
        let trackers = (mode == StatsMode::Tracked).then(|| Trackers {
            local: (0..l).map(|_| ScopeTracker::new(cfg.antennas, k, cfg)).collect(),
            central: ScopeTracker::new(cfg.central_dim(), k, cfg),
            master: vec![None; k],
        });
        Ok(Self {
            cfg: cfg.clone(),
            stats,
            book: make_pilot_book(cfg.tau_p),
            masters,
            mode,
            local_truth,
            central_truth,
            local_filters,
            central_filters,
            trackers,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &NetworkStats {
        &self.stats
    }

    pub fn book(&self) -> &PilotBook {
        &self.book
    }

    pub fn masters(&self) -> &[usize] {
        &self.masters
    }

    pub fn mode(&self) -> StatsMode {
        self.mode
    }

    pub fn local_truth(&self, ap: usize, ue: usize) -> &TrueStats {
        &self.local_truth[ap * self.cfg.ues + ue]
    }

    pub fn central_truth(&self, ue: usize) -> &TrueStats {
        &self.central_truth[ue]
    }

    /// `tr(R_{l,k})` for the master pair of `ue`.
    pub fn master_norm(&self, ue: usize) -> f64 {
        crate::linalg::trace_re(&self.local_truth(self.masters[ue], ue).cov)
    }

    /// Closed-form master-pair NMSE of the local or centralized scheme.
    pub fn theory(&self, scheme: Scheme, ue: usize) -> Result<f64> {
        let (p, tau, n) = (self.cfg.power, self.cfg.tau_p, self.cfg.antennas);
        let master = self.masters[ue];
        match scheme {
            Scheme::Local => {
                let t = self.local_truth(master, ue);
                theoretical_nmse(&t.rbreve, &t.cov, &t.q_tk, p, tau, 0..n)
            }
            Scheme::Central => {
                let t = &self.central_truth[ue];
                theoretical_nmse(&t.rbreve, &t.cov, &t.q_tk, p, tau, master * n..(master + 1) * n)
            }
            Scheme::Mace => Err(SimError::InvalidConfig(
                "MACE theory depends on the fusion vectors of each block".into(),
            )),
        }
    }

    /// Draws the next block: pilot assignment, channels, then noise.
    pub fn draw_block<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PilotBlock> {
        let assignment = draw_assignment(self.cfg.ues, self.cfg.tau_p, rng);
        let channels = sample_channels(&self.stats, rng);
        synthesize_received(channels, assignment, &self.book, &self.cfg, rng)
    }

    pub fn process_block(&mut self, block: &PilotBlock, index: usize) -> Result<BlockOutcome> {
        let (l, k) = (self.cfg.aps, self.cfg.ues);
        let (p, tau) = (self.cfg.power, self.cfg.tau_p);

        let mut local_y = Vec::with_capacity(l * k);
        for ap in 0..l {
            for ue in 0..k {
                local_y.push(despread_local(&block.received[ap], ue, &block.assignment, &self.book));
            }
        }
        let central_y: Vec<CVec> = (0..k)
            .map(|ue| stack(&(0..l).map(|ap| local_y[ap * k + ue].clone()).collect::<Vec<_>>()))
            .collect();

        if let Some(tr) = self.trackers.as_mut() {
            for ap in 0..l {
                tr.local[ap].update_received(&block.received[ap]);
                for ue in 0..k {
                    tr.local[ap].update_despread(ue, &local_y[ap * k + ue]);
                }
            }
            tr.central.update_received(&stack_rows(&block.received));
            for (ue, y) in central_y.iter().enumerate() {
                tr.central.update_despread(ue, y);
            }
        }

        let true_local: Vec<CVec> = local_y.iter().zip(&self.local_filters).map(|(y, f)| f.apply(y)).collect();

        let local = match &self.trackers {
            None => true_local.clone(),
            Some(tr) => {
                let mut out = Vec::with_capacity(l * k);
                for ap in 0..l {
                    for ue in 0..k {
                        let filter = tracked_filter(&tr.local[ap], ue, p, tau)
                            .map_err(|e| e.in_scope(format!("local AP {ap} UE {ue}"), Some(index)))?;
                        out.push(filter.apply(&local_y[ap * k + ue]));
                    }
                }
                out
            }
        };

        let mut central = Vec::with_capacity(k);
        for (ue, y) in central_y.iter().enumerate() {
            let est = match &self.trackers {
                None => self.central_filters[ue].apply(y),
                Some(tr) => tracked_filter(&tr.central, ue, p, tau)
                    .map_err(|e| e.in_scope(format!("central UE {ue}"), Some(index)))?
                    .apply(y),
            };
            central.push(est);
        }

        let mut mace = Vec::with_capacity(k);
        let mut mace_theory = Vec::with_capacity(k);
        for ue in 0..k {
            let master = self.masters[ue];
            let column = |source: &[CVec]| (0..l).map(|ap| source[ap * k + ue].clone()).collect::<Vec<_>>();
            let fusion = FusionSet::new(&column(&local), master, self.cfg.normalize_fusion)?;
            let fused = fuse_block(block, &fusion, ue, &self.book);
            let scope = format!("master AP {master} UE {ue}");
            let filter = match self.trackers.as_mut() {
                None => {
                    let t = self.central_truth[ue].fused(&fusion);
                    LmmseFilter::from_stats(&LmmseStats::from(&t), p, tau)
                }
                Some(tr) => {
                    let slot = &mut tr.master[ue];
                    let tracker = slot.get_or_insert_with(|| ScopeTracker::with_floor(&fusion.noise_floor(), 1, &self.cfg));
                    tracker.update_received(&fused.received);
                    tracker.update_despread(0, &fused.despread);
                    tracked_filter(tracker, 0, p, tau)
                }
            }
            .map_err(|e| e.in_scope(scope.clone(), Some(index)))?;
            let z = filter.apply(&fused.despread);
            mace.push(z.rows(fusion.master_rows().start, self.cfg.antennas).into_owned());

            let oracle_fusion = if self.trackers.is_none() {
                fusion
            } else {
                FusionSet::new(&column(&true_local), master, self.cfg.normalize_fusion)?
            };
            let t = self.central_truth[ue].fused(&oracle_fusion);
            let nmse = theoretical_nmse(&t.rbreve, &t.cov, &t.q_tk, p, tau, oracle_fusion.master_rows())
                .map_err(|e| e.in_scope(scope, Some(index)))?;
            mace_theory.push(nmse);
        }

        Ok(BlockOutcome { local, central, mace, mace_theory })
    }
}

fn tracked_filter(tracker: &ScopeTracker, target: usize, power: f64, tau_p: usize) -> Result<LmmseFilter> {
    let mut est = tracker.estimate(target, power, tau_p)?;
    est.q_tk = psd_project_scaled(&est.q_tk, tracker.q());
    LmmseFilter::from_stats(&LmmseStats::from(est), power, tau_p)
}
