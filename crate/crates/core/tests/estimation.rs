//! Monte Carlo properties of the three estimators under closed-form statistics.

use cellfree_core::engine::{BlockOutcome, Realization, StatsMode};
use cellfree_core::estimators::{FusionSet, LmmseFilter, LmmseStats, Scheme};
use cellfree_core::linalg::{c, CMat, CVec};
use cellfree_core::network::{build_stats, place_network, LinkStats, NetworkStats};
use cellfree_core::pilot::{despread_local, PilotBlock};
use cellfree_core::tracker::{true_stats, Scope};
use cellfree_core::{Fading, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(seed: u64) -> SimConfig {
    SimConfig { aps: 2, antennas: 2, ues: 3, tau_p: 3, area_m: 200.0, seed, warmup: 0, ..SimConfig::default() }
}

fn realization(cfg: &SimConfig) -> (Realization, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let positions = place_network(cfg, &mut rng);
    let stats = build_stats(&positions, cfg, &mut rng).unwrap();
    (Realization::new(cfg, stats, StatsMode::True).unwrap(), rng)
}

fn run_blocks(cfg: &SimConfig, blocks: usize, mut visit: impl FnMut(&Realization, &PilotBlock, &BlockOutcome)) {
    let (mut sim, mut rng) = realization(cfg);
    for b in 0..blocks {
        let block = sim.draw_block(&mut rng).unwrap();
        let out = sim.process_block(&block, b).unwrap();
        visit(&sim, &block, &out);
    }
}

/// Entrywise running mean and variance of complex samples, real and imaginary parts separately.
struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    n: f64,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self { sum: vec![0.0; 2 * len], sum_sq: vec![0.0; 2 * len], n: 0.0 }
    }

    fn add(&mut self, values: impl Iterator<Item = cellfree_core::linalg::C64>) {
        for (i, z) in values.enumerate() {
            for (j, part) in [z.re, z.im].into_iter().enumerate() {
                self.sum[2 * i + j] += part;
                self.sum_sq[2 * i + j] += part * part;
            }
        }
        self.n += 1.0;
    }

    /// Largest |mean| / standard error over all entries.
    fn max_z(&self) -> f64 {
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let mean = s / self.n;
                let var = (q / self.n - mean * mean) * self.n / (self.n - 1.0);
                mean.abs() / (var / self.n).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

#[test]
fn estimates_are_unbiased() {
    let cfg = small_config(11);
    let mut moments: Vec<Moments> = (0..3).map(|_| Moments::new(cfg.antennas * cfg.ues)).collect();
    run_blocks(&cfg, 10_000, |sim, block, out| {
        for (i, scheme) in Scheme::ALL.into_iter().enumerate() {
            let mut errs = Vec::new();
            for ue in 0..cfg.ues {
                let m = sim.masters()[ue];
                let est = out.estimate(scheme, m, ue, cfg.ues, cfg.antennas, 0);
                errs.extend((&est.vector - block.channels.get(m, ue)).iter().copied());
            }
            moments[i].add(errs.into_iter());
        }
    });
    for (m, scheme) in moments.iter().zip(Scheme::ALL) {
        assert!(m.max_z() < 5.0, "{scheme}: max z {}", m.max_z());
    }
}

#[test]
fn local_and_central_errors_are_orthogonal_to_innovations() {
    let cfg = small_config(12);
    let n = cfg.antennas;
    let scale = (cfg.power * cfg.tau_p as f64).sqrt();
    let mut local = Moments::new(n * n * cfg.ues);
    let mut central = Moments::new(cfg.aps * n * cfg.aps * n * cfg.ues);
    run_blocks(&cfg, 10_000, |sim, block, out| {
        let mut lo = Vec::new();
        let mut ce = Vec::new();
        for ue in 0..cfg.ues {
            let m = sim.masters()[ue];
            let y = despread_local(&block.received[m], ue, &block.assignment, sim.book());
            let innovation = y - sim.local_truth(m, ue).los.scale(scale);
            let err = block.channels.get(m, ue) - &out.local[m * cfg.ues + ue];
            lo.extend((&err * innovation.adjoint()).iter().copied());

            let yc = CVec::from_iterator(
                cfg.aps * n,
                (0..cfg.aps).flat_map(|ap| despread_local(&block.received[ap], ue, &block.assignment, sim.book()).data.as_vec().clone()),
            );
            let innovation = yc - sim.central_truth(ue).los.scale(scale);
            let err = block.channels.collective(ue) - &out.central[ue];
            ce.extend((&err * innovation.adjoint()).iter().copied());
        }
        local.add(lo.into_iter());
        central.add(ce.into_iter());
    });
    assert!(local.max_z() < 5.0, "local max z {}", local.max_z());
    assert!(central.max_z() < 5.0, "central max z {}", central.max_z());
}

#[test]
fn per_block_errors_follow_scheme_ordering() {
    let cfg = small_config(13);
    let mut diffs = [Vec::new(), Vec::new()];
    run_blocks(&cfg, 10_000, |sim, block, out| {
        let mut e = [0.0; 3];
        for ue in 0..cfg.ues {
            let m = sim.masters()[ue];
            let h = block.channels.get(m, ue);
            for (i, scheme) in Scheme::ALL.into_iter().enumerate() {
                let est = out.estimate(scheme, m, ue, cfg.ues, cfg.antennas, 0);
                e[i] += (h - &est.vector).norm_squared() / sim.master_norm(ue);
            }
        }
        diffs[0].push(e[1] - e[2]);
        diffs[1].push(e[2] - e[0]);
    });
    for (d, label) in diffs.iter().zip(["central - mace", "mace - local"]) {
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let se = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!(mean <= 3.0 * se, "{label}: mean {mean} se {se}");
    }
}

#[test]
fn noiseless_single_user_recovers_the_channel() {
    let cfg = SimConfig { aps: 2, antennas: 2, ues: 1, tau_p: 2, sigma2: 0.0, warmup: 0, ..SimConfig::default() };
    let links = (0..2)
        .map(|j| {
            let s = 1.0 + j as f64;
            let los = CVec::from_vec(vec![c(s, 0.0), c(0.0, -s)]);
            let r = CMat::from_row_slice(2, 2, &[c(s, 0.0), c(0.2, 0.1), c(0.2, -0.1), c(0.5 * s, 0.0)]);
            LinkStats::new(los, r).unwrap()
        })
        .collect();
    let stats = NetworkStats::from_links(2, 1, 2, links).unwrap();
    let mut sim = Realization::new(&cfg, stats, StatsMode::True).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = sim.masters()[0];
    for b in 0..50 {
        let block = sim.draw_block(&mut rng).unwrap();
        let out = sim.process_block(&block, b).unwrap();
        let h = block.channels.get(m, 0);
        for scheme in Scheme::ALL {
            let est = out.estimate(scheme, m, 0, 1, 2, b).vector;
            assert!((&est - h).norm() < 1e-6 * h.norm(), "{scheme} block {b}");
        }
    }
}

#[test]
fn zero_fusion_vectors_fall_back_to_local_quality() {
    let cfg = small_config(14);
    let (sim, mut rng) = realization(&cfg);
    let n = cfg.antennas;
    for ue in 0..cfg.ues {
        let m = sim.masters()[ue];
        let zeros = vec![CVec::zeros(n); cfg.aps];
        let fusion = FusionSet::new(&zeros, m, false).unwrap();
        let fused = sim.central_truth(ue).fused(&fusion);
        let rows = fusion.master_rows();
        let theory = cellfree_core::estimators::theoretical_nmse(&fused.rbreve, &fused.cov, &fused.q_tk, cfg.power, cfg.tau_p, rows.clone())
            .unwrap();
        let local = sim.theory(Scheme::Local, ue).unwrap();
        assert!((theory - local).abs() < 1e-6 * local, "ue {ue}: {theory} vs {local}");

        let filter = LmmseFilter::from_stats(&LmmseStats::from(&fused), cfg.power, cfg.tau_p).unwrap();
        let local_filter = LmmseFilter::from_stats(&LmmseStats::from(sim.local_truth(m, ue)), cfg.power, cfg.tau_p).unwrap();
        for _ in 0..20 {
            let block = sim.draw_block(&mut rng).unwrap();
            let z = cellfree_core::estimators::fuse_block(&block, &fusion, ue, sim.book()).despread;
            let y = despread_local(&block.received[m], ue, &block.assignment, sim.book());
            let a = filter.apply(&z).rows(rows.start, n).into_owned();
            let b = local_filter.apply(&y);
            assert!((&a - &b).norm() < 1e-6 * b.norm());
        }
    }
}

#[test]
fn deterministic_channels_are_estimated_exactly() {
    let cfg = SimConfig { ues: 1, sigma2: 0.0, fading: Fading::PureLos, blocks: 1, warmup: 0, ..SimConfig::default() };
    let (mut sim, mut rng) = realization(&cfg);
    let block = sim.draw_block(&mut rng).unwrap();
    let out = sim.process_block(&block, 0).unwrap();
    for ap in 0..cfg.aps {
        for scheme in Scheme::ALL {
            let m = sim.masters()[0];
            if scheme == Scheme::Mace && ap != m {
                continue;
            }
            let est = out.estimate(scheme, ap, 0, 1, cfg.antennas, 0).vector;
            assert_eq!((&est - block.channels.get(ap, 0)).norm(), 0.0, "{scheme} at AP {ap}");
        }
    }
}

#[test]
fn central_scope_statistics_stack_local_ones() {
    let cfg = small_config(15);
    let (sim, _) = realization(&cfg);
    let n = cfg.antennas;
    for ue in 0..cfg.ues {
        let central = true_stats(sim.stats(), &cfg, ue, Scope::Central);
        for ap in 0..cfg.aps {
            let local = true_stats(sim.stats(), &cfg, ue, Scope::Local(ap));
            let block = central.q.view((ap * n, ap * n), (n, n)).into_owned();
            assert!((block - &local.q).norm() < 1e-12 * local.q.norm());
            let block = central.q_tk.view((ap * n, ap * n), (n, n)).into_owned();
            assert!((block - &local.q_tk).norm() < 1e-12 * local.q_tk.norm());
        }
    }
}
