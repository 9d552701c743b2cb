//! Randomized pilot transmission: orthogonal pilot book, per-block random
//! pilot choice and random sign, received signal synthesis and despreading.
//!
//! Pilot indices are zero-based (`0..tau_p`).

use std::f64::consts::PI;

use rand::Rng;

use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::linalg::{c, CMat, CVec, C64};
use crate::network::{complex_normal, ChannelRealization};

/// `tau_p` mutually orthogonal pilots (rows), each with squared norm `tau_p`.
///
/// Built from the DFT matrix: `phi_t[s] = exp(-2 pi i t s / tau_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    rows: CMat,
}

fn unit_root(numerator: usize, denominator: usize) -> C64 {
    let r = numerator % denominator;
    // Quarter turns are produced exactly.
    if (4 * r).is_multiple_of(denominator) {
        return match 4 * r / denominator {
            0 => c(1.0, 0.0),
            1 => c(0.0, -1.0),
            2 => c(-1.0, 0.0),
            _ => c(0.0, 1.0),
        };
    }
    C64::from_polar(1.0, -2.0 * PI * r as f64 / denominator as f64)
}

pub fn make_pilot_book(tau_p: usize) -> PilotBook {
    PilotBook { rows: CMat::from_fn(tau_p, tau_p, |t, s| unit_root(t * s, tau_p)) }
}

impl PilotBook {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    /// Pilot `t` as a column vector.
    pub fn pilot(&self, t: usize) -> CVec {
        self.rows.row(t).transpose()
    }

    pub fn matrix(&self) -> &CMat {
        &self.rows
    }
}

/// Pilot index and sign chosen by every UE in one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotAssignment {
    pub pilot: Vec<usize>,
    pub sign: Vec<i8>,
}

impl PilotAssignment {
    pub fn ues(&self) -> usize {
        self.pilot.len()
    }

    pub fn gamma(&self, ue: usize) -> f64 {
        f64::from(self.sign[ue])
    }
}

/// Draws, for each UE in order, a uniform pilot index then a fair sign.
pub fn draw_assignment<R: Rng + ?Sized>(ues: usize, tau_p: usize, rng: &mut R) -> PilotAssignment {
    let mut pilot = Vec::with_capacity(ues);
    let mut sign = Vec::with_capacity(ues);
    for _ in 0..ues {
        pilot.push(rng.random_range(0..tau_p));
        sign.push(if rng.random::<bool>() { 1 } else { -1 });
    }
    PilotAssignment { pilot, sign }
}

/// Interference coefficient between UE `other` and target UE `target`:
/// 0 on different pilots, otherwise the product of the two signs.
pub fn delta_oracle(assignment: &PilotAssignment, other: usize, target: usize) -> Result<i8> {
    if other == target {
        return Err(SimError::Dimension("delta is defined for distinct UEs only".into()));
    }
    if assignment.pilot[other] != assignment.pilot[target] {
        Ok(0)
    } else {
        Ok(assignment.sign[other] * assignment.sign[target])
    }
}

/// Everything generated in one coherence block.
#[derive(Debug, Clone)]
pub struct PilotBlock {
    pub assignment: PilotAssignment,
    pub channels: ChannelRealization,
    /// Per-AP `N x tau_p` noise.
    pub noise: Vec<CMat>,
    /// Per-AP `N x tau_p` received pilot matrices.
    pub received: Vec<CMat>,
}

/// `sum_i sqrt(p) h_{j,i} gamma_i phi_{t_i}^T + N_j` for every AP.
pub fn assemble_received(
    channels: &ChannelRealization,
    assignment: &PilotAssignment,
    book: &PilotBook,
    power: f64,
    noise: &[CMat],
) -> Vec<CMat> {
    let amp = power.sqrt();
    noise
        .iter()
        .enumerate()
        .map(|(ap, n)| {
            let mut y = CMat::zeros(n.nrows(), n.ncols());
            for ue in 0..assignment.ues() {
                let row = book.matrix().row(assignment.pilot[ue]);
                let h = channels.get(ap, ue) * C64::from(amp * assignment.gamma(ue));
                y += h * row;
            }
            y + n
        })
        .collect()
}

/// Draws fresh noise (AP-major, column-major within an AP) and assembles the
/// received matrices.
pub fn synthesize_received<R: Rng + ?Sized>(
    channels: ChannelRealization,
    assignment: PilotAssignment,
    book: &PilotBook,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PilotBlock> {
    if assignment.ues() != channels.ues() {
        return Err(SimError::Dimension(format!(
            "{} pilot assignments for {} UEs",
            assignment.ues(),
            channels.ues()
        )));
    }
    if book.len() != cfg.tau_p {
        return Err(SimError::Dimension(format!("pilot book of length {} for tau_p {}", book.len(), cfg.tau_p)));
    }
    let std = cfg.sigma2.sqrt();
    let noise: Vec<CMat> = (0..cfg.aps)
        .map(|_| CMat::from_fn(cfg.antennas, cfg.tau_p, |_, _| complex_normal(rng) * std))
        .collect();
    let received = assemble_received(&channels, &assignment, book, cfg.power, &noise);
    Ok(PilotBlock { assignment, channels, noise, received })
}

/// The despreading vector `conj(gamma_k phi_{t_k}) / sqrt(tau_p)`.
pub fn despreader(assignment: &PilotAssignment, ue: usize, book: &PilotBook) -> CVec {
    let scale = assignment.gamma(ue) / (book.len() as f64).sqrt();
    book.pilot(assignment.pilot[ue]).map(|z| z.conj() * scale)
}

/// Correlates a received matrix with the normalized, sign-scaled pilot of `ue`.
pub fn despread(received: &CMat, assignment: &PilotAssignment, ue: usize, book: &PilotBook) -> CVec {
    received * despreader(assignment, ue, book)
}

/// Despread signal of `ue` at one AP (length `N`).
pub fn despread_local(received_ap: &CMat, ue: usize, assignment: &PilotAssignment, book: &PilotBook) -> CVec {
    despread(received_ap, assignment, ue, book)
}

/// Stacked despread signal of `ue` across all APs (length `L N`).
pub fn despread_central(block: &PilotBlock, ue: usize, book: &PilotBook) -> CVec {
    let parts: Vec<CVec> =
        block.received.iter().map(|y| despread_local(y, ue, &block.assignment, book)).collect();
    stack(&parts)
}

pub fn stack(parts: &[CVec]) -> CVec {
    let total = parts.iter().map(|p| p.len()).sum();
    let mut out = CVec::zeros(total);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(p);
        at += p.len();
    }
    out
}

pub fn stack_rows(parts: &[CMat]) -> CMat {
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let cols = parts.first().map_or(0, |p| p.ncols());
    let mut out = CMat::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        out.view_mut((at, 0), (p.nrows(), cols)).copy_from(p);
        at += p.nrows();
    }
    out
}
