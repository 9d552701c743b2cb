//! NMSE accumulation and fronthaul / complexity accounting.

use crate::estimators::Scheme;
use crate::linalg::CVec;

/// Running squared-error sum for one (AP, UE) pair and scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct NmseAccumulator {
    pub scheme: Scheme,
    pub sum_sq_err: f64,
    /// `tr(R)` of the channel being estimated.
    pub norm: f64,
    pub count: usize,
}

impl NmseAccumulator {
    pub fn new(scheme: Scheme, norm: f64) -> Self {
        Self { scheme, sum_sq_err: 0.0, norm, count: 0 }
    }

    pub fn accumulate(&mut self, h_true: &CVec, h_est: &CVec) {
        self.sum_sq_err += (h_true - h_est).norm_squared();
        self.count += 1;
    }

    /// Adds another worker's partial sums for the same pair.
    pub fn merge(&mut self, other: &NmseAccumulator) {
        debug_assert_eq!(self.scheme, other.scheme);
        self.sum_sq_err += other.sum_sq_err;
        self.count += other.count;
    }

    pub fn nmse(&self) -> f64 {
        if self.count == 0 || self.norm <= 0.0 {
            return 0.0;
        }
        self.sum_sq_err / (self.count as f64 * self.norm)
    }
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Complex scalars sent over fronthaul per coherence block.
pub fn fronthaul(scheme: Scheme, aps: usize, antennas: usize, tau_p: usize) -> u64 {
    let (l, n, t) = (aps as u64, antennas as u64, tau_p as u64);
    match scheme {
        Scheme::Local => 0,
        Scheme::Central => t * l * n,
        Scheme::Mace => t * (n + l - 1),
    }
}

/// Side of the matrix inverted per estimate.
pub fn inversion_dim(scheme: Scheme, aps: usize, antennas: usize) -> usize {
    match scheme {
        Scheme::Local => antennas,
        Scheme::Central => aps * antennas,
        Scheme::Mace => antennas + aps - 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResourceReport {
    pub fronthaul_scalars: u64,
    pub inversion_dim: usize,
}

impl ResourceReport {
    pub fn for_scheme(scheme: Scheme, aps: usize, antennas: usize, tau_p: usize) -> Self {
        Self {
            fronthaul_scalars: fronthaul(scheme, aps, antennas, tau_p),
            inversion_dim: inversion_dim(scheme, aps, antennas),
        }
    }
}
