//! Channel estimation: the shared LMMSE kernel, the fusion operator used by
//! master-assisted estimation, and per-scheme estimate assembly.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::linalg::{hermitian_eigenvalues, hermitian_part, identity, sub_block, trace_re, CMat, CVec, HermitianSolver, C64};
use crate::pilot::{despread, PilotBlock, PilotBook};
use crate::tracker::{TrackedStats, TrueStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Local,
    Central,
    Mace,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Local, Scheme::Central, Scheme::Mace];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Local => "local",
            Scheme::Central => "central",
            Scheme::Mace => "mace",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Scheme::Local),
            "central" => Ok(Scheme::Central),
            "mace" => Ok(Scheme::Mace),
            other => Err(SimError::UnknownScheme(other.to_string())),
        }
    }
}

/// Statistics an LMMSE estimator needs for one target.
#[derive(Debug, Clone)]
pub struct LmmseStats {
    pub los: CVec,
    pub rbreve: CMat,
    pub q_tk: CMat,
}

impl From<&TrueStats> for LmmseStats {
    fn from(t: &TrueStats) -> Self {
        Self { los: t.los.clone(), rbreve: t.rbreve.clone(), q_tk: t.q_tk.clone() }
    }
}

impl From<TrackedStats> for LmmseStats {
    fn from(t: TrackedStats) -> Self {
        Self { los: t.los, rbreve: t.rbreve, q_tk: t.q_tk }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmmseInputs<'a> {
    pub los: &'a CVec,
    pub rbreve: &'a CMat,
    pub q_tk: &'a CMat,
    pub y: &'a CVec,
    pub power: f64,
    pub tau_p: usize,
}

/// `hbar + sqrt(p tau) Rbreve Q_tk^{-1} (y - sqrt(p tau) hbar)`.
pub fn lmmse(inputs: &LmmseInputs<'_>) -> Result<CVec> {
    if inputs.y.len() != inputs.los.len() {
        return Err(SimError::Dimension(format!(
            "observation of length {} for a mean of length {}",
            inputs.y.len(),
            inputs.los.len()
        )));
    }
    let filter = LmmseFilter::new(inputs.los, inputs.rbreve, inputs.q_tk, inputs.power, inputs.tau_p)?;
    Ok(filter.apply(inputs.y))
}

/// A precomputed LMMSE estimator: `estimate(y) = los + gain (y - mean_obs)`.
#[derive(Debug, Clone)]
pub struct LmmseFilter {
    los: CVec,
    mean_obs: CVec,
    gain: CMat,
}

impl LmmseFilter {
    pub fn new(los: &CVec, rbreve: &CMat, q_tk: &CMat, power: f64, tau_p: usize) -> Result<Self> {
        let dim = los.len();
        if rbreve.shape() != (dim, dim) || q_tk.shape() != (dim, dim) {
            return Err(SimError::Dimension(format!(
                "LMMSE inputs disagree: mean {dim}, Rbreve {:?}, Q_tk {:?}",
                rbreve.shape(),
                q_tk.shape()
            )));
        }
        let scale = (power * tau_p as f64).sqrt();
        if rbreve.iter().all(|z| *z == C64::new(0.0, 0.0)) {
            // Deterministic channel: the mean is already exact.
            return Ok(Self { los: los.clone(), mean_obs: los.scale(scale), gain: CMat::zeros(dim, dim) });
        }
        // Rbreve Q^{-1} = (Q^{-1} Rbreve)^H for Hermitian Rbreve and Q.
        let solved = HermitianSolver::new(q_tk)?.solve(rbreve);
        Ok(Self { los: los.clone(), mean_obs: los.scale(scale), gain: solved.adjoint().scale(scale) })
    }

    pub fn from_stats(stats: &LmmseStats, power: f64, tau_p: usize) -> Result<Self> {
        Self::new(&stats.los, &stats.rbreve, &stats.q_tk, power, tau_p)
    }

    pub fn dim(&self) -> usize {
        self.los.len()
    }

    pub fn apply(&self, y: &CVec) -> CVec {
        debug_assert_eq!(y.len(), self.los.len());
        &self.los + &self.gain * (y - &self.mean_obs)
    }
}

/// Fusion vectors of the assisting APs of one UE and the master they report to.
///
/// The fused space has dimension `N + L - 1`: one row per assisting AP and the
/// master's `N` rows, in AP order. The master rows start at index `master`.
#[derive(Debug, Clone)]
pub struct FusionSet {
    master: usize,
    antennas: usize,
    /// Indexed by AP; the master's entry is unused.
    vectors: Vec<CVec>,
}

impl FusionSet {
    /// Builds the fusion set from the local estimates of every AP.
    pub fn new(local_estimates: &[CVec], master: usize, normalize: bool) -> Result<Self> {
        if master >= local_estimates.len() {
            return Err(SimError::Dimension(format!(
                "master {master} out of range for {} APs",
                local_estimates.len()
            )));
        }
        let antennas = local_estimates[master].len();
        let vectors = local_estimates
            .iter()
            .enumerate()
            .map(|(ap, v)| {
                if ap == master {
                    CVec::zeros(0)
                } else if normalize && v.norm() > 0.0 {
                    v.unscale(v.norm())
                } else {
                    v.clone()
                }
            })
            .collect();
        Ok(Self { master, antennas, vectors })
    }

    pub fn master(&self) -> usize {
        self.master
    }

    pub fn aps(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.antennas + self.aps() - 1
    }

    pub fn has_assistants(&self) -> bool {
        self.aps() > 1
    }

    /// Rows of the master's own channel in the fused space.
    pub fn master_rows(&self) -> Range<usize> {
        self.master..self.master + self.antennas
    }

    /// Fusion vector of an assisting AP.
    pub fn vector(&self, ap: usize) -> Option<&CVec> {
        (ap != self.master).then(|| &self.vectors[ap])
    }

    fn column_of(&self, ap: usize) -> usize {
        if ap <= self.master {
            ap
        } else {
            ap + self.antennas - 1
        }
    }

    /// The `L N x (N + L - 1)` block-diagonal operator.
    pub fn vdiag(&self) -> CMat {
        let n = self.antennas;
        let mut v = CMat::zeros(self.aps() * n, self.dim());
        for ap in 0..self.aps() {
            let col = self.column_of(ap);
            if ap == self.master {
                v.view_mut((ap * n, col), (n, n)).copy_from(&identity(n));
            } else {
                v.view_mut((ap * n, col), (n, 1)).copy_from(&self.vectors[ap]);
            }
        }
        v
    }

    /// `V^H x` for a stacked vector.
    pub fn apply_adjoint(&self, x: &CVec) -> CVec {
        if !self.has_assistants() {
            return x.clone();
        }
        let n = self.antennas;
        let mut out = CVec::zeros(self.dim());
        for ap in 0..self.aps() {
            let part = x.rows(ap * n, n);
            let col = self.column_of(ap);
            if ap == self.master {
                out.rows_mut(col, n).copy_from(&part);
            } else {
                out[col] = self.vectors[ap].dotc(&part);
            }
        }
        out
    }

    /// `V^H A V` for a stacked `L N x L N` matrix.
    pub fn conjugate(&self, a: &CMat) -> CMat {
        if !self.has_assistants() {
            return a.clone();
        }
        let n = self.antennas;
        let rows = a.nrows();
        let mut av = CMat::zeros(rows, self.dim());
        for ap in 0..self.aps() {
            let col = self.column_of(ap);
            let cols = a.columns(ap * n, n);
            if ap == self.master {
                av.columns_mut(col, n).copy_from(&cols);
            } else {
                av.column_mut(col).copy_from(&(cols * &self.vectors[ap]));
            }
        }
        let mut out = CMat::zeros(self.dim(), self.dim());
        for ap in 0..self.aps() {
            let row = self.column_of(ap);
            let block = av.rows(ap * n, n);
            if ap == self.master {
                out.rows_mut(row, n).copy_from(&block);
            } else {
                out.row_mut(row).copy_from(&(self.vectors[ap].adjoint() * block));
            }
        }
        hermitian_part(&out)
    }

    /// `V^H V`: the noise floor of the fused space.
    pub fn noise_floor(&self) -> CMat {
        let mut d = CVec::from_element(self.dim(), C64::from(1.0));
        for ap in 0..self.aps() {
            if ap != self.master {
                d[self.column_of(ap)] = C64::from(self.vectors[ap].norm_squared());
            }
        }
        CMat::from_diagonal(&d)
    }

    /// Fused received matrix: `v_j^H Y_j` for assisting APs, `Y_l` for the master.
    pub fn fuse(&self, received: &[CMat]) -> CMat {
        if !self.has_assistants() {
            return received[self.master].clone();
        }
        let n = self.antennas;
        let tau = received[self.master].ncols();
        let mut out = CMat::zeros(self.dim(), tau);
        for (ap, y) in received.iter().enumerate() {
            let row = self.column_of(ap);
            if ap == self.master {
                out.rows_mut(row, n).copy_from(y);
            } else {
                out.row_mut(row).copy_from(&(self.vectors[ap].adjoint() * y));
            }
        }
        out
    }
}

/// Fused pilot signals at the master for one UE.
#[derive(Debug, Clone)]
pub struct FusedSignals {
    /// `(N + L - 1) x tau_p` fused received matrix.
    pub received: CMat,
    /// Fused matrix despread with the target's pilot.
    pub despread: CVec,
}

pub fn fuse_block(block: &PilotBlock, fusion: &FusionSet, ue: usize, book: &PilotBook) -> FusedSignals {
    let received = fusion.fuse(&block.received);
    let despread = despread(&received, &block.assignment, ue, book);
    FusedSignals { received, despread }
}

#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub vector: CVec,
    pub scheme: Scheme,
    pub ap: usize,
    pub ue: usize,
    pub block: usize,
}

/// Rows `ap N .. (ap + 1) N` of a collective vector.
pub fn extract_block(collective: &CVec, ap: usize, antennas: usize) -> CVec {
    collective.rows(ap * antennas, antennas).into_owned()
}

/// Error trace of a linear MMSE estimator over the `selector` diagonal block,
/// normalized by the trace of the same block of `cov`.
pub fn theoretical_nmse(
    rbreve: &CMat,
    cov: &CMat,
    q_tk: &CMat,
    power: f64,
    tau_p: usize,
    selector: Range<usize>,
) -> Result<f64> {
    let len = selector.len();
    let start = selector.start;
    let cols = rbreve.columns(start, len).into_owned();
    let reduction = if cols.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        CMat::zeros(len, len)
    } else {
        let solved = HermitianSolver::new(q_tk)?.solve(&cols);
        (cols.adjoint() * solved).scale(power * tau_p as f64)
    };
    let error = hermitian_part(&(sub_block(rbreve, start, len) - reduction));
    let norm = trace_re(&sub_block(cov, start, len));
    let min = hermitian_eigenvalues(&error).first().copied().unwrap_or(0.0);
    if min < -1e-10 * norm.max(f64::MIN_POSITIVE) {
        return Err(SimError::InconsistentStats { scope: format!("rows {selector:?}"), min_eigenvalue: min });
    }
    if norm <= 0.0 {
        return Ok(0.0);
    }
    Ok(trace_re(&error).max(0.0) / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, frobenius, outer, relative_frobenius};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn rpsd(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        let f = CMat::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        &f * f.adjoint()
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!(matches!("cpu".parse::<Scheme>(), Err(SimError::UnknownScheme(_))));
    }

    #[test]
    fn lmmse_without_scattering_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let los = rvec(&mut rng, 3);
        let q = rpsd(&mut rng, 3) + identity(3);
        let y = rvec(&mut rng, 3);
        let zero = CMat::zeros(3, 3);
        let est = lmmse(&LmmseInputs { los: &los, rbreve: &zero, q_tk: &q, y: &y, power: 2.0, tau_p: 3 }).unwrap();
        assert_eq!(est, los);
    }

    #[test]
    fn lmmse_zero_innovation_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let los = rvec(&mut rng, 3);
        let r = rpsd(&mut rng, 3);
        let q = rpsd(&mut rng, 3) + identity(3);
        let y = los.scale((2.0f64 * 3.0).sqrt());
        let est = lmmse(&LmmseInputs { los: &los, rbreve: &r, q_tk: &q, y: &y, power: 2.0, tau_p: 3 }).unwrap();
        assert!((est - &los).norm() < 1e-14);
    }

    #[test]
    fn lmmse_noiseless_single_user_recovers_channel() {
        // With Q_tk = p tau Rbreve the estimate reduces to hbar + (y - ybar)/sqrt(p tau) = h.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, tau) = (0.5, 4usize);
        let los = rvec(&mut rng, 3);
        let r = rpsd(&mut rng, 3) + identity(3).scale(0.1);
        let h = &los + rvec(&mut rng, 3);
        let y = h.scale((p * tau as f64).sqrt());
        let q = r.scale(p * tau as f64);
        let est = lmmse(&LmmseInputs { los: &los, rbreve: &r, q_tk: &q, y: &y, power: p, tau_p: tau }).unwrap();
        assert!((est - h).norm() < 1e-10);
    }

    #[test]
    fn lmmse_rejects_mismatched_dimensions() {
        let los = CVec::zeros(2);
        let q = identity(3);
        let y = CVec::zeros(3);
        assert!(lmmse(&LmmseInputs { los: &los, rbreve: &q, q_tk: &q, y: &y, power: 1.0, tau_p: 2 }).is_err());
    }

    fn fusion_fixture() -> (FusionSet, Vec<CVec>) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let locals: Vec<CVec> = (0..3).map(|_| rvec(&mut rng, 2)).collect();
        (FusionSet::new(&locals, 1, false).unwrap(), locals)
    }

    #[test]
    fn vdiag_layout() {
        let locals = vec![CVec::from_vec(vec![c(1.0, 1.0), c(2.0, 0.0)]), CVec::zeros(2)];
        let f = FusionSet::new(&locals, 1, false).unwrap();
        let v = f.vdiag();
        assert_eq!(v.shape(), (4, 3));
        let expected = CMat::from_row_slice(
            4,
            3,
            &[
                c(1.0, 1.0), c(0.0, 0.0), c(0.0, 0.0),
                c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0),
                c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0),
                c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0),
            ],
        );
        assert_eq!(v, expected);
        let f0 = FusionSet::new(&locals, 0, false).unwrap();
        assert_eq!(f0.master_rows(), 0..2);
        assert_eq!(f0.vdiag()[(2, 2)], c(0.0, 0.0));
        assert!(FusionSet::new(&locals, 2, false).is_err());
    }

    #[test]
    fn structured_products_match_vdiag() {
        let (f, _) = fusion_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = f.vdiag();
        let a = rpsd(&mut rng, 6);
        assert!(relative_frobenius(&f.conjugate(&a), &(v.adjoint() * &a * &v)) < 1e-14);
        let x = rvec(&mut rng, 6);
        assert!((f.apply_adjoint(&x) - v.adjoint() * &x).norm() < 1e-14);
        assert!(relative_frobenius(&f.noise_floor(), &(v.adjoint() * &v)) < 1e-14);
        let ys: Vec<CMat> = (0..3).map(|_| CMat::from_fn(2, 4, |_, _| c(rng.random(), rng.random()))).collect();
        let stacked = crate::pilot::stack_rows(&ys);
        assert!(relative_frobenius(&f.fuse(&ys), &(v.adjoint() * stacked)) < 1e-14);
        // The master's channel passes through untouched.
        let fused = f.apply_adjoint(&x);
        assert_eq!(fused.rows(1, 2).into_owned(), x.rows(2, 2).into_owned());
        assert_eq!(fused[0], f.vector(0).unwrap().dotc(&x.rows(0, 2)));
    }

    #[test]
    fn selection_fusion_picks_first_row() {
        let e1 = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let f = FusionSet::new(&[e1.clone(), e1.clone(), e1], 2, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ys: Vec<CMat> = (0..3).map(|_| CMat::from_fn(2, 3, |_, _| c(rng.random(), rng.random()))).collect();
        let fused = f.fuse(&ys);
        assert_eq!(fused.row(0), ys[0].row(0));
        assert_eq!(fused.row(1), ys[1].row(0));
    }

    #[test]
    fn normalized_fusion_has_unit_noise_floor() {
        let (_, locals) = fusion_fixture();
        let f = FusionSet::new(&locals, 1, true).unwrap();
        assert!(relative_frobenius(&f.noise_floor(), &identity(4)) < 1e-14);
    }

    #[test]
    fn theoretical_nmse_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let los = rvec(&mut rng, 3);
        let q = rpsd(&mut rng, 3) + identity(3);
        let zero = CMat::zeros(3, 3);
        assert_eq!(theoretical_nmse(&zero, &outer(&los), &q, 1.0, 3, 0..3).unwrap(), 0.0);
        // Noiseless single user: Q_tk = p tau Rbreve gives zero error.
        let r = rpsd(&mut rng, 3) + identity(3).scale(0.2);
        let cov = outer(&los) + &r;
        let nmse = theoretical_nmse(&r, &cov, &r.scale(6.0), 2.0, 3, 0..3).unwrap();
        assert!(nmse.abs() < 1e-12);
        // Inconsistent statistics (Q_tk smaller than the signal part) are reported.
        assert!(theoretical_nmse(&r, &cov, &r.scale(0.5), 2.0, 3, 0..3).is_err());
        let sub = theoretical_nmse(&r, &cov, &(r.scale(6.0) + identity(3)), 2.0, 3, 1..3).unwrap();
        assert!(sub > 0.0 && sub < 1.0);
        assert!(frobenius(&zero) == 0.0);
    }
}
