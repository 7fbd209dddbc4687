//! Exact stationary laws of small instances.
//!
//! The single site is a birth-death chain with a geometric stationary law.
//! Small lattices are solved numerically on the state space truncated at a
//! mass cap `m_max`: masses that would exceed the cap are clamped to it, and
//! the probability sitting on capped states is reported as `cap_mass` so the
//! truncation bias can be judged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Geometry, Params, HOP_RATE};

/// Largest truncated state space the oracle will enumerate.
pub const MAX_STATES: usize = 1_000_000;

/// State spaces up to this size are solved by dense LU, larger ones iteratively.
pub const DENSE_LIMIT: usize = 2_000;

/// Truncated solutions are trusted only below this cap mass.
pub const CAP_MASS_TOLERANCE: f64 = 1e-6;

/// Target for `max_j |(pi Q)_j|`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

const MAX_SWEEPS: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no stationary law: deposition rate q = {q} is not below evaporation rate p = {p}")]
    NoStationaryLaw { p: f64, q: f64 },
    #[error("truncated state space has {states} states, above the limit of {limit}")]
    TooManyStates { states: f64, limit: usize },
    #[error("mass cap must be at least 1")]
    InvalidCap,
    #[error("generator is not irreducible: {0}")]
    Reducible(String),
    #[error("linear solve failed: {0}")]
    Singular(String),
    #[error("iterative solve did not converge: residual {residual:e} after {sweeps} sweeps")]
    NotConverged { residual: f64, sweeps: usize },
}

/// Geometric law `pi_m = (1 - r) r^m`, `r = q / p`, of an isolated site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleSiteLaw {
    pub ratio: f64,
}

impl SingleSiteLaw {
    pub fn prob(&self, m: u64) -> f64 {
        if self.ratio == 0.0 {
            return if m == 0 { 1.0 } else { 0.0 };
        }
        (1.0 - self.ratio) * self.ratio.powf(m as f64)
    }

    /// `pi_0..=pi_{m_max}`.
    pub fn probs(&self, m_max: u64) -> Vec<f64> {
        (0..=m_max).map(|m| self.prob(m)).collect()
    }

    pub fn mean(&self) -> f64 {
        self.ratio / (1.0 - self.ratio)
    }

    /// Probability that the site is occupied.
    pub fn density(&self) -> f64 {
        self.ratio
    }
}

/// Stationary law of one site: birth rate `q`, death rate `p` for `m >= 1`
/// (hops are no-ops on a single site).
pub fn single_site_stationary(params: &Params) -> Result<SingleSiteLaw, OracleError> {
    if params.q == 0.0 {
        return Ok(SingleSiteLaw { ratio: 0.0 });
    }
    if params.q >= params.p {
        return Err(OracleError::NoStationaryLaw {
            p: params.p,
            q: params.q,
        });
    }
    Ok(SingleSiteLaw {
        ratio: params.q / params.p,
    })
}

/// Configurations `(m_1, .., m_S)` with every mass in `0..=m_max`, numbered in
/// mixed radix with site 0 least significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedStateSpace {
    geom: Geometry,
    m_max: u64,
    states: usize,
}

impl TruncatedStateSpace {
    pub fn new(geom: Geometry, m_max: u64) -> Result<Self, OracleError> {
        if m_max < 1 {
            return Err(OracleError::InvalidCap);
        }
        let states = ((m_max + 1) as f64).powi(geom.sites() as i32);
        if states > MAX_STATES as f64 {
            return Err(OracleError::TooManyStates {
                states,
                limit: MAX_STATES,
            });
        }
        Ok(TruncatedStateSpace {
            geom,
            m_max,
            states: states as usize,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn m_max(&self) -> u64 {
        self.m_max
    }

    pub fn len(&self) -> usize {
        self.states
    }

    pub fn is_empty(&self) -> bool {
        self.states == 0
    }

    fn base(&self) -> usize {
        self.m_max as usize + 1
    }

    pub fn encode(&self, masses: &[u64]) -> usize {
        debug_assert_eq!(masses.len(), self.geom.sites());
        masses.iter().rev().fold(0, |acc, &m| acc * self.base() + m as usize)
    }

    pub fn decode_into(&self, mut index: usize, masses: &mut [u64]) {
        for m in masses.iter_mut() {
            *m = (index % self.base()) as u64;
            index /= self.base();
        }
    }

    pub fn decode(&self, index: usize) -> Vec<u64> {
        let mut masses = vec![0; self.geom.sites()];
        self.decode_into(index, &mut masses);
        masses
    }
}

/// Sparse CTMC generator: off-diagonal rates in CSR plus the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    space: TruncatedStateSpace,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    diag: Vec<f64>,
}

impl Generator {
    pub fn space(&self) -> &TruncatedStateSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Off-diagonal entries `(j, Q_ij)` of row `i`, sorted by `j`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.rates[range].iter().copied())
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// Dense copy; intended for small generators.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            q[(i, i)] = self.diag[i];
            for (j, r) in self.row(i) {
                q[(i, j)] = r;
            }
        }
        q
    }

    /// `max_j |(pi Q)_j|`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut flow: Vec<f64> = pi.iter().zip(&self.diag).map(|(p, d)| p * d).collect();
        for (i, &p) in pi.iter().enumerate() {
            for (j, r) in self.row(i) {
                flow[j] += p * r;
            }
        }
        flow.iter().fold(0.0, |acc, f| acc.max(f.abs()))
    }

    /// Incoming transitions per state: `(i, Q_ij)` for each target `j`.
    fn transpose(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let n = self.len();
        let mut ptr = vec![0usize; n + 1];
        for &j in &self.cols {
            ptr[j + 1] += 1;
        }
        for j in 0..n {
            ptr[j + 1] += ptr[j];
        }
        let mut fill = ptr.clone();
        let mut src = vec![0; self.cols.len()];
        let mut rates = vec![0.0; self.cols.len()];
        for i in 0..n {
            for (j, r) in self.row(i) {
                src[fill[j]] = i;
                rates[fill[j]] = r;
                fill[j] += 1;
            }
        }
        (ptr, src, rates)
    }
}

/// Builds the truncated generator of the lattice dynamics.
///
/// A hop or deposition whose resulting mass would exceed `m_max` leaves the
/// target at `m_max`; a deposition onto a capped site is dropped.
pub fn build_generator(space: &TruncatedStateSpace, params: &Params) -> Generator {
    let geom = *space.geometry();
    let sites = geom.sites();
    let slots = geom.slots();
    let hop = HOP_RATE / slots as f64;
    let m_max = space.m_max();
    let weights: Vec<usize> = (0..sites).map(|i| space.base().pow(i as u32)).collect();

    let n = space.len();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut rates = Vec::new();
    let mut diag = Vec::with_capacity(n);
    let mut masses = vec![0u64; sites];
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(sites * (slots + 2));
    row_ptr.push(0);
    for idx in 0..n {
        space.decode_into(idx, &mut masses);
        row.clear();
        for (i, &m) in masses.iter().enumerate() {
            if m > 0 {
                for slot in 0..slots {
                    let j = geom.neighbor(i, slot);
                    if j == i {
                        continue;
                    }
                    let merged = (masses[j] + m).min(m_max);
                    let target = idx - m as usize * weights[i] + (merged - masses[j]) as usize * weights[j];
                    row.push((target, hop));
                }
                if params.p > 0.0 {
                    row.push((idx - weights[i], params.p));
                }
            }
            if m < m_max && params.q > 0.0 {
                row.push((idx + weights[i], params.q));
            }
        }
        row.sort_unstable_by_key(|e| e.0);
        let mut out = 0.0;
        let mut k = 0;
        while k < row.len() {
            let (j, mut r) = row[k];
            k += 1;
            while k < row.len() && row[k].0 == j {
                r += row[k].1;
                k += 1;
            }
            cols.push(j);
            rates.push(r);
            out += r;
        }
        diag.push(-out);
        row_ptr.push(cols.len());
    }
    Generator {
        space: *space,
        row_ptr,
        cols,
        rates,
        diag,
    }
}

/// Stationary law on a truncated state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDist {
    pub space: TruncatedStateSpace,
    pub probs: Vec<f64>,
    /// Probability of states with some site at the cap.
    pub cap_mass: f64,
    pub residual: f64,
}

impl StationaryDist {
    /// Point mass on the empty configuration.
    pub fn empty(space: TruncatedStateSpace) -> Self {
        let mut probs = vec![0.0; space.len()];
        probs[0] = 1.0;
        StationaryDist {
            space,
            probs,
            cap_mass: 0.0,
            residual: 0.0,
        }
    }

    pub fn is_reliable(&self) -> bool {
        self.cap_mass < CAP_MASS_TOLERANCE
    }

    /// Law of the mass at `site`, indexed `0..=m_max`.
    pub fn site_marginal_at(&self, site: usize) -> Vec<f64> {
        let base = self.space.m_max() as usize + 1;
        let stride = base.pow(site as u32);
        let mut law = vec![0.0; base];
        for (idx, p) in self.probs.iter().enumerate() {
            law[(idx / stride) % base] += p;
        }
        law
    }

    /// Law of the mass at site 0; by translation invariance, at any site.
    pub fn site_marginal(&self) -> Vec<f64> {
        self.site_marginal_at(0)
    }

    pub fn expected_site_mass(&self) -> f64 {
        self.site_marginal().iter().enumerate().map(|(m, p)| m as f64 * p).sum()
    }
}

fn cap_mass(space: &TruncatedStateSpace, probs: &[f64]) -> f64 {
    let mut masses = vec![0; space.geometry().sites()];
    probs
        .iter()
        .enumerate()
        .filter(|&(idx, _)| {
            space.decode_into(idx, &mut masses);
            masses.contains(&space.m_max())
        })
        .map(|(_, p)| p)
        .sum()
}

/// Solves `pi Q = 0`, `sum pi = 1`.
///
/// Small generators use a dense LU solve with one balance equation replaced
/// by the normalization; large ones use Gauss-Seidel sweeps on the balance
/// equations. Every state must have a positive exit rate.
pub fn stationary_solve(gen: &Generator) -> Result<StationaryDist, OracleError> {
    let n = gen.len();
    if n > 1 {
        if let Some(i) = (0..n).find(|&i| gen.diagonal(i) >= 0.0) {
            return Err(OracleError::Reducible(format!(
                "state {:?} has no outgoing transitions",
                gen.space().decode(i)
            )));
        }
    }
    let mut probs = if n <= DENSE_LIMIT {
        dense_solve(gen)?
    } else {
        gauss_seidel(gen)?
    };
    for p in probs.iter_mut() {
        // Round-off can leave tiny negatives on improbable states.
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    let residual = gen.residual(&probs);
    if !residual.is_finite() || residual >= RESIDUAL_TOLERANCE {
        return Err(OracleError::Singular(format!("residual {residual:e} above tolerance")));
    }
    Ok(StationaryDist {
        space: *gen.space(),
        cap_mass: cap_mass(gen.space(), &probs),
        probs,
        residual,
    })
}

fn dense_solve(gen: &Generator) -> Result<Vec<f64>, OracleError> {
    let n = gen.len();
    let mut a = gen.to_dense().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| OracleError::Singular("LU factorization is singular".into()))?;
    Ok(x.iter().copied().collect())
}

fn gauss_seidel(gen: &Generator) -> Result<Vec<f64>, OracleError> {
    let n = gen.len();
    let (ptr, src, rates) = gen.transpose();
    let exit: Vec<f64> = (0..n).map(|i| -gen.diagonal(i)).collect();
    let mut pi = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        for j in 0..n {
            let inflow: f64 = (ptr[j]..ptr[j + 1]).map(|k| pi[src[k]] * rates[k]).sum();
            pi[j] = inflow / exit[j];
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        if sweep % 10 == 0 {
            residual = gen.residual(&pi);
            if residual < RESIDUAL_TOLERANCE * 1e-2 {
                return Ok(pi);
            }
        }
    }
    Err(OracleError::NotConverged {
        residual,
        sweeps: MAX_SWEEPS,
    })
}

/// Stationary law of the truncated lattice.
///
/// With `q = 0` the empty lattice is absorbing and is returned directly;
/// otherwise `p` and `q` must both be positive.
pub fn solve_lattice(geom: Geometry, params: &Params, m_max: u64) -> Result<StationaryDist, OracleError> {
    let space = TruncatedStateSpace::new(geom, m_max)?;
    if params.q == 0.0 {
        return Ok(StationaryDist::empty(space));
    }
    if params.p == 0.0 {
        return Err(OracleError::Reducible(
            "without evaporation, mass only accumulates at the cap".into(),
        ));
    }
    stationary_solve(&build_generator(&space, params))
}
