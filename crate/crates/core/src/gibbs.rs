//! The canonical vortex ensemble: Hamiltonian, partition function,
//! Metropolis sampling and correlation histograms.
//!
//! A configuration holds `N/2` positive vortices `y_i` and `N/2` negative
//! vortices `z_i`. The energy is
//!
//! `H = ½ Σ_{i≠j} ξ_i ξ_j K(x_i - x_j)`
//!
//! for a pair kernel `K` (normally the Green function) and the Gibbs density
//! is proportional to `e^{-(β/N) H}`.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{torus_distance, KernelTable, COINCIDENCE_SCALE};
use crate::rng::{self, StreamRng};
use crate::stats::{jackknife_stderr, Estimate, EstimateMethod};
use crate::sum::NeumaierSum;

/// Positions of the positive and negative vortices.
#[derive(Debug, Clone, PartialEq)]
pub struct VortexConfig {
    plus: Vec<[f64; 2]>,
    minus: Vec<[f64; 2]>,
}

impl VortexConfig {
    pub fn new(plus: Vec<[f64; 2]>, minus: Vec<[f64; 2]>) -> Result<Self> {
        if plus.is_empty() || plus.len() != minus.len() {
            return Err(Error::InvalidParams(format!(
                "need equal, non-zero numbers of each sign, got {} and {}",
                plus.len(),
                minus.len()
            )));
        }
        let ok = |p: &[f64; 2]| p.iter().all(|c| (0.0..1.0).contains(c));
        if !plus.iter().chain(&minus).all(ok) {
            return Err(Error::InvalidParams("coordinates must lie in [0, 1)".into()));
        }
        Ok(Self { plus, minus })
    }

    /// `N` independent uniform vortices (`N/2` of each sign).
    pub fn uniform<R: Rng + ?Sized>(n_vortices: usize, rng: &mut R) -> Self {
        let half = n_vortices / 2;
        let mut draw = || [rng.random::<f64>(), rng.random::<f64>()];
        let plus = (0..half).map(|_| draw()).collect();
        let minus = (0..half).map(|_| draw()).collect();
        Self { plus, minus }
    }

    pub fn n_vortices(&self) -> usize {
        2 * self.plus.len()
    }

    pub fn plus(&self) -> &[[f64; 2]] {
        &self.plus
    }

    pub fn minus(&self) -> &[[f64; 2]] {
        &self.minus
    }

    /// Vortex `i` in the order `(y_1..y_{N/2}, z_1..z_{N/2})`.
    pub fn position(&self, i: usize) -> [f64; 2] {
        let h = self.plus.len();
        if i < h {
            self.plus[i]
        } else {
            self.minus[i - h]
        }
    }

    /// `ξ_i`: `+1` for the first half, `-1` for the second.
    pub fn sign(&self, i: usize) -> f64 {
        if i < self.plus.len() {
            1.0
        } else {
            -1.0
        }
    }

    fn set_position(&mut self, i: usize, p: [f64; 2]) {
        let h = self.plus.len();
        if i < h {
            self.plus[i] = p;
        } else {
            self.minus[i - h] = p;
        }
    }

    /// Every vortex shifted by `t` on the torus.
    pub fn translated(&self, t: [f64; 2]) -> Self {
        let shift = |p: &[f64; 2]| [wrap_unit(p[0] + t[0]), wrap_unit(p[1] + t[1])];
        Self {
            plus: self.plus.iter().map(shift).collect(),
            minus: self.minus.iter().map(shift).collect(),
        }
    }

    /// Positive and negative vortices exchanged.
    pub fn sign_swapped(&self) -> Self {
        Self {
            plus: self.minus.clone(),
            minus: self.plus.clone(),
        }
    }

    /// Smallest distance between any two vortices.
    pub fn min_pair_distance(&self) -> f64 {
        let n = self.n_vortices();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.min(torus_distance(self.position(i), self.position(j)));
            }
        }
        best
    }
}

fn wrap_unit(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs.
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Inverse temperature, number of vortices and correlation orders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleParams {
    pub beta: f64,
    pub n_vortices: usize,
    pub h: usize,
    pub l: usize,
}

impl EnsembleParams {
    pub fn new(beta: f64, n_vortices: usize, h: usize, l: usize) -> Result<Self> {
        let p = Self {
            beta,
            n_vortices,
            h,
            l,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vortices;
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidParams(format!("N must be even and at least 2, got {n}")));
        }
        let limit = 4.0 * std::f64::consts::PI * n as f64;
        if !(self.beta >= 0.0 && self.beta < limit) {
            return Err(Error::InvalidParams(format!(
                "beta must lie in [0, 4πN) = [0, {limit}), got {}",
                self.beta
            )));
        }
        if self.h > n / 2 || self.l > n / 2 {
            return Err(Error::InvalidParams(format!(
                "h = {} and l = {} must not exceed N/2 = {}",
                self.h,
                self.l,
                n / 2
            )));
        }
        Ok(())
    }

    /// `β/N`, the coupling in the Gibbs weight.
    pub fn coupling(&self) -> f64 {
        self.beta / self.n_vortices as f64
    }
}

/// `H = Σ_{i<j} ξ_i ξ_j K(x_i - x_j)` for the tabulated kernel.
///
/// Fails if two vortices coincide and the kernel is singular.
pub fn hamiltonian(cfg: &VortexConfig, kernel: &KernelTable) -> Result<f64> {
    let n = cfg.n_vortices();
    let singular = kernel.kind().is_singular();
    let mut h = NeumaierSum::new();
    for i in 0..n {
        let xi = cfg.position(i);
        for j in (i + 1)..n {
            let xj = cfg.position(j);
            if singular {
                let dist = torus_distance(xi, xj);
                if dist < COINCIDENCE_SCALE {
                    return Err(Error::CoincidentVortices { i, j, distance: dist });
                }
            }
            let k = kernel.eval([xi[0] - xj[0], xi[1] - xj[1]]);
            h.add(cfg.sign(i) * cfg.sign(j) * k);
        }
    }
    Ok(h.value())
}

/// `(H_{V_m}, H_{W_m})`, whose sum is the Green-function energy.
pub fn split_hamiltonian(
    cfg: &VortexConfig,
    smooth: &KernelTable,
    yukawa: &KernelTable,
) -> Result<(f64, f64)> {
    Ok((hamiltonian(cfg, smooth)?, hamiltonian(cfg, yukawa)?))
}

/// `E[e^{-c H}]` over uniform configurations of `n_vortices` vortices,
/// where `c` is the given coupling. Sample `i` uses seed `seed + i`, so
/// runs with different kernels see the same configurations.
pub fn boltzmann_average(
    kernel: &KernelTable,
    n_vortices: usize,
    coupling: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if coupling == 0.0 {
        return Ok(Estimate::exact(1.0));
    }
    let weights: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(rng::derived_seed(seed, i as u64), 0);
            let cfg = VortexConfig::uniform(n_vortices, &mut r);
            hamiltonian(&cfg, kernel).map(|h| (-coupling * h).exp())
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&weights, EstimateMethod::MonteCarlo))
}

/// Plain Monte Carlo estimate of `Z = ∫ e^{-(β/N) H} dx^N`.
pub fn partition_estimate(
    p: &EnsembleParams,
    kernel: &KernelTable,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    p.validate()?;
    boltzmann_average(kernel, p.n_vortices, p.coupling(), n_samples, seed)
}

/// Random-scan Metropolis chain with wrapped Gaussian single-vortex moves.
#[derive(Debug, Clone)]
pub struct MetropolisChain<'a> {
    params: EnsembleParams,
    kernel: &'a KernelTable,
    sigma: f64,
    cfg: VortexConfig,
    rng: StreamRng,
    proposed: u64,
    accepted: u64,
}

impl<'a> MetropolisChain<'a> {
    /// Chain started from a uniform configuration drawn from its own stream.
    pub fn new(
        params: EnsembleParams,
        kernel: &'a KernelTable,
        proposal_sigma: f64,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        params.validate()?;
        if !(proposal_sigma > 0.0 && proposal_sigma < 0.5) {
            return Err(Error::InvalidParams(format!(
                "proposal_sigma must lie in (0, 0.5), got {proposal_sigma}"
            )));
        }
        let mut rng = rng::stream(seed, stream);
        let mut cfg = VortexConfig::uniform(params.n_vortices, &mut rng);
        while params.beta > 0.0 && cfg.min_pair_distance() < COINCIDENCE_SCALE {
            cfg = VortexConfig::uniform(params.n_vortices, &mut rng);
        }
        Ok(Self {
            params,
            kernel,
            sigma: proposal_sigma,
            cfg,
            rng,
            proposed: 0,
            accepted: 0,
        })
    }

    pub fn config(&self) -> &VortexConfig {
        &self.cfg
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Energy change from moving vortex `i` to `to`; `None` if the move
    /// lands within the coincidence scale of another vortex.
    fn energy_change(&self, i: usize, to: [f64; 2]) -> Option<f64> {
        let from = self.cfg.position(i);
        let mut delta = 0.0;
        for j in 0..self.cfg.n_vortices() {
            if j == i {
                continue;
            }
            let xj = self.cfg.position(j);
            if torus_distance(to, xj) < COINCIDENCE_SCALE {
                return None;
            }
            let new = self.kernel.eval([to[0] - xj[0], to[1] - xj[1]]);
            let old = self.kernel.eval([from[0] - xj[0], from[1] - xj[1]]);
            delta += self.cfg.sign(j) * (new - old);
        }
        Some(self.cfg.sign(i) * delta)
    }

    /// One proposal; returns whether it was accepted.
    pub fn step(&mut self) -> Result<bool> {
        let n = self.cfg.n_vortices();
        let i = self.rng.random_range(0..n);
        let dx: f64 = StandardNormal.sample(&mut self.rng);
        let dy: f64 = StandardNormal.sample(&mut self.rng);
        let from = self.cfg.position(i);
        let to = [wrap_unit(from[0] + self.sigma * dx), wrap_unit(from[1] + self.sigma * dy)];
        self.proposed += 1;

        let accept = if self.params.beta == 0.0 {
            true
        } else {
            match self.energy_change(i, to) {
                None => false,
                Some(dh) if !dh.is_finite() => {
                    return Err(Error::NonFiniteEnergy(format!(
                        "energy change {dh} moving vortex {i} to {to:?}"
                    )))
                }
                Some(dh) => {
                    let log_ratio = -self.params.coupling() * dh;
                    log_ratio >= 0.0 || self.rng.random::<f64>() < log_ratio.exp()
                }
            }
        };
        if accept {
            self.cfg.set_position(i, to);
            self.accepted += 1;
        }
        Ok(accept)
    }

    pub fn advance(&mut self, n_steps: usize) -> Result<()> {
        for _ in 0..n_steps {
            self.step()?;
        }
        Ok(())
    }
}

/// Burn-in, thinning and recording schedule for a set of chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSettings {
    pub n_chains: usize,
    /// Steps discarded at the start of each chain.
    pub burn_in: usize,
    /// Steps between recorded configurations.
    pub thin: usize,
    /// Recorded configurations per chain.
    pub n_records: usize,
    pub proposal_sigma: f64,
    /// Batches per chain for batch-means errors.
    pub n_batches: usize,
}

impl ChainSettings {
    /// Burn-in `10·N·bins` steps and thinning `N` steps.
    pub fn defaults(n_vortices: usize, bins: usize, n_records: usize) -> Self {
        Self {
            n_chains: 4,
            burn_in: 10 * n_vortices * bins,
            thin: n_vortices,
            n_records,
            proposal_sigma: 0.1,
            n_batches: 10,
        }
    }
}

/// Recorded configurations of one chain and its acceptance rate.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub configs: Vec<VortexConfig>,
    pub steps: Vec<usize>,
    pub acceptance_rate: f64,
}

/// Runs one chain for `n_steps` after burn-in, recording every `thin` steps.
pub fn mcmc_chain(
    p: &EnsembleParams,
    kernel: &KernelTable,
    n_steps: usize,
    burn_in: usize,
    thin: usize,
    proposal_sigma: f64,
    seed: u64,
) -> Result<ChainRun> {
    let thin = thin.max(1);
    let mut chain = MetropolisChain::new(*p, kernel, proposal_sigma, seed, 0)?;
    chain.advance(burn_in)?;
    let mut configs = Vec::with_capacity(n_steps / thin);
    let mut steps = Vec::with_capacity(n_steps / thin);
    for s in 1..=n_steps {
        chain.step()?;
        if s % thin == 0 {
            configs.push(chain.config().clone());
            steps.push(burn_in + s);
        }
    }
    Ok(ChainRun {
        configs,
        steps,
        acceptance_rate: chain.acceptance_rate(),
    })
}

/// Writes recorded configurations as `step,sign,index,x,y`.
pub fn write_chain_csv<W: Write>(run: &ChainRun, mut w: W) -> io::Result<()> {
    writeln!(w, "step,sign,index,x,y")?;
    for (cfg, step) in run.configs.iter().zip(&run.steps) {
        for (sign, pts) in [(1, cfg.plus()), (-1, cfg.minus())] {
            for (idx, p) in pts.iter().enumerate() {
                writeln!(w, "{step},{sign},{idx},{},{}", p[0], p[1])?;
            }
        }
    }
    Ok(())
}

/// Which correlation function a histogram estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationKind {
    /// One-point density of the positive vortices.
    OnePoint,
    /// Density of the separation `y_i - z_j` of opposite-sign pairs.
    OppositePair,
    /// Density of the separation `y_i - y_j` of same-sign pairs.
    SamePair,
}

impl CorrelationKind {
    /// The estimator for `(h, ℓ)`; only the orders with `h + ℓ ≤ 2` and
    /// `h ≥ 1` are supported.
    pub fn from_orders(h: usize, l: usize) -> Result<Self> {
        match (h, l) {
            (1, 0) => Ok(Self::OnePoint),
            (1, 1) => Ok(Self::OppositePair),
            (2, 0) => Ok(Self::SamePair),
            _ => Err(Error::InvalidParams(format!(
                "correlation order (h, l) = ({h}, {l}) not supported; use (1,0), (1,1) or (2,0)"
            ))),
        }
    }

    /// Number of points (or pairs) binned per configuration.
    pub fn per_config(self, n_vortices: usize) -> usize {
        let h = n_vortices / 2;
        match self {
            Self::OnePoint => h,
            Self::OppositePair => h * h,
            Self::SamePair => h * (h - 1),
        }
    }
}

/// Histogram over `bins x bins` cells with per-batch counts.
#[derive(Debug, Clone)]
pub struct CorrelationAccumulator {
    kind: CorrelationKind,
    bins: usize,
    records_per_batch: usize,
    batches: Vec<Vec<u64>>,
    current: Vec<u64>,
    in_current: usize,
}

impl CorrelationAccumulator {
    pub fn new(kind: CorrelationKind, bins: usize, records_per_batch: usize) -> Self {
        Self {
            kind,
            bins,
            records_per_batch: records_per_batch.max(1),
            batches: Vec::new(),
            current: vec![0; bins * bins],
            in_current: 0,
        }
    }

    #[inline]
    fn cell(&self, d: [f64; 2]) -> usize {
        let b = self.bins;
        let bin = |x: f64| ((wrap_unit(x) * b as f64) as usize).min(b - 1);
        bin(d[0]) * b + bin(d[1])
    }

    pub fn record(&mut self, cfg: &VortexConfig) {
        let (plus, minus) = (cfg.plus(), cfg.minus());
        match self.kind {
            CorrelationKind::OnePoint => {
                for p in plus {
                    let c = self.cell(*p);
                    self.current[c] += 1;
                }
            }
            CorrelationKind::OppositePair => {
                for y in plus {
                    for z in minus {
                        let c = self.cell([y[0] - z[0], y[1] - z[1]]);
                        self.current[c] += 1;
                    }
                }
            }
            CorrelationKind::SamePair => {
                for (i, a) in plus.iter().enumerate() {
                    for (j, b) in plus.iter().enumerate() {
                        if i != j {
                            let c = self.cell([a[0] - b[0], a[1] - b[1]]);
                            self.current[c] += 1;
                        }
                    }
                }
            }
        }
        self.in_current += 1;
        if self.in_current == self.records_per_batch {
            let full = std::mem::replace(&mut self.current, vec![0; self.bins * self.bins]);
            self.batches.push(full);
            self.in_current = 0;
        }
    }

    /// Appends another accumulator's completed batches.
    pub fn merge(&mut self, other: CorrelationAccumulator) {
        self.batches.extend(other.batches);
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    /// Normalised estimate from the completed batches.
    pub fn finish(&self, params: EnsembleParams, n_configs: usize) -> Result<CorrelationEstimate> {
        let cells = self.bins * self.bins;
        let mut totals = vec![0u64; cells];
        for b in &self.batches {
            for (t, c) in totals.iter_mut().zip(b) {
                *t += c;
            }
        }
        let n_points: u64 = totals.iter().sum();
        let per_bin = n_points as f64 / cells as f64;
        if per_bin < 10.0 {
            return Err(Error::InsufficientSamples { per_bin });
        }
        let normalise = |counts: &[u64]| -> Vec<f64> {
            let total: u64 = counts.iter().sum();
            counts.iter().map(|&c| c as f64 * cells as f64 / total as f64).collect()
        };
        let values = normalise(&totals);
        let batch_values: Vec<Vec<f64>> = self.batches.iter().map(|b| normalise(b)).collect();
        let nb = batch_values.len();
        let stderr = (0..cells)
            .map(|c| {
                if nb < 2 {
                    return f64::NAN;
                }
                let col: Vec<f64> = batch_values.iter().map(|b| b[c]).collect();
                Estimate::from_samples(&col, EstimateMethod::Mcmc).stderr
            })
            .collect();
        Ok(CorrelationEstimate {
            params,
            kind: self.kind,
            bins: self.bins,
            values,
            stderr,
            batch_values,
            n_configs,
            n_points,
        })
    }
}

/// Histogram estimate of a correlation function, normalised to grid mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEstimate {
    pub params: EnsembleParams,
    pub kind: CorrelationKind,
    pub bins: usize,
    /// Row-major `bins x bins` values.
    pub values: Vec<f64>,
    /// Batch-means standard error per bin.
    pub stderr: Vec<f64>,
    /// Normalised histogram of each batch, in chain order.
    pub batch_values: Vec<Vec<f64>>,
    pub n_configs: usize,
    /// Points or pairs binned in total.
    pub n_points: u64,
}

impl CorrelationEstimate {
    pub fn grid_mean(&self) -> f64 {
        crate::sum::mean(&self.values)
    }

    /// Writes `bin_i,bin_j,value,stderr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_i,bin_j,value,stderr")?;
        for i in 0..self.bins {
            for j in 0..self.bins {
                let c = i * self.bins + j;
                writeln!(w, "{i},{j},{},{}", self.values[c], self.stderr[c])?;
            }
        }
        Ok(())
    }
}

/// Runs `settings.n_chains` chains in parallel (stream = chain index) and
/// histograms the requested correlation function.
pub fn correlation_estimate(
    p: &EnsembleParams,
    kernel: &KernelTable,
    bins: usize,
    settings: &ChainSettings,
    seed: u64,
) -> Result<(CorrelationEstimate, f64)> {
    let kind = CorrelationKind::from_orders(p.h, p.l)?;
    let per_batch = (settings.n_records / settings.n_batches.max(1)).max(1);
    let runs: Vec<(CorrelationAccumulator, f64)> = (0..settings.n_chains)
        .into_par_iter()
        .map(|c| -> Result<_> {
            let mut chain =
                MetropolisChain::new(*p, kernel, settings.proposal_sigma, seed, c as u64)?;
            chain.advance(settings.burn_in)?;
            let mut acc = CorrelationAccumulator::new(kind, bins, per_batch);
            for _ in 0..settings.n_records {
                chain.advance(settings.thin.max(1))?;
                acc.record(chain.config());
            }
            Ok((acc, chain.acceptance_rate()))
        })
        .collect::<Result<_>>()?;
    let mut merged = CorrelationAccumulator::new(kind, bins, per_batch);
    let mut acceptance = NeumaierSum::new();
    for (acc, rate) in runs {
        acceptance.add(rate);
        merged.merge(acc);
    }
    let est = merged.finish(*p, settings.n_chains * settings.n_records)?;
    Ok((est, acceptance.value() / settings.n_chains as f64))
}

/// Grid `L^p` distance of a histogram from 1, with the noise floor of a flat
/// histogram with the same number of binned points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpDistance {
    pub distance: Estimate,
    /// `sqrt(cells / points)`: the `L²` distance expected from counting
    /// noise alone when every point were independent.
    pub noise_floor: f64,
}

fn grid_lp_distance(values: &[f64], p: f64) -> f64 {
    let s: NeumaierSum = values.iter().map(|v| (v - 1.0).abs().powf(p)).collect();
    (s.value() / values.len() as f64).powf(1.0 / p)
}

/// `(mean_b |ρ̂_b - 1|^p)^{1/p}` with a leave-one-batch-out jackknife error.
pub fn lp_distance(est: &CorrelationEstimate, p: f64) -> LpDistance {
    let value = grid_lp_distance(&est.values, p);
    let nb = est.batch_values.len();
    let stderr = if nb >= 2 {
        let cells = est.values.len();
        let reps: Vec<f64> = (0..nb)
            .map(|leave| {
                let mut acc = vec![NeumaierSum::new(); cells];
                for (b, bv) in est.batch_values.iter().enumerate() {
                    if b != leave {
                        for (a, v) in acc.iter_mut().zip(bv) {
                            a.add(*v);
                        }
                    }
                }
                let mean: Vec<f64> = acc.iter().map(|a| a.value() / (nb - 1) as f64).collect();
                grid_lp_distance(&mean, p)
            })
            .collect();
        jackknife_stderr(&reps)
    } else {
        0.0
    };
    LpDistance {
        distance: Estimate {
            value,
            stderr,
            n_samples: est.n_configs,
            method: EstimateMethod::Jackknife,
        },
        noise_floor: (est.values.len() as f64 / est.n_points as f64).sqrt(),
    }
}
