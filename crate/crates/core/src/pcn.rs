//! Conditional-mean estimation: a preconditioned Crank-Nicolson chain
//! targeting the posterior whose density against the Gaussian reference
//! measure is `exp(-potential(u))`, plus streaming statistics (running
//! mean/variance, per-pixel quantile histograms, CI maps).
//!
//! The proposal is `v = sqrt(1 - beta^2) u + beta w` with `w` drawn from
//! the prior covariance, accepted with probability
//! `min(1, exp(potential(u) - potential(v)))`. The Gaussian part of the
//! posterior is handled entirely by the proposal, so a zero potential
//! leaves the prior invariant and accepts every step — the decisive
//! correctness check for the proposal/acceptance pairing.
//!
//! A chain is strictly sequential and owns one generator seeded from its
//! config; independent chains merge deterministically.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::gauss::PriorCovariance;
use crate::image::Image;
use crate::math;

/// Histogram range start for per-pixel quantiles.
const HIST_LO: f64 = -64.0;
/// Histogram range length: covers the clipped intensity range with
/// headroom at bin width 384/4096 = 0.09375.
const HIST_SPAN: f64 = 384.0;
const HIST_BINS: usize = 4096;

/// Chain configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcnConfig {
    /// Step-size parameter in `[0, 1]`.
    pub beta: f64,
    /// Post-burn-in steps (samples are taken every `thin` of them).
    pub n_samples: u64,
    pub n_burnin: u64,
    pub seed: u64,
    /// Acceptance-rate target for burn-in adaptation.
    pub target_acceptance: f64,
    /// When set, `beta` is scaled by 1.1 up/down every 500 burn-in steps
    /// to steer the windowed acceptance rate toward the target, then
    /// frozen.
    pub adapt_burnin: bool,
    /// Accumulate statistics every `thin`-th post-burn-in step.
    pub thin: u64,
}

impl PcnConfig {
    pub fn new(seed: u64) -> Self {
        PcnConfig {
            beta: 0.1,
            n_samples: 100_000,
            n_burnin: 5_000,
            seed,
            target_acceptance: 0.25,
            adapt_burnin: true,
            thin: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: "step parameter must lie in [0, 1]",
            });
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter {
                name: "n_samples",
                reason: "at least one sampling step is required",
            });
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter {
                name: "thin",
                reason: "thinning stride must be at least 1",
            });
        }
        Ok(())
    }
}

/// Streaming per-pixel statistics of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStats {
    width: usize,
    height: usize,
    count: u64,
    mean: Vec<f64>,
    /// Welford sum of squared deviations.
    m2: Vec<f64>,
    /// Running min and max per pixel, used to clamp histogram quantiles
    /// so degenerate (constant) chains report exactly zero spread.
    min: Vec<f64>,
    max: Vec<f64>,
    /// Fixed-bin histogram per pixel, row-major `pixel * HIST_BINS + bin`.
    hist: Vec<u32>,
    pub accepted: u64,
    pub proposed: u64,
}

impl ChainStats {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        ChainStats {
            width,
            height,
            count: 0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
            min: vec![f64::INFINITY; n],
            max: vec![f64::NEG_INFINITY; n],
            hist: vec![0u32; n * HIST_BINS],
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Accumulates one state.
    pub fn push(&mut self, u: &[f64]) -> Result<()> {
        if u.len() != self.mean.len() {
            return Err(Error::SizeMismatch {
                what: "chain state",
                expected: self.mean.len(),
                actual: u.len(),
            });
        }
        self.count += 1;
        let k = self.count as f64;
        for (i, &x) in u.iter().enumerate() {
            let delta = x - self.mean[i];
            self.mean[i] += delta / k;
            self.m2[i] += delta * (x - self.mean[i]);
            if x < self.min[i] {
                self.min[i] = x;
            }
            if x > self.max[i] {
                self.max[i] = x;
            }
            let bin = ((x - HIST_LO) / HIST_SPAN * HIST_BINS as f64) as isize;
            let bin = bin.clamp(0, HIST_BINS as isize - 1) as usize;
            self.hist[i * HIST_BINS + bin] += 1;
        }
        Ok(())
    }

    /// Deterministic merge of two independent chains (weighted mean/M2
    /// combine, histogram add).
    pub fn merge(&mut self, other: &ChainStats) -> Result<()> {
        if other.mean.len() != self.mean.len() {
            return Err(Error::SizeMismatch {
                what: "chain stats",
                expected: self.mean.len(),
                actual: other.mean.len(),
            });
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let total = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * (nb / total);
            self.m2[i] += other.m2[i] + delta * delta * na * nb / total;
            self.min[i] = self.min[i].min(other.min[i]);
            self.max[i] = self.max[i].max(other.max[i]);
        }
        for (a, b) in self.hist.iter_mut().zip(&other.hist) {
            *a += b;
        }
        self.count += other.count;
        self.accepted += other.accepted;
        self.proposed += other.proposed;
        Ok(())
    }

    /// Post-burn-in acceptance rate.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn require_samples(&self, need: u64) -> Result<()> {
        if self.count < need {
            return Err(Error::InsufficientSamples {
                have: self.count,
                need,
            });
        }
        Ok(())
    }

    /// Conditional-mean estimate (running mean).
    pub fn cm_image(&self) -> Result<Image> {
        self.require_samples(2)?;
        Image::from_data(self.width, self.height, self.mean.clone())
    }

    /// Per-pixel sample variance.
    pub fn variance(&self) -> Result<Vec<f64>> {
        self.require_samples(2)?;
        let denom = (self.count - 1) as f64;
        Ok(self.m2.iter().map(|v| v / denom).collect())
    }

    /// Per-pixel quantile from the histogram, linearly interpolated inside
    /// the crossing bin and clamped to the observed range.
    pub fn quantile(&self, pixel: usize, p: f64) -> Result<f64> {
        self.require_samples(2)?;
        let target = p * self.count as f64;
        let hist = &self.hist[pixel * HIST_BINS..(pixel + 1) * HIST_BINS];
        let mut cum = 0u64;
        let bin_width = HIST_SPAN / HIST_BINS as f64;
        for (b, &c) in hist.iter().enumerate() {
            let next = cum + c as u64;
            if (next as f64) >= target && c > 0 {
                let frac = (target - cum as f64) / c as f64;
                let v = HIST_LO + (b as f64 + frac.clamp(0.0, 1.0)) * bin_width;
                return Ok(v.clamp(self.min[pixel], self.max[pixel]));
            }
            cum = next;
        }
        Ok(self.max[pixel])
    }

    /// Credible-interval width map: per pixel
    /// `q((1+level)/2) - q((1-level)/2)`.
    pub fn ci_map(&self, level: f64) -> Result<Image> {
        self.require_samples(2)?;
        if !(0.0..1.0).contains(&level) {
            return Err(Error::InvalidParameter {
                name: "level",
                reason: "interval level must lie in [0, 1)",
            });
        }
        let lo_p = (1.0 - level) / 2.0;
        let hi_p = (1.0 + level) / 2.0;
        let n = self.mean.len();
        let mut data = vec![0.0; n];
        for (i, value) in data.iter_mut().enumerate() {
            *value = self.quantile(i, hi_p)? - self.quantile(i, lo_p)?;
        }
        Image::from_data(self.width, self.height, data)
    }
}

/// pCN proposal `v = sqrt(1 - beta^2) u + beta w`, `w ~ N(0, C0)` drawn
/// from the caller's stream.
pub fn propose<R: Rng + ?Sized>(
    u: &[f64],
    beta: f64,
    prior_cov: &PriorCovariance,
    rng: &mut R,
) -> Vec<f64> {
    let w = prior_cov.sample_from(rng);
    let contraction = math::sqrt(1.0 - beta * beta);
    u.iter()
        .zip(&w)
        .map(|(&ui, &wi)| contraction * ui + beta * wi)
        .collect()
}

/// Acceptance probability `min(1, exp(potential(u) - potential(v)))`.
pub fn acceptance_probability(potential_u: f64, potential_v: f64) -> f64 {
    let a = math::exp(potential_u - potential_v);
    if a > 1.0 {
        1.0
    } else {
        a
    }
}

/// One diagnostics row, emitted every 500 steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub step: u64,
    /// Acceptance rate over the trailing 500-step window.
    pub window_acceptance: f64,
    pub potential: f64,
    pub beta: f64,
}

/// Chain-level diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub rows: Vec<DiagnosticsRow>,
    /// Step parameter after burn-in adaptation froze.
    pub final_beta: f64,
}

/// Runs the pCN chain for `n_burnin + n_samples` steps from `init`.
///
/// `potential` is the non-Gaussian part of the negative log posterior
/// (`Phi + lambda J` for the reconstruction problem; identically zero
/// leaves the prior invariant). Statistics accumulate post-burn-in only,
/// every `thin` steps. Deterministic for a fixed config.
pub fn run_chain<F>(
    potential: F,
    cfg: &PcnConfig,
    prior_cov: &PriorCovariance,
    init: &Image,
) -> Result<(ChainStats, ChainDiagnostics)>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    if init.len() != prior_cov.n_pixels() {
        return Err(Error::SizeMismatch {
            what: "chain init",
            expected: prior_cov.n_pixels(),
            actual: init.len(),
        });
    }
    if !init.all_finite() {
        return Err(Error::NonFinite { what: "chain init" });
    }
    let mut u = init.as_slice().to_vec();
    let mut pot_u = potential(&u);
    if !pot_u.is_finite() {
        return Err(Error::NonFinite {
            what: "potential at init",
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut beta = cfg.beta;
    let mut stats = ChainStats::new(init.width(), init.height());
    let mut diagnostics = ChainDiagnostics {
        rows: Vec::new(),
        final_beta: beta,
    };
    let total_steps = cfg.n_burnin + cfg.n_samples;
    let mut window_accepted = 0u64;

    for step in 0..total_steps {
        let in_burnin = step < cfg.n_burnin;
        let v = propose(&u, beta, prior_cov, &mut rng);
        let pot_v = potential(&v);
        if !pot_v.is_finite() {
            return Err(Error::NonFinite {
                what: "potential at proposal",
            });
        }
        let a = acceptance_probability(pot_u, pot_v);
        let theta: f64 = rng.random();
        let accepted = theta <= a;
        if accepted {
            u = v;
            pot_u = pot_v;
            window_accepted += 1;
        }
        if !in_burnin {
            stats.proposed += 1;
            if accepted {
                stats.accepted += 1;
            }
            let post_step = step - cfg.n_burnin;
            if post_step % cfg.thin == 0 {
                stats.push(&u)?;
            }
        }
        if (step + 1) % 500 == 0 {
            let window_rate = window_accepted as f64 / 500.0;
            diagnostics.rows.push(DiagnosticsRow {
                step: step + 1,
                window_acceptance: window_rate,
                potential: pot_u,
                beta,
            });
            if cfg.adapt_burnin && in_burnin {
                // Larger beta lowers acceptance; steer toward the target.
                if window_rate > cfg.target_acceptance {
                    beta = (beta * 1.1).min(1.0);
                } else {
                    beta /= 1.1;
                }
            }
            window_accepted = 0;
        }
    }
    diagnostics.final_beta = beta;
    Ok((stats, diagnostics))
}
