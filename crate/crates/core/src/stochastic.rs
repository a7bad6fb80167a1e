//! The stochastic component: uniformity regularization on the embedding
//! sphere, von Mises–Fisher sampling of dense interest, fake-target
//! redistribution, and the combined loss.
//!
//! Sampling operations take explicit [`Rng`] streams so callers can derive
//! independent substreams per (epoch, example) and stay reproducible under
//! any scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Rng, Tape, Var};

/// Lower probability clamp inside the soft cross-entropy.
pub const SOFT_CE_EPS: f64 = 1e-12;

/// Mean direction and concentration of a von Mises–Fisher distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct VmfParams {
    mu: Vec<f64>,
    kappa: f64,
}

impl VmfParams {
    pub fn new(mu: Vec<f64>, kappa: f64) -> Result<Self> {
        if mu.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "vMF needs dimension ≥ 2, got {}",
                mu.len()
            )));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "vMF concentration must be finite and ≥ 0, got {kappa}"
            )));
        }
        let norm: f64 = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "vMF mean direction must be unit, ‖μ‖ = {norm}"
            )));
        }
        Ok(VmfParams { mu, kappa })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// RBF sharpness, sampling budget and weight of the uniformity regularizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityConfig {
    pub tau: f64,
    pub pair_budget: usize,
    pub lambda: f64,
}

impl Default for UniformityConfig {
    fn default() -> Self {
        UniformityConfig {
            tau: 2.0,
            pair_budget: 4096,
            lambda: 0.5,
        }
    }
}

impl UniformityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if self.pair_budget == 0 {
            return Err(Error::Config("pair_budget must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Redistributed mass, similarity floor, fake count, and weighting
/// concentration for fake-target sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FakeTargetConfig {
    pub alpha: f64,
    pub beta: f64,
    pub p_count: usize,
    pub kappa: f64,
}

impl Default for FakeTargetConfig {
    fn default() -> Self {
        FakeTargetConfig {
            alpha: 0.1,
            beta: 0.0,
            p_count: 10,
            kappa: 250.0,
        }
    }
}

impl FakeTargetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be finite, got {}", self.beta)));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::Config(format!(
                "fake-target kappa must be finite and ≥ 0, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Sparse modified target distribution: the true target plus fake targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftTargets {
    true_target: usize,
    /// (item, probability), ascending by item; includes the true target.
    entries: Vec<(usize, f64)>,
}

impl SoftTargets {
    pub fn one_hot(true_target: usize) -> Self {
        SoftTargets {
            true_target,
            entries: vec![(true_target, 1.0)],
        }
    }

    pub fn new(true_target: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(j, _)| j);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate soft-target item".into()));
        }
        if !entries.iter().any(|&(j, _)| j == true_target) {
            return Err(Error::InvalidArgument(
                "soft targets must include the true target".into(),
            ));
        }
        if entries.iter().any(|&(_, w)| w.is_nan() || w < 0.0) {
            return Err(Error::InvalidArgument("negative soft-target weight".into()));
        }
        let sum: f64 = entries.iter().map(|&(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "soft-target weights sum to {sum}, expected 1"
            )));
        }
        Ok(SoftTargets { true_target, entries })
    }

    pub fn true_target(&self) -> usize {
        self.true_target
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn weight_of(&self, item: usize) -> f64 {
        self.entries
            .iter()
            .find(|&&(j, _)| j == item)
            .map_or(0.0, |&(_, w)| w)
    }
}

/// Gaussian potential exp(−τ‖x−y‖²) between two points.
pub fn rbf_potential(x: &[f64], y: &[f64], tau: f64) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-tau * sq).exp()
}

/// Differentiable log-mean Gaussian potential over the given index pairs.
fn pair_potential_loss(
    tape: &mut Tape,
    rows: Var,
    tau: f64,
    ja: &[usize],
    jb: &[usize],
) -> Result<Var> {
    let ga = tape.gather_rows(rows, ja)?;
    let gb = tape.gather_rows(rows, jb)?;
    let diff = tape.sub(ga, gb)?;
    let sq = tape.mul(diff, diff)?;
    let dist2 = tape.row_sums(sq)?;
    let scaled = tape.affine(dist2, -tau, 0.0)?;
    let pot = tape.exp(scaled)?;
    let mean = tape.mean(pot)?;
    tape.ln(mean)
}

fn require_pairable(tape: &Tape, rows: Var) -> Result<usize> {
    let n = tape.value(rows).rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "uniformity needs at least 2 embeddings, got {n}"
        )));
    }
    Ok(n)
}

/// Log mean potential over `pair_budget` uniformly drawn unordered distinct
/// pairs — the Monte Carlo estimator used during training.
pub fn uniformity_loss(
    tape: &mut Tape,
    rows: Var,
    tau: f64,
    pair_budget: usize,
    rng: &mut Rng,
) -> Result<Var> {
    let n = require_pairable(tape, rows)?;
    let mut ja = Vec::with_capacity(pair_budget);
    let mut jb = Vec::with_capacity(pair_budget);
    for _ in 0..pair_budget {
        let a = rng.next_below(n);
        let mut b = rng.next_below(n - 1);
        if b >= a {
            b += 1;
        }
        ja.push(a);
        jb.push(b);
    }
    pair_potential_loss(tape, rows, tau, &ja, &jb)
}

/// Exact all-pairs variant of [`uniformity_loss`]; O(n²), intended for tests
/// and small embedding sets.
pub fn uniformity_loss_exact(tape: &mut Tape, rows: Var, tau: f64) -> Result<Var> {
    let n = require_pairable(tape, rows)?;
    let mut ja = Vec::with_capacity(n * (n - 1) / 2);
    let mut jb = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            ja.push(a);
            jb.push(b);
        }
    }
    pair_potential_loss(tape, rows, tau, &ja, &jb)
}

/// One draw from vMF(μ, κ) by Wood's rejection scheme: sample the cosine
/// toward μ against a transformed-Beta envelope, then a uniform tangent on
/// the subsphere orthogonal to μ.
pub fn vmf_sample(params: &VmfParams, rng: &mut Rng) -> Vec<f64> {
    let mu = &params.mu;
    let kappa = params.kappa;
    let d = mu.len() as f64;
    let b = (-2.0 * kappa + (4.0 * kappa * kappa + (d - 1.0) * (d - 1.0)).sqrt()) / (d - 1.0);
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + (d - 1.0) * (1.0 - x0 * x0).ln();

    let w = loop {
        let z = rng.next_beta((d - 1.0) / 2.0, (d - 1.0) / 2.0);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u = rng.next_f64().max(f64::MIN_POSITIVE); // ln(0) guard
        if kappa * w + (d - 1.0) * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };

    // Uniform tangent: project a Gaussian draw off μ and normalize.
    let tangent = loop {
        let raw: Vec<f64> = mu.iter().map(|_| rng.next_standard_normal()).collect();
        let along: f64 = raw.iter().zip(mu).map(|(r, m)| r * m).sum();
        let mut t: Vec<f64> = raw.iter().zip(mu).map(|(r, m)| r - along * m).collect();
        let norm: f64 = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for x in &mut t {
                *x /= norm;
            }
            break t;
        }
    };

    let sine = (1.0 - w * w).max(0.0).sqrt();
    let mut out: Vec<f64> = mu
        .iter()
        .zip(&tangent)
        .map(|(m, t)| w * m + sine * t)
        .collect();
    let norm: f64 = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut out {
        *x /= norm;
    }
    out
}

/// Replace each prefix embedding by an independent vMF draw centered on it.
/// κ = ∞ is the disable switch: the input is returned unchanged.
pub fn densify_prefix(
    prefix_embeddings: &[Vec<f64>],
    kappa: f64,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    if kappa.is_infinite() && kappa > 0.0 {
        return Ok(prefix_embeddings.to_vec());
    }
    prefix_embeddings
        .iter()
        .map(|row| {
            let params = VmfParams::new(row.clone(), kappa)?;
            Ok(vmf_sample(&params, rng))
        })
        .collect()
}

/// Draw fake targets near the true one and redistribute `alpha` of the
/// target mass onto them, vMF-weighted. Candidates are items (other than the
/// true target) whose cosine to it is at least `beta`; sampling is without
/// replacement, probability ∝ exp(κ·cosine).
pub fn sample_fake_targets(
    true_target: usize,
    table: &crate::numeric::Tensor,
    cfg: &FakeTargetConfig,
    rng: &mut Rng,
) -> Result<SoftTargets> {
    cfg.validate()?;
    let n = table.rows();
    if true_target >= n {
        return Err(Error::InvalidArgument(format!(
            "true target {true_target} out of {n} items"
        )));
    }
    let e_t = table.row(true_target);
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        if j == true_target {
            continue;
        }
        let cos: f64 = table.row(j).iter().zip(e_t).map(|(a, b)| a * b).sum();
        if cos >= cfg.beta {
            candidates.push((j, cos));
        }
    }
    if candidates.is_empty() || cfg.p_count == 0 || cfg.alpha == 0.0 {
        // No-candidate rule (and the disabled settings collapse to it).
        return Ok(SoftTargets::one_hot(true_target));
    }

    // Without-replacement draw by sequential renormalization, with the
    // exponent max-stabilized so κ ≈ 250 cannot overflow.
    let take = cfg.p_count.min(candidates.len());
    let max_cos = candidates
        .iter()
        .map(|&(_, c)| c)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut pool: Vec<(usize, f64, f64)> = candidates
        .iter()
        .map(|&(j, c)| (j, c, (cfg.kappa * (c - max_cos)).exp()))
        .collect();
    let mut chosen: Vec<(usize, f64)> = Vec::with_capacity(take);
    for _ in 0..take {
        let total: f64 = pool.iter().map(|&(_, _, w)| w).sum();
        let mut ticket = rng.next_f64() * total;
        let mut pick = pool.len() - 1;
        for (i, &(_, _, w)) in pool.iter().enumerate() {
            if ticket < w {
                pick = i;
                break;
            }
            ticket -= w;
        }
        let (j, cos, _) = pool.swap_remove(pick);
        chosen.push((j, cos));
    }

    // Eq-style weights over the sampled set, same stabilization.
    let m = chosen
        .iter()
        .map(|&(_, c)| c)
        .fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = chosen.iter().map(|&(_, c)| (cfg.kappa * (c - m)).exp()).sum();
    let mut entries: Vec<(usize, f64)> = chosen
        .iter()
        .map(|&(j, c)| (j, cfg.alpha * (cfg.kappa * (c - m)).exp() / denom))
        .collect();
    let fake_mass: f64 = entries.iter().map(|&(_, w)| w).sum();
    entries.push((true_target, 1.0 - fake_mass));
    SoftTargets::new(true_target, entries)
}

/// −Σ y*_j log ŷ_j over the sparse targets, probabilities floored at 1e-12.
pub fn soft_ce_loss(tape: &mut Tape, probs: Var, targets: &SoftTargets) -> Result<Var> {
    let idx: Vec<usize> = targets.entries().iter().map(|&(j, _)| j).collect();
    let picked = tape.gather_cols(probs, &idx)?;
    let floored = tape.clamp(picked, SOFT_CE_EPS, 1.0)?;
    let logs = tape.ln(floored)?;
    let weights = tape.constant(crate::numeric::Tensor::from_vec(
        &[1, idx.len()],
        targets.entries().iter().map(|&(_, w)| w).collect(),
    )?)?;
    let weighted = tape.mul(logs, weights)?;
    let total = tape.sum(weighted)?;
    tape.affine(total, -1.0, 0.0)
}

/// ℒ = ℒ_rec + λ·ℒ_unif.
pub fn total_loss(tape: &mut Tape, rec_loss: Var, unif_loss: Var, lambda: f64) -> Result<Var> {
    let scaled = tape.affine(unif_loss, lambda, 0.0)?;
    tape.add(rec_loss, scaled)
}
