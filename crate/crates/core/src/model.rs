//! The finite-`N` inference model: priors, disorder, the Hamiltonian, exact Gibbs
//! posteriors by enumeration, and quenched averages of posterior observables.
//!
//! The observation `Y` enters the Hamiltonian only through its projection on the
//! span of the planted tensors `x^{(x)p} A` over all configurations. [`ConfigSpace`]
//! fixes an orthonormal basis of that span once, and the Gibbs engine works with
//! the projected coordinates. The orthogonal part of `W` never influences the
//! posterior and is integrated out exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::InteractionSpec;
use crate::quadrature::{grid_size, pairwise_sum_vectors, GaussHermite, TensorGrid};
use crate::symcone::{dsqrt, sqrt_psd, ConePoint, SymMatrix};

/// Largest number of configurations `|support|^N` that may be enumerated.
pub const MAX_CONFIGS: usize = 1 << 20;

/// Largest number of stored per-configuration floats.
const MAX_TABLE: usize = 1 << 25;

/// Smallest Monte Carlo budget accepted by [`quenched`].
pub const MIN_MC_BUDGET: usize = 100;

const CHUNK: usize = 512;

/// Distribution of one signal row: a finite support in `[-1, 1]^D` with weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorConfig", into = "PriorConfig")]
pub struct PriorSpec {
    d: usize,
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// Serialized form of [`PriorSpec`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorConfig {
    pub support: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl TryFrom<PriorConfig> for PriorSpec {
    type Error = Error;

    fn try_from(cfg: PriorConfig) -> Result<Self> {
        PriorSpec::new(cfg.support, cfg.weights)
    }
}

impl From<PriorSpec> for PriorConfig {
    fn from(p: PriorSpec) -> Self {
        PriorConfig {
            support: p.support,
            weights: p.weights,
        }
    }
}

impl PriorSpec {
    pub fn new(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != weights.len() {
            return Err(Error::Invalid(format!(
                "prior needs one weight per support point ({} points, {} weights)",
                support.len(),
                weights.len()
            )));
        }
        let d = support[0].len();
        if d == 0 || d > crate::symcone::MAX_DIM {
            return Err(Error::Capacity(format!("signal dimension D = {d} unsupported")));
        }
        for (i, s) in support.iter().enumerate() {
            if s.len() != d {
                return Err(Error::Dimension(format!(
                    "support point {i} has {} coordinates, expected {d}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::Invalid(format!(
                    "support point {i} = {s:?} leaves [-1, 1]^D"
                )));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Invalid(format!("prior weights must be nonnegative: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("prior weights sum to {total}, not 1")));
        }
        Ok(PriorSpec {
            d,
            support,
            weights,
        })
    }

    /// Uniform on `{-1, +1}`.
    pub fn rademacher() -> Self {
        Self::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).expect("valid literal")
    }

    /// Independent Rademacher coordinates in dimension `d`.
    pub fn product_rademacher(d: usize) -> Result<Self> {
        if d == 0 || d > 8 {
            return Err(Error::Capacity(format!("product prior of dimension {d}")));
        }
        let count = 1usize << d;
        let support = (0..count)
            .map(|k| {
                (0..d)
                    .map(|j| if (k >> (d - 1 - j)) & 1 == 1 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        Self::new(support, vec![1.0 / count as f64; count])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.d)
            .map(|j| self.support.iter().zip(&self.weights).map(|(s, w)| w * s[j]).sum())
            .collect()
    }

    /// `E[X_1^T X_1]`.
    pub fn second_moment(&self) -> SymMatrix {
        SymMatrix::from_fn(self.d, |a, b| {
            self.support
                .iter()
                .zip(&self.weights)
                .map(|(s, w)| w * s[a] * s[b])
                .sum()
        })
    }
}

/// A prior, an interaction and a system size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub prior: PriorSpec,
    pub interaction: InteractionSpec,
    #[serde(rename = "N")]
    pub n: usize,
}

impl ModelSpec {
    pub fn new(prior: PriorSpec, interaction: InteractionSpec, n: usize) -> Result<Self> {
        if prior.d() != interaction.d() {
            return Err(Error::Dimension(format!(
                "prior has D = {} but the interaction has D = {}",
                prior.d(),
                interaction.d()
            )));
        }
        if n == 0 {
            return Err(Error::Invalid("N must be at least 1".into()));
        }
        Ok(ModelSpec {
            prior,
            interaction,
            n,
        })
    }

    /// `D = 1, p = 2, A = [1]` with a Rademacher prior.
    pub fn reference(n: usize) -> Self {
        Self::new(PriorSpec::rademacher(), InteractionSpec::scalar_quadratic(), n)
            .expect("valid literal")
    }

    /// `D = 2, p = 2, A = vec(I_2)` with a product-Rademacher prior.
    pub fn matrix_reference(n: usize) -> Self {
        Self::new(
            PriorSpec::product_rademacher(2).expect("valid literal"),
            InteractionSpec::identity_flattened(2).expect("valid literal"),
            n,
        )
        .expect("valid literal")
    }

    pub fn d(&self) -> usize {
        self.prior.d()
    }

    /// `N^p * L`, the number of entries of `Y`.
    pub fn tensor_len(&self) -> Result<usize> {
        self.n
            .checked_pow(self.interaction.p() as u32)
            .and_then(|v| v.checked_mul(self.interaction.l_cols()))
            .ok_or_else(|| Error::Capacity("N^p L overflows".into()))
    }

    /// `sqrt(2t / N^(p-1))`.
    pub fn signal_scale(&self, t: f64) -> f64 {
        (2.0 * t / (self.n as f64).powi(self.interaction.p() as i32 - 1)).sqrt()
    }
}

/// `x^{(x)p} A` for an `N x D` configuration, as a row-major `N^p x L` array.
pub fn planted_tensor(spec: &ModelSpec, x: &[f64]) -> Result<Vec<f64>> {
    let n = spec.n;
    let d = spec.d();
    if x.len() != n * d {
        return Err(Error::Dimension(format!(
            "configuration has {} entries, expected N*D = {}",
            x.len(),
            n * d
        )));
    }
    let p = spec.interaction.p();
    let l = spec.interaction.l_cols();
    let rows = spec.tensor_len()? / l;
    let cols = spec.interaction.tensor_rows();
    let mut out = vec![0.0; rows * l];
    let mut ri = [0usize; crate::nonlinearity::MAX_ORDER];
    let mut ci = [0usize; crate::nonlinearity::MAX_ORDER];
    for r in 0..rows {
        let mut k = r;
        for slot in ri[..p].iter_mut().rev() {
            *slot = k % n;
            k /= n;
        }
        for c in 0..cols {
            let mut k = c;
            for slot in ci[..p].iter_mut().rev() {
                *slot = k % d;
                k /= d;
            }
            let prod: f64 = (0..p).map(|s| x[ri[s] * d + ci[s]]).product();
            if prod == 0.0 {
                continue;
            }
            for col in 0..l {
                out[r * l + col] += prod * spec.interaction.a(c, col);
            }
        }
    }
    Ok(out)
}

/// One draw of the quenched randomness `(X, W, Z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderSample {
    /// Signal, row-major `N x D`.
    pub x: Vec<f64>,
    /// Index of `x` in the enumeration of [`ConfigSpace`].
    pub truth: usize,
    /// Row-major `N^p x L`.
    pub w: Vec<f64>,
    /// Row-major `N x D`.
    pub z: Vec<f64>,
}

impl DisorderSample {
    /// Rows of `X` i.i.d. from the prior, `W` and `Z` standard Gaussian.
    pub fn draw<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        let s = spec.prior.support().len();
        let d = spec.d();
        let mut x = Vec::with_capacity(spec.n * d);
        let mut truth = 0usize;
        for _ in 0..spec.n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = s - 1;
            for (i, w) in spec.prior.weights().iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            truth = truth * s + pick;
            x.extend_from_slice(&spec.prior.support()[pick]);
        }
        let w = (0..spec.tensor_len()?).map(|_| rng.sample(StandardNormal)).collect();
        let z = (0..spec.n * d).map(|_| rng.sample(StandardNormal)).collect();
        Ok(DisorderSample { x, truth, w, z })
    }
}

/// Straight-line evaluation of the Hamiltonian from its definition, assembling
/// `Y` and `Ybar` explicitly. The Gibbs engine uses an equivalent reduced form.
pub fn hamiltonian(
    spec: &ModelSpec,
    t: f64,
    h: &ConePoint,
    x: &[f64],
    disorder: &DisorderSample,
) -> Result<f64> {
    check_time(t)?;
    let d = spec.d();
    let n = spec.n;
    if h.dim() != d {
        return Err(Error::Dimension(format!("h is {}x{}, D = {d}", h.dim(), h.dim())));
    }
    let len = spec.tensor_len()?;
    if disorder.w.len() != len || disorder.z.len() != n * d || disorder.x.len() != n * d {
        return Err(Error::Dimension("disorder sample does not match the model".into()));
    }
    let c = spec.signal_scale(t);
    let xt = planted_tensor(spec, x)?;
    let big_xt = planted_tensor(spec, &disorder.x)?;
    let y: Vec<f64> = big_xt.iter().zip(&disorder.w).map(|(a, w)| c * a + w).collect();
    let root = *sqrt_psd(&ConePoint::new(*h.matrix() * 2.0)?)?.matrix();
    // Ybar = X sqrt(2h) + Z
    let mut ybar = vec![0.0; n * d];
    for i in 0..n {
        for b in 0..d {
            ybar[i * d + b] = (0..d).map(|a| disorder.x[i * d + a] * root.get(a, b)).sum::<f64>()
                + disorder.z[i * d + b];
        }
    }
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut total = c * dot(&xt, &y) - 0.5 * c * c * dot(&xt, &xt);
    for a in 0..d {
        for b in 0..d {
            let xty: f64 = (0..n).map(|i| x[i * d + a] * ybar[i * d + b]).sum();
            let xtx: f64 = (0..n).map(|i| x[i * d + a] * x[i * d + b]).sum();
            total += root.get(a, b) * xty - h.matrix().get(a, b) * xtx;
        }
    }
    Ok(total)
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t must be a finite nonnegative number, got {t}")));
    }
    Ok(())
}

/// All configurations `support^N` with their sufficient statistics.
///
/// Configuration `k` has row `i` equal to support point `(k / s^(N-1-i)) % s`.
#[derive(Clone, Debug)]
pub struct ConfigSpace {
    spec: ModelSpec,
    count: usize,
    nd: usize,
    rank: usize,
    x: Vec<f64>,
    xtx: Vec<f64>,
    proj: Vec<f64>,
    tensor_sq: Vec<f64>,
    log_prior: Vec<f64>,
    /// Orthonormal basis of the planted-tensor span, `rank x N^p L`.
    basis: Vec<f64>,
}

impl ConfigSpace {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let s = spec.prior.support().len();
        let n = spec.n;
        let d = spec.d();
        let count = (s as u128).pow(n as u32);
        if count > MAX_CONFIGS as u128 {
            return Err(Error::Capacity(format!(
                "{s}^{n} configurations exceed the enumeration limit of {MAX_CONFIGS}; \
                 use a smaller N (Monte Carlo over the configuration space is not supported)"
            )));
        }
        let count = count as usize;
        let nd = n * d;
        let len = spec.tensor_len()?;
        if count.saturating_mul(nd + d * d + len.min(count) + 2) > MAX_TABLE {
            return Err(Error::Capacity(format!(
                "configuration tables for N = {n} exceed {MAX_TABLE} entries"
            )));
        }

        let mut x = vec![0.0; count * nd];
        let mut log_prior = vec![0.0; count];
        for k in 0..count {
            let mut rest = k;
            let mut lp = 0.0;
            for i in (0..n).rev() {
                let digit = rest % s;
                rest /= s;
                x[k * nd + i * d..k * nd + (i + 1) * d]
                    .copy_from_slice(&spec.prior.support()[digit]);
                lp += spec.prior.weights()[digit].ln();
            }
            log_prior[k] = lp;
        }
        let mut xtx = vec![0.0; count * d * d];
        for k in 0..count {
            let row = &x[k * nd..(k + 1) * nd];
            for a in 0..d {
                for b in 0..d {
                    xtx[k * d * d + a * d + b] = (0..n).map(|i| row[i * d + a] * row[i * d + b]).sum();
                }
            }
        }

        let tensors: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .map(|k| planted_tensor(spec, &x[k * nd..(k + 1) * nd]))
            .collect::<Result<_>>()?;
        let tensor_sq: Vec<f64> = tensors.iter().map(|v| v.iter().map(|a| a * a).sum()).collect();
        let basis = orthonormal_span(&tensors, len);
        let rank = basis.len() / len.max(1);
        let proj: Vec<f64> = tensors
            .par_iter()
            .flat_map_iter(|v| {
                (0..rank)
                    .map(|r| basis[r * len..(r + 1) * len].iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                    .collect::<Vec<_>>()
            })
            .collect();

        Ok(ConfigSpace {
            spec: spec.clone(),
            count,
            nd,
            rank,
            x,
            xtx,
            proj,
            tensor_sq,
            log_prior,
            basis,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Number of configurations.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Dimension of the span of the planted tensors.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Configuration `k`, row-major `N x D`.
    pub fn config(&self, k: usize) -> &[f64] {
        &self.x[k * self.nd..(k + 1) * self.nd]
    }

    /// Log prior probability of configuration `k`.
    pub fn log_prior(&self, k: usize) -> f64 {
        self.log_prior[k]
    }

    /// `|x^{(x)p} A|^2` for configuration `k`.
    pub fn tensor_sq(&self, k: usize) -> f64 {
        self.tensor_sq[k]
    }

    /// Coordinates of configuration `k`'s planted tensor in the span basis.
    pub fn projection(&self, k: usize) -> &[f64] {
        &self.proj[k * self.rank..(k + 1) * self.rank]
    }

    /// Projects a full `N^p x L` array onto the span basis.
    pub fn project(&self, full: &[f64]) -> Vec<f64> {
        let len = full.len();
        (0..self.rank)
            .map(|r| self.basis[r * len..(r + 1) * len].iter().zip(full).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn xtx(&self, k: usize) -> &[f64] {
        let dd = self.spec.d() * self.spec.d();
        &self.xtx[k * dd..(k + 1) * dd]
    }
}

/// Modified Gram-Schmidt (two passes) over the vectors; returns `rank x len` rows.
fn orthonormal_span(vectors: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        if basis.len() == len {
            break;
        }
        let scale = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if scale == 0.0 {
            continue;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = b.iter().zip(&r).map(|(a, x)| a * x).sum();
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= c * bi;
                }
            }
        }
        let norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-9 * scale.max(1.0) {
            for ri in r.iter_mut() {
                *ri /= norm;
            }
            basis.push(r);
        }
    }
    basis.into_iter().flatten().collect()
}

/// Reduced observation: `Y` projected on the span basis, and `Ybar`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub y: Vec<f64>,
    pub ybar: Vec<f64>,
}

/// Gibbs measure at fixed `(t, h)`, with the `h`-dependent matrices precomputed.
#[derive(Clone, Debug)]
pub struct GibbsContext<'a> {
    space: &'a ConfigSpace,
    t: f64,
    h: ConePoint,
    root2h: SymMatrix,
    c: f64,
}

impl<'a> GibbsContext<'a> {
    pub fn new(space: &'a ConfigSpace, t: f64, h: &ConePoint) -> Result<Self> {
        check_time(t)?;
        let d = space.spec.d();
        if h.dim() != d {
            return Err(Error::Dimension(format!("h is {}x{}, D = {d}", h.dim(), h.dim())));
        }
        let root2h = *sqrt_psd(&ConePoint::new(*h.matrix() * 2.0)?)?.matrix();
        Ok(GibbsContext {
            space,
            t,
            h: h.clone(),
            root2h,
            c: space.spec.signal_scale(t),
        })
    }

    pub fn space(&self) -> &'a ConfigSpace {
        self.space
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn h(&self) -> &ConePoint {
        &self.h
    }

    /// `sqrt(2h)`.
    pub fn root2h(&self) -> &SymMatrix {
        &self.root2h
    }

    /// `Ybar = X sqrt(2h) + Z` for a signal `x` and noise `z`, both `N x D`.
    pub fn channel(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let d = self.space.spec.d();
        let mut out = z.to_vec();
        for (row_out, row_x) in out.chunks_mut(d).zip(x.chunks(d)) {
            for b in 0..d {
                row_out[b] += (0..d).map(|a| row_x[a] * self.root2h.get(a, b)).sum::<f64>();
            }
        }
        out
    }

    /// Reduced observation generated by a disorder sample.
    pub fn observe(&self, disorder: &DisorderSample) -> Observation {
        let mut y = self.space.project(&disorder.w);
        for (yi, pi) in y.iter_mut().zip(self.space.projection(disorder.truth)) {
            *yi += self.c * pi;
        }
        Observation {
            y,
            ybar: self.channel(&disorder.x, &disorder.z),
        }
    }

    /// `log P(x_k) + H_N(t, h, x_k)` for every configuration.
    pub fn log_weights(&self, obs: &Observation, out: &mut [f64]) {
        let space = self.space;
        let d = space.spec.d();
        let nd = space.nd;
        // Field v_i = sqrt(2h) Ybar_i, so that sqrt(2h) . (x^T Ybar) = sum_i x_i . v_i.
        let field = {
            let mut v = vec![0.0; nd];
            for (vr, yr) in v.chunks_mut(d).zip(obs.ybar.chunks(d)) {
                for a in 0..d {
                    vr[a] = (0..d).map(|b| self.root2h.get(a, b) * yr[b]).sum();
                }
            }
            v
        };
        let hm = self.h.matrix().as_slice();
        let half_c2 = 0.5 * self.c * self.c;
        for (k, o) in out.iter_mut().enumerate() {
            let mut e = space.log_prior[k];
            if self.c != 0.0 {
                let pr: f64 = space.projection(k).iter().zip(&obs.y).map(|(a, b)| a * b).sum();
                e += self.c * pr - half_c2 * space.tensor_sq[k];
            }
            let xk = space.config(k);
            e += xk.iter().zip(&field).map(|(a, b)| a * b).sum::<f64>();
            e -= space.xtx(k).iter().zip(hm).map(|(a, b)| a * b).sum::<f64>();
            *o = e;
        }
    }

    /// Exact posterior statistics for one observation.
    pub fn summarize(&self, obs: &Observation) -> GibbsSummary {
        let space = self.space;
        let count = space.count;
        let nd = space.nd;
        let d = space.spec.d();
        let r = space.rank;
        let mut weights = vec![0.0; count];
        self.log_weights(obs, &mut weights);
        let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for w in weights.iter_mut() {
            *w = (*w - max).exp();
            sum += *w;
        }
        let log_partition = max + sum.ln();
        let inv = 1.0 / sum;
        let mut mean_x = vec![0.0; nd];
        let mut mean_proj = vec![0.0; r];
        let mut second = vec![0.0; nd * nd];
        let mut mean_xtx = vec![0.0; d * d];
        let mut mean_tensor_sq = 0.0;
        for (k, w) in weights.iter_mut().enumerate() {
            *w *= inv;
            let p = *w;
            if p == 0.0 {
                continue;
            }
            let xk = space.config(k);
            for (m, v) in mean_x.iter_mut().zip(xk) {
                *m += p * v;
            }
            for (m, v) in mean_proj.iter_mut().zip(space.projection(k)) {
                *m += p * v;
            }
            for i in 0..nd {
                let pi = p * xk[i];
                if pi == 0.0 {
                    continue;
                }
                for j in i..nd {
                    second[i * nd + j] += pi * xk[j];
                }
            }
            for (m, v) in mean_xtx.iter_mut().zip(space.xtx(k)) {
                *m += p * v;
            }
            mean_tensor_sq += p * space.tensor_sq[k];
        }
        for i in 0..nd {
            for j in 0..i {
                second[i * nd + j] = second[j * nd + i];
            }
        }
        GibbsSummary {
            n: space.spec.n,
            d,
            log_partition,
            f_n: log_partition / space.spec.n as f64,
            weights,
            mean_x,
            mean_proj,
            second,
            mean_xtx: SymMatrix::symmetrize(d, &mean_xtx).expect("dimension checked"),
            mean_tensor_sq,
        }
    }
}

/// Exact posterior statistics for one disorder draw.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsSummary {
    n: usize,
    d: usize,
    /// `log sum_x P(x) exp(H_N(x))`.
    pub log_partition: f64,
    /// `F_N = log_partition / N`.
    pub f_n: f64,
    /// Posterior probability of each configuration.
    pub weights: Vec<f64>,
    /// `<x>`, row-major `N x D`.
    pub mean_x: Vec<f64>,
    /// `<x^{(x)p} A>` in the span basis of [`ConfigSpace`].
    pub mean_proj: Vec<f64>,
    /// `<x_{ia} x_{jb}>`, an `ND x ND` array indexed by `i*D + a`.
    pub second: Vec<f64>,
    /// `<x^T x>`.
    pub mean_xtx: SymMatrix,
    /// `<|x^{(x)p} A|^2>`.
    pub mean_tensor_sq: f64,
}

/// The quantities a quenched estimator may depend on besides the posterior.
#[derive(Clone, Copy, Debug)]
pub struct Truth<'a> {
    /// Configuration index of the signal.
    pub index: usize,
    /// Signal `X`, row-major `N x D`.
    pub x: &'a [f64],
    /// Channel noise `Z`, row-major `N x D`.
    pub z: &'a [f64],
}

/// Entries of `N^p` and `|x^{(x)p}A|` rescaled to the overlap normalisation.
fn outer_mean(n: usize, d: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    // (1/N) a^T b for N x D arrays, as a full row-major D x D array.
    let mut out = vec![0.0; d * d];
    for i in 0..n {
        for p in 0..d {
            for q in 0..d {
                out[p * d + q] += a[i * d + p] * b[i * d + q];
            }
        }
    }
    let s = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= s);
    out
}

/// Second-order Nishimori pairs, each `(left, right)` equal in expectation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NishimoriTerms {
    /// `<Q>` and `<R>`, full row-major `D x D`.
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    /// `<|Q|^2>` and `<|R|^2>`.
    pub q_sq: f64,
    pub r_sq: f64,
    /// `<Q(x,X) . R(x,x')>` and `<R(x,x'') . R(x,x')>`.
    pub q_dot_r: f64,
    pub r_dot_r: f64,
    /// `<Q(x,X) . Q(x',X)>` and `<R(x,x'') . R(x',x'')>`.
    pub q_dot_q: f64,
    pub rr_shared: f64,
}

impl NishimoriTerms {
    /// Flattened as `[q, r, q_sq, r_sq, q_dot_r, r_dot_r, q_dot_q, rr_shared]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        v.extend_from_slice(&self.r);
        v.extend_from_slice(&[
            self.q_sq,
            self.r_sq,
            self.q_dot_r,
            self.r_dot_r,
            self.q_dot_q,
            self.rr_shared,
        ]);
        v
    }
}

impl GibbsSummary {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `<Q> = X^T <x> / N`, full row-major `D x D`.
    pub fn overlap_mean(&self, truth: &Truth) -> Vec<f64> {
        outer_mean(self.n, self.d, truth.x, &self.mean_x)
    }

    /// `<R> = <x>^T <x> / N`.
    pub fn replica_overlap_mean(&self) -> SymMatrix {
        let full = outer_mean(self.n, self.d, &self.mean_x, &self.mean_x);
        SymMatrix::symmetrize(self.d, &full).expect("dimension checked")
    }

    /// `<|Q - center|>` with `center` a full row-major `D x D` array.
    pub fn overlap_abs_dev(&self, space: &ConfigSpace, truth: &Truth, center: &[f64]) -> f64 {
        let mut total = 0.0;
        for (k, &p) in self.weights.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let q = outer_mean(self.n, self.d, truth.x, space.config(k));
            let dev: f64 = q.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            total += p * dev.sqrt();
        }
        total
    }

    /// `<|x^{(x)p}A|^2>`-free squared norm `|<x^{(x)p}A>|^2`.
    pub fn tensor_mean_sq(&self) -> f64 {
        self.mean_proj.iter().map(|v| v * v).sum()
    }

    fn gram_of_second(&self) -> Vec<f64> {
        let (n, d, nd) = (self.n, self.d, self.n * self.d);
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = (0..d).map(|a| self.second[(i * d + a) * nd + j * d + a]).sum();
            }
        }
        g
    }

    pub fn nishimori_terms(&self, truth: &Truth) -> NishimoriTerms {
        let (n, d, nd) = (self.n, self.d, self.n * self.d);
        let m = &self.mean_x;
        let x = truth.x;
        let g = self.gram_of_second();
        let row_dot = |u: &[f64], v: &[f64], i: usize, j: usize| -> f64 {
            (0..d).map(|a| u[i * d + a] * v[j * d + a]).sum()
        };
        let inv2 = 1.0 / (n * n) as f64;
        let mut q_sq = 0.0;
        let mut r_sq = 0.0;
        let mut q_dot_q = 0.0;
        let mut rr_shared = 0.0;
        for i in 0..n {
            for j in 0..n {
                let gij = g[i * n + j];
                let xx = row_dot(x, x, i, j);
                let mm = row_dot(m, m, i, j);
                q_sq += xx * gij;
                r_sq += gij * gij;
                q_dot_q += xx * mm;
                rr_shared += gij * mm;
            }
        }
        let mut q_dot_r = 0.0;
        let mut r_dot_r = 0.0;
        for i in 0..n {
            for j in 0..n {
                for a in 0..d {
                    for b in 0..d {
                        let c = self.second[(i * d + b) * nd + j * d + a] * m[j * d + b];
                        q_dot_r += x[i * d + a] * c;
                        r_dot_r += m[i * d + a] * c;
                    }
                }
            }
        }
        NishimoriTerms {
            q: self.overlap_mean(truth),
            r: outer_mean(n, d, m, m),
            q_sq: q_sq * inv2,
            r_sq: r_sq * inv2,
            q_dot_r: q_dot_r * inv2,
            r_dot_r: r_dot_r * inv2,
            q_dot_q: q_dot_q * inv2,
            rr_shared: rr_shared * inv2,
        }
    }

    /// `<L>`, which equals the gradient in `h` of `F_N` at fixed disorder.
    pub fn l_mean(&self, h: &ConePoint, truth: &Truth) -> Result<SymMatrix> {
        l_of(h, self.n, self.d, &self.mean_x, truth.x, truth.z, &self.mean_xtx)
    }

    /// `<|L - center|^2>`.
    pub fn l_sq_dev(
        &self,
        space: &ConfigSpace,
        h: &ConePoint,
        truth: &Truth,
        center: &SymMatrix,
    ) -> Result<f64> {
        let d = self.d;
        let mut total = 0.0;
        for (k, &p) in self.weights.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let xtx = SymMatrix::symmetrize(d, space.xtx(k))?;
            let l = l_of(h, self.n, d, space.config(k), truth.x, truth.z, &xtx)?;
            let diff = l - *center;
            total += p * diff.dot(&diff);
        }
        Ok(total)
    }
}

/// `(1/N)(sqrt2 D_sqrt(h)[sym(x^T Z)] + 2 sym(x^T X) - x^T x)`, using that the
/// derivative of the square root is self-adjoint; `x` may be a posterior mean.
fn l_of(
    h: &ConePoint,
    n: usize,
    d: usize,
    x: &[f64],
    truth_x: &[f64],
    z: &[f64],
    xtx: &SymMatrix,
) -> Result<SymMatrix> {
    let xz = SymMatrix::symmetrize(d, &outer_mean(n, d, x, z))?;
    let xx = SymMatrix::symmetrize(d, &outer_mean(n, d, x, truth_x))?;
    let inv = 1.0 / n as f64;
    Ok(dsqrt(h, &xz)? * std::f64::consts::SQRT_2 + xx * 2.0 - *xtx * inv)
}

/// `L` for a single configuration `x` and disorder draw.
///
/// `L` is the gradient in `h` of `H_N / N`; it does not depend on `t`.
pub fn l_observable(
    spec: &ModelSpec,
    h: &ConePoint,
    disorder: &DisorderSample,
    x: &[f64],
) -> Result<SymMatrix> {
    let d = spec.d();
    let n = spec.n;
    if x.len() != n * d || h.dim() != d {
        return Err(Error::Dimension("configuration or h does not match the model".into()));
    }
    let full = outer_mean(n, d, x, x);
    let xtx = SymMatrix::symmetrize(d, &full)? * n as f64;
    l_of(h, n, d, x, &disorder.x, &disorder.z, &xtx)
}

/// Exact Gibbs summary for one disorder draw.
pub fn gibbs_exact(
    space: &ConfigSpace,
    t: f64,
    h: &ConePoint,
    disorder: &DisorderSample,
) -> Result<GibbsSummary> {
    let ctx = GibbsContext::new(space, t, h)?;
    Ok(ctx.summarize(&ctx.observe(disorder)))
}

/// How the disorder average is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureScheme {
    /// Gauss-Hermite over the noise `(W, Z)` with the signal summed exactly.
    Noise,
    /// Gauss-Hermite over the observations `(Y, Ybar)` weighted by the
    /// marginal likelihood; the signal is summed against its posterior.
    Observation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Quadrature {
        nodes: usize,
        scheme: QuadratureScheme,
        /// Also evaluate on a grid with twice the nodes and report the change.
        refine: bool,
    },
    MonteCarlo {
        budget: usize,
        seed: u64,
    },
}

impl Averaging {
    pub fn quadrature(nodes: usize, scheme: QuadratureScheme) -> Self {
        Averaging::Quadrature {
            nodes,
            scheme,
            refine: false,
        }
    }

    pub fn monte_carlo(budget: usize, seed: u64) -> Self {
        Averaging::MonteCarlo { budget, seed }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Quadrature,
    MonteCarlo,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Quadrature => "quadrature",
            Method::MonteCarlo => "monte_carlo",
        }
    }
}

/// A disorder average of a vector-valued estimator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuenchedEstimate {
    pub value: Vec<f64>,
    /// Jackknife standard error; zero in quadrature mode.
    pub std_error: Vec<f64>,
    /// Quadrature points or Monte Carlo replicas.
    pub n_replicas: usize,
    pub method: Method,
    /// `|value(2n nodes) - value(n nodes)|` when refinement was requested and fits.
    pub refinement_delta: Option<Vec<f64>>,
}

impl QuenchedEstimate {
    pub fn scalar(&self) -> f64 {
        self.value[0]
    }

    /// Interprets `value[offset..]` as the upper triangle of a `d x d` matrix.
    pub fn sym(&self, d: usize, offset: usize) -> SymMatrix {
        let mut k = offset;
        SymMatrix::from_fn(d, |_, _| {
            let v = self.value[k];
            k += 1;
            v
        })
    }
}

/// Number of Gaussian coordinates the quadrature integrates over:
/// the span rank for `Y` when `t > 0`, plus `N D` for `Ybar` when `h != 0`.
pub fn quadrature_dims(space: &ConfigSpace, t: f64, h: &ConePoint) -> (usize, usize) {
    let ry = if t > 0.0 { space.rank } else { 0 };
    let rz = if h.matrix().max_abs() > 0.0 { space.nd } else { 0 };
    (ry, rz)
}

/// Averages `estimator` over the disorder `(X, W, Z)`.
pub fn quenched<E>(
    space: &ConfigSpace,
    t: f64,
    h: &ConePoint,
    averaging: &Averaging,
    estimator: E,
) -> Result<QuenchedEstimate>
where
    E: Fn(&GibbsSummary, &Truth) -> Result<Vec<f64>> + Sync,
{
    let ctx = GibbsContext::new(space, t, h)?;
    match *averaging {
        Averaging::Quadrature {
            nodes,
            scheme,
            refine,
        } => {
            let (value, points) = quadrature_average(&ctx, nodes, scheme, &estimator)?;
            let refinement_delta = if refine {
                let (ry, rz) = quadrature_dims(space, t, h);
                if grid_size(2 * nodes, ry + rz).is_ok() && 2 * nodes <= crate::quadrature::MAX_NODES {
                    let (fine, _) = quadrature_average(&ctx, 2 * nodes, scheme, &estimator)?;
                    Some(fine.iter().zip(&value).map(|(a, b)| (a - b).abs()).collect())
                } else {
                    None
                }
            } else {
                None
            };
            Ok(QuenchedEstimate {
                std_error: vec![0.0; value.len()],
                value,
                n_replicas: points,
                method: Method::Quadrature,
                refinement_delta,
            })
        }
        Averaging::MonteCarlo { budget, seed } => {
            let samples = monte_carlo_replicas_ctx(&ctx, budget, seed, &estimator)?;
            let (value, std_error) = jackknife(&samples, |m| m.to_vec());
            Ok(QuenchedEstimate {
                value,
                std_error,
                n_replicas: budget,
                method: Method::MonteCarlo,
                refinement_delta: None,
            })
        }
    }
}

/// Per-replica estimator values; replica `r` draws its disorder with seed `seed + r`.
pub fn monte_carlo_replicas<E>(
    space: &ConfigSpace,
    t: f64,
    h: &ConePoint,
    budget: usize,
    seed: u64,
    estimator: E,
) -> Result<Vec<Vec<f64>>>
where
    E: Fn(&GibbsSummary, &Truth) -> Result<Vec<f64>> + Sync,
{
    let ctx = GibbsContext::new(space, t, h)?;
    monte_carlo_replicas_ctx(&ctx, budget, seed, &estimator)
}

fn monte_carlo_replicas_ctx<E>(
    ctx: &GibbsContext,
    budget: usize,
    seed: u64,
    estimator: &E,
) -> Result<Vec<Vec<f64>>>
where
    E: Fn(&GibbsSummary, &Truth) -> Result<Vec<f64>> + Sync,
{
    if budget < MIN_MC_BUDGET {
        return Err(Error::Capacity(format!(
            "Monte Carlo budget {budget} is below the minimum of {MIN_MC_BUDGET}"
        )));
    }
    let spec = &ctx.space.spec;
    let samples: Vec<Vec<f64>> = (0..budget)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            let disorder = DisorderSample::draw(spec, &mut rng)?;
            let summary = ctx.summarize(&ctx.observe(&disorder));
            estimator(
                &summary,
                &Truth {
                    index: disorder.truth,
                    x: &disorder.x,
                    z: &disorder.z,
                },
            )
        })
        .collect::<Result<_>>()?;
    if samples.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::Invalid("estimator returned vectors of varying length".into()));
    }
    Ok(samples)
}

/// Delete-one jackknife of `f` applied to the sample mean.
///
/// Returns `(f(mean), standard error)`; for `f` the identity this is the usual
/// standard error of the mean.
pub fn jackknife(samples: &[Vec<f64>], f: impl Fn(&[f64]) -> Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let total = pairwise_sum_vectors(samples);
    let mean: Vec<f64> = total.iter().map(|v| v / n as f64).collect();
    let value = f(&mean);
    if n == 1 {
        return (value.clone(), vec![0.0; value.len()]);
    }
    let mut leave_out = vec![0.0; total.len()];
    let estimates: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            for ((lo, t), v) in leave_out.iter_mut().zip(&total).zip(s) {
                *lo = (t - v) / (n - 1) as f64;
            }
            f(&leave_out)
        })
        .collect();
    let est_mean: Vec<f64> = pairwise_sum_vectors(&estimates)
        .into_iter()
        .map(|v| v / n as f64)
        .collect();
    let dev: Vec<Vec<f64>> = estimates
        .iter()
        .map(|e| e.iter().zip(&est_mean).map(|(a, b)| (a - b) * (a - b)).collect())
        .collect();
    let var = pairwise_sum_vectors(&dev);
    let scale = (n - 1) as f64 / n as f64;
    let se = var.into_iter().map(|v| (scale * v).sqrt()).collect();
    (value, se)
}

fn quadrature_average<E>(
    ctx: &GibbsContext,
    nodes: usize,
    scheme: QuadratureScheme,
    estimator: &E,
) -> Result<(Vec<f64>, usize)>
where
    E: Fn(&GibbsSummary, &Truth) -> Result<Vec<f64>> + Sync,
{
    let space = ctx.space;
    let nd = space.nd;
    let (ry, rz) = quadrature_dims(space, ctx.t, &ctx.h);
    let grid = TensorGrid::new(GaussHermite::new(nodes)?, ry + rz)?;
    let work = grid.len().saturating_mul(space.count);
    if scheme == QuadratureScheme::Noise && work.saturating_mul(space.count) > 1 << 34 {
        return Err(Error::Capacity(format!(
            "noise-space quadrature over {} points and {} signals is too large",
            grid.len(),
            space.count
        )));
    }
    let chunks = grid.len().div_ceil(CHUNK);
    let partials: Vec<Option<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| -> Result<Option<Vec<f64>>> {
            let mut acc: Option<Vec<f64>> = None;
            let mut add = |v: Vec<f64>, w: f64| -> Result<()> {
                match acc.as_mut() {
                    None => acc = Some(v.into_iter().map(|a| a * w).collect()),
                    Some(a) => {
                        if a.len() != v.len() {
                            return Err(Error::Invalid(
                                "estimator returned vectors of varying length".into(),
                            ));
                        }
                        for (x, y) in a.iter_mut().zip(v) {
                            *x += w * y;
                        }
                    }
                }
                Ok(())
            };
            let mut point = vec![0.0; ry + rz];
            let zeros = vec![0.0; nd];
            let start = chunk * CHUNK;
            let end = (start + CHUNK).min(grid.len());
            for idx in start..end {
                let w = grid.point(idx, &mut point);
                match scheme {
                    QuadratureScheme::Noise => {
                        let z: &[f64] = if rz > 0 { &point[ry..] } else { &zeros };
                        for truth in 0..space.count {
                            let prior = space.log_prior[truth].exp();
                            if prior == 0.0 {
                                continue;
                            }
                            let x = space.config(truth);
                            let mut y = vec![0.0; space.rank];
                            if ry > 0 {
                                for ((yi, pi), wi) in
                                    y.iter_mut().zip(space.projection(truth)).zip(&point[..ry])
                                {
                                    *yi = ctx.c * pi + wi;
                                }
                            }
                            let obs = Observation {
                                y,
                                ybar: ctx.channel(x, z),
                            };
                            let summary = ctx.summarize(&obs);
                            let v = estimator(&summary, &Truth { index: truth, x, z })?;
                            add(v, w * prior)?;
                        }
                    }
                    QuadratureScheme::Observation => {
                        let mut y = vec![0.0; space.rank];
                        if ry > 0 {
                            y.copy_from_slice(&point[..ry]);
                        }
                        let ybar = if rz > 0 { point[ry..].to_vec() } else { zeros.clone() };
                        let obs = Observation { y, ybar };
                        let summary = ctx.summarize(&obs);
                        // Joint density of (signal, observation) relative to the
                        // Gaussian reference: P(X) exp(H_N(X)) = Z(obs) * posterior(X).
                        let evidence = (summary.log_partition + w.ln()).exp();
                        if evidence == 0.0 {
                            continue;
                        }
                        for truth in 0..space.count {
                            let p = summary.weights[truth];
                            if p == 0.0 {
                                continue;
                            }
                            let x = space.config(truth);
                            let z: Vec<f64> = if rz > 0 {
                                // Z = Ybar - X sqrt(2h)
                                let shift = ctx.channel(x, &zeros);
                                obs.ybar.iter().zip(&shift).map(|(a, b)| a - b).collect()
                            } else {
                                zeros.clone()
                            };
                            let v = estimator(&summary, &Truth { index: truth, x, z: &z })?;
                            add(v, evidence * p)?;
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let parts: Vec<Vec<f64>> = partials.into_iter().flatten().collect();
    if parts.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::Invalid("estimator returned vectors of varying length".into()));
    }
    Ok((pairwise_sum_vectors(&parts), grid.len()))
}

/// Estimator of `F_N`.
pub fn est_free_energy(s: &GibbsSummary, _: &Truth) -> Result<Vec<f64>> {
    Ok(vec![s.f_n])
}

/// Estimator of `N^{-p} |<x^{(x)p} A>|^2` (the `t`-derivative of the quenched free energy).
pub fn est_time_moment(space: &ConfigSpace) -> impl Fn(&GibbsSummary, &Truth) -> Result<Vec<f64>> + Sync + '_ {
    let scale = 1.0 / (space.spec.n as f64).powi(space.spec.interaction.p() as i32);
    move |s, _| Ok(vec![scale * s.tensor_mean_sq()])
}

/// Estimator of `<x>^T <x> / N` (upper triangle).
pub fn est_replica_overlap(s: &GibbsSummary, _: &Truth) -> Result<Vec<f64>> {
    Ok(s.replica_overlap_mean().upper_triangle())
}

/// `psi(h) = E F_1(0, h)`, the free energy of the linear channel alone.
pub fn psi(prior: &PriorSpec, h: &ConePoint, nodes: usize) -> Result<f64> {
    let space = psi_space(prior)?;
    Ok(quenched(
        &space,
        0.0,
        h,
        &Averaging::quadrature(nodes, QuadratureScheme::Noise),
        est_free_energy,
    )?
    .scalar())
}

/// `grad psi(h) = E[<x>^T <x>]` at `N = 1`.
pub fn psi_grad(prior: &PriorSpec, h: &ConePoint, nodes: usize) -> Result<SymMatrix> {
    let space = psi_space(prior)?;
    let est = quenched(
        &space,
        0.0,
        h,
        &Averaging::quadrature(nodes, QuadratureScheme::Noise),
        est_replica_overlap,
    )?;
    Ok(est.sym(prior.d(), 0))
}

/// Hessian of `psi` by central differences of [`psi_grad`] along the basis
/// (forward differences where the backward point leaves the cone).
///
/// Entry `[k][l]` is `d/de_k (grad psi . e_l)` for basis elements `e_k, e_l`.
pub fn psi_hess(prior: &PriorSpec, h: &ConePoint, nodes: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    let basis = crate::symcone::basis(prior.d())?;
    let g0 = psi_grad(prior, h, nodes)?;
    basis
        .iter()
        .map(|e| {
            let plus = psi_grad(prior, &ConePoint::new(*h.matrix() + *e * step)?, nodes)?;
            let grad_diff = match ConePoint::new(*h.matrix() - *e * step) {
                Ok(back) => (plus - psi_grad(prior, &back, nodes)?) * (0.5 / step),
                Err(_) => (plus - g0) * (1.0 / step),
            };
            Ok(basis.iter().map(|f| grad_diff.dot(f)).collect())
        })
        .collect()
}

fn psi_space(prior: &PriorSpec) -> Result<ConfigSpace> {
    let spec = ModelSpec::new(
        prior.clone(),
        InteractionSpec::linear_trace(prior.d())?,
        1,
    )?;
    ConfigSpace::new(&spec)
}

/// Fast evaluator of `psi` and its gradient in one pass, by noise-space
/// Gauss-Hermite quadrature with `nodes` points per coordinate.
#[derive(Clone, Debug)]
pub struct PsiOracle {
    prior: PriorSpec,
    nodes: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl PsiOracle {
    pub fn new(prior: &PriorSpec, nodes: usize) -> Result<Self> {
        let d = prior.d();
        let grid = TensorGrid::new(GaussHermite::new(nodes)?, d)?;
        let mut points = Vec::with_capacity(grid.len());
        let mut weights = Vec::with_capacity(grid.len());
        let mut p = vec![0.0; d];
        for k in 0..grid.len() {
            weights.push(grid.point(k, &mut p));
            points.push(p.clone());
        }
        Ok(PsiOracle {
            prior: prior.clone(),
            nodes,
            points,
            weights,
        })
    }

    /// 64 nodes for `D = 1`, 32 for `D = 2`, fewer above.
    pub fn with_default_nodes(prior: &PriorSpec) -> Result<Self> {
        let nodes = match prior.d() {
            1 => 64,
            2 => 32,
            3 => 12,
            _ => 6,
        };
        Self::new(prior, nodes)
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// `(psi(h), grad psi(h))` for PSD `h`.
    pub fn eval(&self, h: &SymMatrix) -> Result<(f64, SymMatrix)> {
        let d = self.prior.d();
        if h.dim() != d {
            return Err(Error::Dimension(format!("h is {}x{}, D = {d}", h.dim(), h.dim())));
        }
        let cone = ConePoint::new(*h)?;
        let root = *sqrt_psd(&ConePoint::new(*cone.matrix() * 2.0)?)?.matrix();
        let support = self.prior.support();
        let s = support.len();
        let log_prior: Vec<f64> = self.prior.weights().iter().map(|w| w.ln()).collect();
        // x^T h x and sqrt(2h) x for every support point.
        let quad: Vec<f64> = support
            .iter()
            .map(|x| {
                (0..d)
                    .map(|a| (0..d).map(|b| x[a] * cone.matrix().get(a, b) * x[b]).sum::<f64>())
                    .sum()
            })
            .collect();
        let rx: Vec<Vec<f64>> = support
            .iter()
            .map(|x| (0..d).map(|a| (0..d).map(|b| root.get(a, b) * x[b]).sum()).collect())
            .collect();

        let mut value_terms = Vec::with_capacity(s * self.points.len());
        let mut grad = vec![0.0; d * d];
        let mut lw = vec![0.0; s];
        let mut mean = [0.0; crate::symcone::MAX_DIM];
        let mut ybar = [0.0; crate::symcone::MAX_DIM];
        let mut field = [0.0; crate::symcone::MAX_DIM];
        for (truth, &pt) in self.prior.weights().iter().enumerate() {
            if pt == 0.0 {
                continue;
            }
            for (z, &w) in self.points.iter().zip(&self.weights) {
                // field = sqrt(2h) Ybar with Ybar = sqrt(2h) X + z
                for a in 0..d {
                    ybar[a] = rx[truth][a] + z[a];
                }
                for a in 0..d {
                    field[a] = (0..d).map(|b| root.get(a, b) * ybar[b]).sum();
                }
                let mut max = f64::NEG_INFINITY;
                for k in 0..s {
                    let e = log_prior[k]
                        + support[k].iter().zip(&field[..d]).map(|(x, v)| x * v).sum::<f64>()
                        - quad[k];
                    lw[k] = e;
                    max = max.max(e);
                }
                let mut sum = 0.0;
                mean[..d].iter_mut().for_each(|m| *m = 0.0);
                for k in 0..s {
                    let p = (lw[k] - max).exp();
                    sum += p;
                    for a in 0..d {
                        mean[a] += p * support[k][a];
                    }
                }
                mean[..d].iter_mut().for_each(|m| *m /= sum);
                value_terms.push(pt * w * (max + sum.ln()));
                for a in 0..d {
                    for b in 0..d {
                        grad[a * d + b] += pt * w * mean[a] * mean[b];
                    }
                }
            }
        }
        let value = crate::quadrature::pairwise_sum(&value_terms);
        Ok((value, SymMatrix::symmetrize(d, &grad)?))
    }

    pub fn value(&self, h: &SymMatrix) -> Result<f64> {
        Ok(self.eval(h)?.0)
    }

    pub fn gradient(&self, h: &SymMatrix) -> Result<SymMatrix> {
        Ok(self.eval(h)?.1)
    }
}

/// Overlap averages returned by [`overlap_statistics`]; matrices are full row-major `D x D`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverlapStatistics {
    /// `E<Q>`.
    pub mean_q: QuenchedEstimate,
    /// `E<R>`.
    pub mean_r: QuenchedEstimate,
    /// `E<|Q - center|>`.
    pub abs_dev_center: QuenchedEstimate,
    /// `E<|Q - E<Q>|>`.
    pub abs_dev_mean: QuenchedEstimate,
}

pub fn overlap_statistics(
    space: &ConfigSpace,
    t: f64,
    h: &ConePoint,
    center: &SymMatrix,
    averaging: &Averaging,
) -> Result<OverlapStatistics> {
    let d = space.spec.d();
    let center_full = center.as_slice().to_vec();
    let first = quenched(space, t, h, averaging, |s, truth| {
        let mut v = s.overlap_mean(truth);
        let r = s.replica_overlap_mean();
        v.extend_from_slice(r.as_slice());
        v.push(s.overlap_abs_dev(space, truth, &center_full));
        Ok(v)
    })?;
    let split = |est: &QuenchedEstimate, range: std::ops::Range<usize>| QuenchedEstimate {
        value: est.value[range.clone()].to_vec(),
        std_error: est.std_error[range.clone()].to_vec(),
        n_replicas: est.n_replicas,
        method: est.method,
        refinement_delta: est.refinement_delta.as_ref().map(|r| r[range].to_vec()),
    };
    let dd = d * d;
    let mean_q = split(&first, 0..dd);
    let mean_r = split(&first, dd..2 * dd);
    let abs_dev_center = split(&first, 2 * dd..2 * dd + 1);
    let q_center = mean_q.value.clone();
    let abs_dev_mean = quenched(space, t, h, averaging, |s, truth| {
        Ok(vec![s.overlap_abs_dev(space, truth, &q_center)])
    })?;
    Ok(OverlapStatistics {
        mean_q,
        mean_r,
        abs_dev_center,
        abs_dev_mean,
    })
}

/// `MMSE_N = (1/N) E[(X - <x>)^T (X - <x>)]` (upper triangle).
pub fn mmse_matrix(
    space: &ConfigSpace,
    t: f64,
    h: &ConePoint,
    averaging: &Averaging,
) -> Result<QuenchedEstimate> {
    let n = space.spec.n;
    let d = space.spec.d();
    quenched(space, t, h, averaging, move |s, truth| {
        let err: Vec<f64> = truth.x.iter().zip(&s.mean_x).map(|(a, b)| a - b).collect();
        Ok(SymMatrix::symmetrize(d, &outer_mean(n, d, &err, &err))?.upper_triangle())
    })
}

/// `mmse_N = N^{-p} E|X^{(x)p}A - <x^{(x)p}A>|^2`.
pub fn mmse_scalar(
    space: &ConfigSpace,
    t: f64,
    h: &ConePoint,
    averaging: &Averaging,
) -> Result<QuenchedEstimate> {
    let scale = 1.0 / (space.spec.n as f64).powi(space.spec.interaction.p() as i32);
    quenched(space, t, h, averaging, move |s, truth| {
        let err: f64 = space
            .projection(truth.index)
            .iter()
            .zip(&s.mean_proj)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(vec![scale * err])
    })
}

/// `N^{-p} E|X^{(x)p}A|^2`, exact over the prior.
pub fn tensor_second_moment(space: &ConfigSpace) -> f64 {
    let scale = 1.0 / (space.spec.n as f64).powi(space.spec.interaction.p() as i32);
    let terms: Vec<f64> = (0..space.count)
        .map(|k| space.log_prior[k].exp() * space.tensor_sq[k])
        .collect();
    scale * crate::quadrature::pairwise_sum(&terms)
}

/// `(A A^T) . (E[X_1^T X_1])^{(x)p}`, the large-`N` limit of [`tensor_second_moment`].
pub fn tensor_second_moment_limit(spec: &ModelSpec) -> Result<f64> {
    crate::nonlinearity::h_value(&spec.interaction, &spec.prior.second_moment())
}
