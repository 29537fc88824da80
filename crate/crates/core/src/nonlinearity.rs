//! The interaction polynomial `H(q) = (A A^T) . q^{(x)p}` on symmetric matrices.
//!
//! `q^{(x)p}` is the `D^p x D^p` Kronecker power, with multi-indices read as
//! base-`D` numbers whose first digit is most significant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symcone::{project_psd, wishart, SymMatrix};

/// Largest supported tensor order.
pub const MAX_ORDER: usize = 4;
/// Largest supported row count `D^p` of `A`.
pub const MAX_TENSOR_ROWS: usize = 256;

/// The interaction matrix `A` (`D^p x L`) and its Gram matrix `A A^T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InteractionConfig", into = "InteractionConfig")]
pub struct InteractionSpec {
    d: usize,
    p: usize,
    l_cols: usize,
    /// Row-major `D^p x L`.
    a: Vec<f64>,
    /// Row-major `D^p x D^p`.
    gram: Vec<f64>,
}

/// Serialized form of [`InteractionSpec`]: `A` as a list of rows.
///
/// A `gram` field, when present, must agree with `A A^T`; it is never used.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractionConfig {
    #[serde(rename = "D")]
    pub d: usize,
    pub p: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram: Option<Vec<Vec<f64>>>,
}

impl TryFrom<InteractionConfig> for InteractionSpec {
    type Error = Error;

    fn try_from(cfg: InteractionConfig) -> Result<Self> {
        let spec = InteractionSpec::new(cfg.d, cfg.p, &cfg.a)?;
        if let Some(gram) = cfg.gram {
            let rows = spec.tensor_rows();
            if gram.len() != rows || gram.iter().any(|r| r.len() != rows) {
                return Err(Error::Invalid(format!(
                    "supplied gram matrix is not {rows}x{rows}"
                )));
            }
            for (i, row) in gram.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let expected = spec.gram[i * rows + j];
                    if (v - expected).abs() > 1e-12 {
                        return Err(Error::Invalid(format!(
                            "supplied gram entry ({i},{j}) = {v} does not match A A^T = {expected}"
                        )));
                    }
                }
            }
        }
        Ok(spec)
    }
}

impl From<InteractionSpec> for InteractionConfig {
    fn from(spec: InteractionSpec) -> Self {
        InteractionConfig {
            d: spec.d,
            p: spec.p,
            a: spec.a_rows(),
            gram: None,
        }
    }
}

impl InteractionSpec {
    pub fn new(d: usize, p: usize, a_rows: &[Vec<f64>]) -> Result<Self> {
        if d == 0 || d > crate::symcone::MAX_DIM {
            return Err(Error::Capacity(format!("signal dimension D = {d} unsupported")));
        }
        if p == 0 || p > MAX_ORDER {
            return Err(Error::Capacity(format!(
                "tensor order p = {p} outside 1..={MAX_ORDER}"
            )));
        }
        let rows = d
            .checked_pow(p as u32)
            .filter(|&r| r <= MAX_TENSOR_ROWS)
            .ok_or_else(|| {
                Error::Capacity(format!("D^p = {d}^{p} exceeds {MAX_TENSOR_ROWS}"))
            })?;
        if a_rows.len() != rows {
            return Err(Error::Dimension(format!(
                "A must have D^p = {rows} rows, got {}",
                a_rows.len()
            )));
        }
        let l_cols = a_rows[0].len();
        if l_cols == 0 {
            return Err(Error::Dimension("A must have at least one column".into()));
        }
        if let Some(i) = a_rows.iter().position(|r| r.len() != l_cols) {
            return Err(Error::Dimension(format!(
                "row {i} of A has {} entries, expected {l_cols}",
                a_rows[i].len()
            )));
        }
        let a: Vec<f64> = a_rows.iter().flatten().copied().collect();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("A has non-finite entries".into()));
        }
        let mut gram = vec![0.0; rows * rows];
        for i in 0..rows {
            for j in 0..rows {
                gram[i * rows + j] = (0..l_cols)
                    .map(|l| a[i * l_cols + l] * a[j * l_cols + l])
                    .sum();
            }
        }
        Ok(InteractionSpec {
            d,
            p,
            l_cols,
            a,
            gram,
        })
    }

    /// `D = 1, p = 2, A = [1]`, so that `H(q) = q^2`.
    pub fn scalar_quadratic() -> Self {
        Self::new(1, 2, &[vec![1.0]]).expect("valid literal")
    }

    /// `p = 2` with `A = vec(I_D)` (one column), so that `H(q) = |q|^2`.
    pub fn identity_flattened(d: usize) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..d * d)
            .map(|k| vec![if k / d == k % d { 1.0 } else { 0.0 }])
            .collect();
        Self::new(d, 2, &rows)
    }

    /// `p = 1` with `A = I_D`, so that `H(q) = tr(q)`.
    pub fn linear_trace(d: usize) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(d, 1, &rows)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn l_cols(&self) -> usize {
        self.l_cols
    }

    /// `D^p`.
    pub fn tensor_rows(&self) -> usize {
        self.a.len() / self.l_cols
    }

    /// Entry `(row, col)` of `A`.
    #[inline]
    pub fn a(&self, row: usize, col: usize) -> f64 {
        self.a[row * self.l_cols + col]
    }

    pub fn a_rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.l_cols).map(|r| r.to_vec()).collect()
    }

    /// Row-major `A A^T`.
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    fn check(&self, q: &SymMatrix) -> Result<()> {
        if q.dim() != self.d {
            return Err(Error::Dimension(format!(
                "argument is {}x{} but the interaction has D = {}",
                q.dim(),
                q.dim(),
                self.d
            )));
        }
        Ok(())
    }

    /// Digits of multi-index `k` in base `D`, most significant first.
    fn digits(&self, mut k: usize, out: &mut [usize]) {
        for slot in out.iter_mut().rev() {
            *slot = k % self.d;
            k /= self.d;
        }
    }
}

/// `H(q) = sum_{d,d'} (A A^T)_{d d'} prod_i q_{d_i d'_i}`.
pub fn h_value(spec: &InteractionSpec, q: &SymMatrix) -> Result<f64> {
    spec.check(q)?;
    let rows = spec.tensor_rows();
    let mut di = [0usize; MAX_ORDER];
    let mut dj = [0usize; MAX_ORDER];
    let mut total = 0.0;
    for i in 0..rows {
        spec.digits(i, &mut di[..spec.p]);
        for j in 0..rows {
            let g = spec.gram[i * rows + j];
            if g == 0.0 {
                continue;
            }
            spec.digits(j, &mut dj[..spec.p]);
            let prod: f64 = (0..spec.p).map(|k| q.get(di[k], dj[k])).product();
            total += g * prod;
        }
    }
    Ok(total)
}

/// The symmetric representer of `a -> dH(q)[a]`.
pub fn h_grad(spec: &InteractionSpec, q: &SymMatrix) -> Result<SymMatrix> {
    spec.check(q)?;
    let d = spec.d;
    let p = spec.p;
    let rows = spec.tensor_rows();
    let mut di = [0usize; MAX_ORDER];
    let mut dj = [0usize; MAX_ORDER];
    let mut factors = [0.0f64; MAX_ORDER];
    let mut full = vec![0.0; d * d];
    for i in 0..rows {
        spec.digits(i, &mut di[..p]);
        for j in 0..rows {
            let g = spec.gram[i * rows + j];
            if g == 0.0 {
                continue;
            }
            spec.digits(j, &mut dj[..p]);
            for k in 0..p {
                factors[k] = q.get(di[k], dj[k]);
            }
            // Product of all factors except slot k, via prefix and suffix products.
            let mut prefix = 1.0;
            for k in 0..p {
                let suffix: f64 = factors[k + 1..p].iter().product();
                full[di[k] * d + dj[k]] += g * prefix * suffix;
                prefix *= factors[k];
            }
        }
    }
    SymMatrix::symmetrize(d, &full)
}

/// Outcome of [`cone_monotone_check`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub samples: usize,
    pub failures: usize,
    /// Smallest eigenvalue of `h_grad(q)` over the samples.
    pub worst_eigenvalue: f64,
}

impl MonotoneReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Checks that `h_grad(q)` is PSD for random PSD `q` (and for `q = 0`).
pub fn cone_monotone_check(
    spec: &InteractionSpec,
    samples: usize,
    seed: u64,
) -> Result<MonotoneReport> {
    if samples == 0 {
        return Err(Error::Invalid("cone_monotone_check needs at least one sample".into()));
    }
    let eigs: Vec<f64> = (0..=samples)
        .into_par_iter()
        .map(|i| {
            let q = if i == 0 {
                SymMatrix::zeros(spec.d)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                wishart(spec.d, &mut rng)
            };
            h_grad(spec, &q)?.min_eigenvalue()
        })
        .collect::<Result<_>>()?;
    Ok(MonotoneReport {
        samples: eigs.len(),
        failures: eigs.iter().filter(|&&e| e < -1e-10).count(),
        worst_eigenvalue: eigs.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Outcome of [`convexity_probe`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub samples: usize,
    pub violations: usize,
    /// Largest `H((q+q')/2) - (H(q)+H(q'))/2` seen.
    pub worst_gap: f64,
}

impl ConvexityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Midpoint-convexity test of `H` on random PSD pairs.
pub fn convexity_probe(
    spec: &InteractionSpec,
    samples: usize,
    seed: u64,
) -> Result<ConvexityReport> {
    if samples == 0 {
        return Err(Error::Invalid("convexity_probe needs at least one sample".into()));
    }
    let gaps: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let q1 = wishart(spec.d, &mut rng);
            let q2 = wishart(spec.d, &mut rng);
            let mid = (q1 + q2) * 0.5;
            let lhs = h_value(spec, &mid)?;
            let rhs = 0.5 * (h_value(spec, &q1)? + h_value(spec, &q2)?);
            Ok(lhs - rhs)
        })
        .collect::<Result<_>>()?;
    Ok(ConvexityReport {
        samples,
        violations: gaps.iter().filter(|&&g| g > 1e-10).count(),
        worst_gap: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Sampled lower estimate of the Lipschitz constant of `h -> h_grad(psi_grad(h))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub l_hat: f64,
    /// Number of difference quotients evaluated.
    pub samples: usize,
    pub region_radius: f64,
    pub pair_max: (SymMatrix, SymMatrix),
}

/// Gradient oracle passed to [`estimate_lipschitz`]; inputs are PSD.
pub type GradientOracle<'a> = dyn Fn(&SymMatrix) -> Result<SymMatrix> + Sync + 'a;

/// Maximum difference quotient of `h -> h_grad(psi_grad(h))` over sampled pairs in
/// `{h PSD, |h| <= radius}`.
///
/// Sample `i` uses the seed `seed + i` and contributes a far pair (two independent
/// points) and a near pair (separation in `[1e-4, 1e-2]`); sample 0 also pairs
/// with the apex. The estimate is therefore nondecreasing in `samples`.
pub fn estimate_lipschitz(
    spec: &InteractionSpec,
    psi_grad: &GradientOracle<'_>,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if samples < 2 {
        return Err(Error::Invalid(format!(
            "estimate_lipschitz needs at least 2 samples, got {samples}"
        )));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Invalid(format!("radius must be positive, got {radius}")));
    }
    let d = spec.d;
    let map = |h: &SymMatrix| -> Result<SymMatrix> { h_grad(spec, &psi_grad(h)?) };
    let in_ball = |m: SymMatrix, r: f64| -> Result<SymMatrix> {
        let p = *project_psd(&m)?.matrix();
        let n = p.norm();
        Ok(if n > r { p * (r / n) } else { p })
    };

    let per_sample: Vec<Vec<(f64, SymMatrix, SymMatrix)>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let random_point = |rng: &mut ChaCha8Rng| -> Result<SymMatrix> {
                let w = wishart(d, rng);
                let target = radius * rand::Rng::random::<f64>(rng);
                let n = w.norm();
                in_ball(if n > 0.0 { w * (target / n) } else { w }, radius)
            };
            let h1 = random_point(&mut rng)?;
            let h2 = random_point(&mut rng)?;
            let mut pairs = vec![(h1, h2)];
            // Near pair: perturb h1 by a symmetric direction of length in [1e-4, 1e-2].
            let dir = wishart(d, &mut rng) - wishart(d, &mut rng);
            let len = 10f64.powf(-4.0 + 2.0 * rand::Rng::random::<f64>(&mut rng));
            if dir.norm() > 0.0 {
                let near = in_ball(h1 + dir * (len / dir.norm()), radius)?;
                pairs.push((h1, near));
            }
            if i == 0 {
                pairs.push((SymMatrix::zeros(d), h1));
            }
            pairs
                .into_iter()
                .filter(|(a, b)| (*a - *b).norm() > 0.0)
                .map(|(a, b)| {
                    let q = (map(&a)? - map(&b)?).norm() / (a - b).norm();
                    Ok((q, a, b))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, SymMatrix, SymMatrix)> = None;
    let mut count = 0;
    for (q, a, b) in per_sample.into_iter().flatten() {
        count += 1;
        if best.as_ref().is_none_or(|(bq, _, _)| q > *bq) {
            best = Some((q, a, b));
        }
    }
    let (l_hat, a, b) = best.ok_or_else(|| Error::Numeric("no usable sample pairs".into()))?;
    Ok(LipschitzEstimate {
        l_hat,
        samples: count,
        region_radius: radius,
        pair_max: (a, b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Straight-line oracle: builds the Kronecker power entry by entry.
    fn kron_power(q: &SymMatrix, p: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![1.0]];
        for _ in 0..p {
            let n = m.len();
            let d = q.dim();
            let mut next = vec![vec![0.0; n * d]; n * d];
            for (i, row) in m.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    for a in 0..d {
                        for b in 0..d {
                            next[i * d + a][j * d + b] = v * q.get(a, b);
                        }
                    }
                }
            }
            m = next;
        }
        m
    }

    fn oracle_value(a: &[Vec<f64>], q: &SymMatrix, p: usize) -> f64 {
        let k = kron_power(q, p);
        let l = a[0].len();
        (0..l)
            .map(|c| {
                let col: Vec<f64> = a.iter().map(|r| r[c]).collect();
                k.iter()
                    .enumerate()
                    .map(|(i, row)| col[i] * row.iter().zip(&col).map(|(x, y)| x * y).sum::<f64>())
                    .sum::<f64>()
            })
            .sum()
    }

    fn random_a(rng: &mut ChaCha8Rng, d: usize, p: usize, l: usize) -> Vec<Vec<f64>> {
        (0..d.pow(p as u32))
            .map(|_| (0..l).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn random_sym(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
        SymMatrix::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn scalar_examples() {
        let s = InteractionSpec::scalar_quadratic();
        let q = SymMatrix::diag(&[3.0]);
        assert_eq!(h_value(&s, &q).unwrap(), 9.0);
        assert_eq!(h_grad(&s, &q).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn linear_examples() {
        let s = InteractionSpec::linear_trace(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_sym(&mut rng, 3);
        assert!((h_value(&s, &q).unwrap() - q.trace()).abs() < 1e-15);
        assert_eq!(h_grad(&s, &q).unwrap(), SymMatrix::identity(3));
    }

    #[test]
    fn identity_flattened_is_squared_norm() {
        let s = InteractionSpec::identity_flattened(2).unwrap();
        let q = SymMatrix::from_rows(&[vec![0.5, -0.2], vec![-0.2, 1.5]]).unwrap();
        assert!((h_value(&s, &q).unwrap() - q.dot(&q)).abs() < 1e-15);
        assert!((h_grad(&s, &q).unwrap() - q * 2.0).max_abs() < 1e-15);
    }

    #[test]
    fn value_matches_kronecker_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (d, p, l) in [(2, 2, 1), (2, 2, 3), (2, 3, 2), (3, 2, 2), (1, 4, 1)] {
            let a = random_a(&mut rng, d, p, l);
            let s = InteractionSpec::new(d, p, &a).unwrap();
            let q = random_sym(&mut rng, d);
            let v = h_value(&s, &q).unwrap();
            let o = oracle_value(&a, &q, p);
            assert!((v - o).abs() <= 1e-13 * (1.0 + o.abs()), "{d},{p},{l}: {v} vs {o}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        for (d, p, l) in [(1, 2, 1), (2, 2, 2), (2, 3, 1), (3, 2, 1), (2, 4, 1)] {
            let a = random_a(&mut rng, d, p, l);
            let s = InteractionSpec::new(d, p, &a).unwrap();
            for _ in 0..20 {
                let q = random_sym(&mut rng, d);
                let dir = random_sym(&mut rng, d);
                let eps = 1e-6;
                let fd = (h_value(&s, &(q + dir * eps)).unwrap()
                    - h_value(&s, &(q - dir * eps)).unwrap())
                    / (2.0 * eps);
                let an = h_grad(&s, &q).unwrap().dot(&dir);
                let rel = (fd - an).abs() / an.abs().max(1e-3);
                assert!(rel < 1e-6, "{d},{p}: {fd} vs {an}");
                checked += 1;
            }
        }
        assert_eq!(checked, 100);
    }

    #[test]
    fn serde_recomputes_and_validates_gram() {
        let s: InteractionSpec = serde_json::from_str(r#"{"D": 1, "p": 2, "A": [[2.0]]}"#).unwrap();
        assert_eq!(s.gram(), &[4.0]);
        let ok: Result<InteractionSpec> = serde_json::from_str::<InteractionSpec>(
            r#"{"D": 1, "p": 2, "A": [[2.0]], "gram": [[4.0]]}"#,
        )
        .map_err(|e| Error::Invalid(e.to_string()));
        assert!(ok.is_ok());
        let bad = serde_json::from_str::<InteractionSpec>(
            r#"{"D": 1, "p": 2, "A": [[2.0]], "gram": [[4.5]]}"#,
        );
        assert!(bad.unwrap_err().to_string().contains("does not match"));
        assert!(serde_json::from_str::<InteractionSpec>(r#"{"D": 2, "p": 2, "A": [[1.0]]}"#).is_err());
        let round: InteractionSpec =
            serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(round, s);
    }

    #[test]
    fn capacity_limits() {
        assert!(InteractionSpec::new(2, 5, &[vec![1.0]]).is_err());
        assert!(InteractionSpec::new(5, 4, &vec![vec![1.0]; 625]).is_err());
        assert!(matches!(
            h_value(&InteractionSpec::scalar_quadratic(), &SymMatrix::zeros(2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn monotone_and_convex_reports() {
        let quad = InteractionSpec::identity_flattened(2).unwrap();
        let m = cone_monotone_check(&quad, 1000, 1).unwrap();
        assert_eq!(m.failures, 0);
        assert_eq!(m.samples, 1001);
        assert!(convexity_probe(&InteractionSpec::scalar_quadratic(), 200, 2).unwrap().passed());
        let lin = convexity_probe(&InteractionSpec::linear_trace(2).unwrap(), 200, 3).unwrap();
        assert!(lin.passed());
        assert!(lin.worst_gap.abs() < 1e-12);
    }

    #[test]
    fn lipschitz_examples() {
        let s = InteractionSpec::scalar_quadratic();
        let constant = |_: &SymMatrix| Ok(SymMatrix::diag(&[0.3]));
        let est = estimate_lipschitz(&s, &constant, 2.0, 50, 9).unwrap();
        assert_eq!(est.l_hat, 0.0);

        let c = 0.7;
        let linear = move |h: &SymMatrix| Ok(*h * c);
        let est = estimate_lipschitz(&s, &linear, 2.0, 50, 9).unwrap();
        assert!((est.l_hat - 2.0 * c).abs() / (2.0 * c) < 1e-3);

        let more = estimate_lipschitz(&s, &linear, 2.0, 100, 9).unwrap();
        assert!(more.l_hat >= est.l_hat);
        assert!(estimate_lipschitz(&s, &linear, 2.0, 1, 9).is_err());
    }
}
