//! Gauss-Hermite rules for the standard normal weight and their tensor grids.
//!
//! Nodes are found by Newton iteration on the orthonormal Hermite recurrence, so
//! even the smallest weights keep full relative accuracy. Observation-space
//! averages multiply those weights by large likelihood ratios, which makes the
//! relative accuracy matter.

use crate::error::{Error, Result};

/// Largest supported number of nodes per dimension.
pub const MAX_NODES: usize = 128;

/// Largest supported number of points in a tensor grid.
pub const MAX_GRID_POINTS: usize = 1 << 24;

/// A Gauss-Hermite rule for `E[g(Z)]` with `Z ~ N(0, 1)`; weights sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Rule with `n` nodes in ascending order, exact for polynomials of degree `< 2n`.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_NODES {
            return Err(Error::Capacity(format!(
                "Gauss-Hermite rule with {n} nodes; supported range is 1..={MAX_NODES}"
            )));
        }
        let (x, w) = physicists_rule(n)?;
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut nodes: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let mut weights: Vec<f64> = w.iter().map(|v| v / sqrt_pi).collect();
        nodes.reverse();
        weights.reverse();
        Ok(GaussHermite { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_i w_i g(x_i)`.
    pub fn integrate(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(x))
            .collect();
        pairwise_sum(&terms)
    }
}

/// Nodes (descending) and weights for the weight `exp(-x^2)`.
fn physicists_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    const MAX_NEWTON: usize = 100;
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut converged = false;
        for _ in 0..MAX_NEWTON {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            let pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numeric(format!(
                "Gauss-Hermite node {i} of {n} did not converge"
            )));
        }
        // One more recurrence pass at the converged node for the weight.
        let mut p1 = PIM4;
        let mut p2 = 0.0;
        for j in 1..=n {
            let jf = j as f64;
            let p3 = p2;
            p2 = p1;
            p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
        }
        let pp = (2.0 * nf).sqrt() * p2;
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    Ok((x, w))
}

/// Tensor product of one rule over `dims` coordinates.
///
/// Point `k` has coordinate `j` equal to node `(k / n^(dims-1-j)) % n`, so the
/// first coordinate is the most significant digit.
#[derive(Clone, Debug)]
pub struct TensorGrid {
    rule: GaussHermite,
    dims: usize,
    len: usize,
}

impl TensorGrid {
    pub fn new(rule: GaussHermite, dims: usize) -> Result<Self> {
        let len = grid_size(rule.len(), dims)?;
        Ok(TensorGrid { rule, dims, len })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn rule(&self) -> &GaussHermite {
        &self.rule
    }

    /// Writes the coordinates of point `index` into `out` and returns its weight.
    pub fn point(&self, index: usize, out: &mut [f64]) -> f64 {
        debug_assert!(index < self.len && out.len() == self.dims);
        let n = self.rule.len();
        let mut rest = index;
        let mut weight = 1.0;
        for j in (0..self.dims).rev() {
            let digit = rest % n;
            rest /= n;
            out[j] = self.rule.nodes[digit];
            weight *= self.rule.weights[digit];
        }
        weight
    }
}

/// `nodes^dims`, rejecting grids above [`MAX_GRID_POINTS`].
pub fn grid_size(nodes: usize, dims: usize) -> Result<usize> {
    let mut len: usize = 1;
    for _ in 0..dims {
        len = len
            .checked_mul(nodes)
            .filter(|&l| l <= MAX_GRID_POINTS)
            .ok_or_else(|| {
                Error::Capacity(format!(
                    "{nodes}^{dims} quadrature points exceed the limit of {MAX_GRID_POINTS}; \
                     use fewer nodes or Monte Carlo averaging"
                ))
            })?;
    }
    Ok(len)
}

/// Pairwise summation in a fixed order, so results do not depend on scheduling.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Component-wise pairwise sum of equally long vectors.
pub fn pairwise_sum_vectors(values: &[Vec<f64>]) -> Vec<f64> {
    match values.len() {
        0 => Vec::new(),
        1 => values[0].clone(),
        _ => {
            let mid = values.len() / 2;
            let mut left = pairwise_sum_vectors(&values[..mid]);
            let right = pairwise_sum_vectors(&values[mid..]);
            for (a, b) in left.iter_mut().zip(right) {
                *a += b;
            }
            left
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_rules_are_exact() {
        let r1 = GaussHermite::new(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert_abs_diff_eq!(r1.weights[0], 1.0, epsilon = 1e-15);

        let r2 = GaussHermite::new(2).unwrap();
        assert_abs_diff_eq!(r2.nodes[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.nodes[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r2.weights[0], 0.5, epsilon = 1e-15);

        let r3 = GaussHermite::new(3).unwrap();
        assert_abs_diff_eq!(r3.nodes[2], 3f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(r3.weights[1], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r3.weights[0], 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn moments_match_the_normal_law() {
        // E Z^(2k) = (2k - 1)!!
        for n in [4, 12, 16, 32, 64, 128] {
            let rule = GaussHermite::new(n).unwrap();
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
            let mut double_factorial = 1.0;
            for k in 0..n.min(10) {
                if k > 0 {
                    double_factorial *= (2 * k - 1) as f64;
                }
                let m = rule.integrate(|x| x.powi(2 * k as i32));
                assert!(
                    (m - double_factorial).abs() <= 1e-13 * double_factorial,
                    "n={n}, moment {}: {m} vs {double_factorial}",
                    2 * k
                );
                let odd = rule.integrate(|x| x.powi(2 * k as i32 + 1));
                assert!(odd.abs() <= 1e-12 * double_factorial.max(1.0));
            }
        }
    }

    #[test]
    fn smallest_weights_keep_relative_accuracy() {
        // The outermost weight of the n-point rule is n! / (n^2 He_{n-1}(x)^2) times
        // the normal density normalisation; check it against that closed form.
        for n in [12, 24, 48] {
            let rule = GaussHermite::new(n).unwrap();
            let x = rule.nodes[n - 1];
            // He_{n-1}(x) / sqrt((n-1)!) by the normalised recurrence.
            let (mut a, mut b) = (0.0f64, 1.0f64);
            for k in 1..n {
                let c = (x * b - ((k - 1) as f64).sqrt() * a) / (k as f64).sqrt();
                a = b;
                b = c;
            }
            let expected = 1.0 / (n as f64 * b * b);
            let w = rule.weights[n - 1];
            assert!(((w - expected) / expected).abs() < 1e-11, "n={n}: {w:e} vs {expected:e}");
        }
    }

    #[test]
    fn capacity_limits() {
        assert!(GaussHermite::new(0).is_err());
        assert!(GaussHermite::new(MAX_NODES + 1).is_err());
        assert!(grid_size(12, 7).is_err());
        assert_eq!(grid_size(12, 4).unwrap(), 20_736);
        assert_eq!(grid_size(5, 0).unwrap(), 1);
    }

    #[test]
    fn tensor_grid_weights_sum_to_one() {
        let grid = TensorGrid::new(GaussHermite::new(6).unwrap(), 3).unwrap();
        let mut p = [0.0; 3];
        let weights: Vec<f64> = (0..grid.len()).map(|k| grid.point(k, &mut p)).collect();
        assert_abs_diff_eq!(pairwise_sum(&weights), 1.0, epsilon = 1e-14);
        // E[Z1^2 Z2^2 Z3^2] = 1, E[Z1^4] = 3.
        let m: f64 = (0..grid.len())
            .map(|k| {
                let w = grid.point(k, &mut p);
                w * p[0] * p[0] * p[1] * p[1] * p[2] * p[2]
            })
            .sum();
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-13);
        grid.point(6 + 2, &mut p);
        assert_eq!(p[0], grid.rule().nodes[0]);
        assert_eq!(p[1], grid.rule().nodes[1]);
        assert_eq!(p[2], grid.rule().nodes[2]);
    }

    #[test]
    fn pairwise_sums() {
        let v: Vec<f64> = (1..=1000).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        let vs = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert_eq!(pairwise_sum_vectors(&vs), vec![9.0, 12.0]);
    }
}
