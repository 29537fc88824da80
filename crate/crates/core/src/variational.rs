//! Variational formulas for the limit free energy: monotone conjugates over the
//! PSD cone, the Hopf formula, the two Hopf-Lax forms and the maximizer checks.
//!
//! Every sup is taken over `S^D_+` intersected with a Frobenius ball. The ball is
//! either fixed (Hopf, where the conjugate of `psi` is `+inf` outside a bounded
//! set) or doubled until the maximizer is interior or the sup is classified as
//! divergent.

use std::collections::HashMap;
use std::sync::RwLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PsiOracle;
use crate::nonlinearity::{convexity_probe, h_grad, h_value, InteractionSpec};
use crate::symcone::{basis, project_psd, wishart, ConePoint, SymMatrix};

/// Armijo sufficient-increase constant.
const ARMIJO: f64 = 1e-4;
/// Radius doublings before a sup that keeps growing is declared divergent.
const MAX_DOUBLINGS: usize = 60;
/// Consecutive non-decreasing increments that classify a sup as divergent.
const DIVERGENT_STREAK: usize = 3;
/// Values within this of the best, with maximizers farther apart than
/// [`TIE_DISTANCE`], mark a possible non-differentiable point.
pub const TIE_VALUE: f64 = 1e-9;
pub const TIE_DISTANCE: f64 = 1e-4;
/// Accepted steps over which a total gain below `1e-14 (1 + |f|)` stops an ascent.
const STAGNATION_WINDOW: usize = 10;
/// Entries kept in each conjugate memo table.
const MEMO_CAP: usize = 1 << 20;

/// A real function on the PSD cone with its gradient.
pub trait ConeFunction: Sync {
    fn dim(&self) -> usize;

    fn label(&self) -> &str;

    /// A bound on the Frobenius norm of the gradient, when known.
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }

    /// A matrix `M` with `grad <= M` in the PSD order on the whole cone. Then
    /// `g(h) <= g(0) + inner(M, h)`, and the monotone conjugate is `+inf` at
    /// every `h'` for which `h' - M` has a positive eigenvalue.
    fn gradient_ceiling(&self) -> Option<SymMatrix> {
        None
    }

    fn value(&self, h: &SymMatrix) -> Result<f64>;

    /// Central differences along the basis, forward where the backward point fails.
    fn gradient(&self, h: &SymMatrix) -> Result<SymMatrix> {
        const STEP: f64 = 1e-6;
        let f0 = self.value(h)?;
        let mut g = SymMatrix::zeros(h.dim());
        for e in basis(h.dim())? {
            let fp = self.value(&(*h + e * STEP))?;
            let slope = match self.value(&(*h - e * STEP)) {
                Ok(fm) => (fp - fm) / (2.0 * STEP),
                Err(_) => (fp - f0) / STEP,
            };
            g += e * (slope / e.dot(&e));
        }
        Ok(g)
    }

    fn value_and_gradient(&self, h: &SymMatrix) -> Result<(f64, SymMatrix)> {
        Ok((self.value(h)?, self.gradient(h)?))
    }
}

impl ConeFunction for PsiOracle {
    fn dim(&self) -> usize {
        self.prior().d()
    }

    fn label(&self) -> &str {
        "psi"
    }

    /// `|grad psi| = |E <x>^T <x>| <= D` for entries in `[-1, 1]`.
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.prior().d() as f64)
    }

    /// `E <x>^T <x> <= E[X_1^T X_1]` because their difference is the MMSE matrix.
    fn gradient_ceiling(&self) -> Option<SymMatrix> {
        Some(self.prior().second_moment())
    }

    fn value(&self, h: &SymMatrix) -> Result<f64> {
        PsiOracle::value(self, h)
    }

    fn gradient(&self, h: &SymMatrix) -> Result<SymMatrix> {
        PsiOracle::gradient(self, h)
    }

    fn value_and_gradient(&self, h: &SymMatrix) -> Result<(f64, SymMatrix)> {
        self.eval(h)
    }
}

impl ConeFunction for InteractionSpec {
    fn dim(&self) -> usize {
        self.d()
    }

    fn label(&self) -> &str {
        "H"
    }

    fn value(&self, h: &SymMatrix) -> Result<f64> {
        h_value(self, h)
    }

    fn gradient(&self, h: &SymMatrix) -> Result<SymMatrix> {
        h_grad(self, h)
    }
}

type ValueFn<'a> = Box<dyn Fn(&SymMatrix) -> Result<f64> + Sync + 'a>;
type GradFn<'a> = Box<dyn Fn(&SymMatrix) -> Result<SymMatrix> + Sync + 'a>;

/// A [`ConeFunction`] built from closures.
pub struct FnCone<'a> {
    dim: usize,
    label: String,
    value: ValueFn<'a>,
    gradient: Option<GradFn<'a>>,
    lipschitz: Option<f64>,
}

impl<'a> FnCone<'a> {
    pub fn new(
        dim: usize,
        label: &str,
        value: impl Fn(&SymMatrix) -> Result<f64> + Sync + 'a,
    ) -> Self {
        FnCone {
            dim,
            label: label.to_string(),
            value: Box::new(value),
            gradient: None,
            lipschitz: None,
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&SymMatrix) -> Result<SymMatrix> + Sync + 'a,
    ) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    pub fn with_lipschitz(mut self, bound: f64) -> Self {
        self.lipschitz = Some(bound);
        self
    }

    /// `h -> inner(c, h)`.
    pub fn linear(c: SymMatrix) -> Self {
        FnCone::new(c.dim(), "linear", move |h| Ok(c.dot(h)))
            .with_gradient(move |_| Ok(c))
            .with_lipschitz(c.norm())
    }
}

impl ConeFunction for FnCone<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        self.lipschitz
    }

    fn value(&self, h: &SymMatrix) -> Result<f64> {
        (self.value)(h)
    }

    fn gradient(&self, h: &SymMatrix) -> Result<SymMatrix> {
        match &self.gradient {
            Some(g) => g(h),
            None => {
                // The trait default, reached through a shim without the override.
                struct Plain<'b, 'c>(&'b FnCone<'c>);
                impl ConeFunction for Plain<'_, '_> {
                    fn dim(&self) -> usize {
                        self.0.dim
                    }
                    fn label(&self) -> &str {
                        &self.0.label
                    }
                    fn value(&self, h: &SymMatrix) -> Result<f64> {
                        (self.0.value)(h)
                    }
                }
                Plain(self).gradient(h)
            }
        }
    }
}

/// Which representation produced a [`VariationalResult`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    Hopf,
    HopfLax,
    HopfLaxScaled,
    Conjugate,
}

impl Formula {
    pub fn as_str(&self) -> &'static str {
        match self {
            Formula::Hopf => "hopf",
            Formula::HopfLax => "hopf_lax",
            Formula::HopfLaxScaled => "hopf_lax_scaled",
            Formula::Conjugate => "conjugate",
        }
    }
}

/// Hopf-Lax variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopfLaxForm {
    /// `sup { psi(h + h') - t H*(h'/t) }`
    Standard,
    /// `sup { psi(h + t h') - t H*(h') }`
    Scaled,
}

/// End point of one projected-gradient run.
#[derive(Clone, Debug, PartialEq)]
pub struct Terminal {
    pub point: SymMatrix,
    pub value: f64,
    pub gradient: SymMatrix,
    /// `|P(x + g) - x|` with `P` the projection on the feasible set.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct VariationalResult {
    pub value: f64,
    pub maximizer: ConePoint,
    pub stationarity_residual: f64,
    pub starts: usize,
    pub best_start_index: usize,
    pub formula: Formula,
    /// Radius of the Frobenius ball the sup was taken over.
    pub radius: f64,
    /// `(value, maximizer)` of every start that reached a feasible point.
    pub terminals: Vec<(f64, SymMatrix)>,
    /// Another start reached a value within [`TIE_VALUE`] at distance above [`TIE_DISTANCE`].
    pub tie: bool,
}

/// Result of a sup that may be `+inf`.
#[derive(Clone, Debug)]
pub enum ConjugateOutcome {
    Finite(VariationalResult),
    /// The objective kept growing along the boundary of the search ball.
    Divergent {
        radius: f64,
        value: f64,
        increment: f64,
    },
}

impl ConjugateOutcome {
    pub fn finite(self) -> Result<VariationalResult> {
        match self {
            ConjugateOutcome::Finite(r) => Ok(r),
            ConjugateOutcome::Divergent {
                radius,
                value,
                increment,
            } => Err(Error::Numeric(format!(
                "supremum diverges: value {value} at radius {radius}, last increment {increment}"
            ))),
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, ConjugateOutcome::Divergent { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Multi-starts for outer problems; inner conjugates always start cold at 0.
    pub starts: usize,
    pub seed: u64,
    /// Stationarity tolerance `|P(x + g) - x|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            starts: 16,
            seed: 0,
            tol: 1e-9,
            max_iter: 2000,
        }
    }
}

/// Projection on `S^D_+` intersected with the ball of the given radius: the
/// cone projection followed by a radial shrink, exact for a ball at the apex.
pub fn project_feasible(x: &SymMatrix, radius: f64) -> Result<SymMatrix> {
    let p = project_psd(x)?.into_matrix();
    let n = p.norm();
    Ok(if n > radius { p * (radius / n) } else { p })
}

fn stationarity(x: &SymMatrix, g: &SymMatrix, radius: f64) -> Result<f64> {
    Ok((project_feasible(&(*x + *g), radius)? - *x).norm())
}

/// Objective returning `None` where it is `-inf`.
pub type Objective<'a> = dyn Fn(&SymMatrix) -> Result<Option<(f64, SymMatrix)>> + Sync + 'a;

/// Projected gradient ascent with Barzilai-Borwein steps and Armijo backtracking.
///
/// An infeasible start is halved toward the apex until the objective is finite.
/// Returns `None` when no feasible point is found along that ray.
pub fn ascend(
    objective: &Objective,
    start: &SymMatrix,
    radius: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Option<Terminal>> {
    let mut x = project_feasible(start, radius)?;
    let mut current = None;
    for _ in 0..64 {
        if let Some(v) = objective(&x)? {
            current = Some(v);
            break;
        }
        x = x * 0.5;
    }
    if current.is_none() {
        x = SymMatrix::zeros(x.dim());
        current = objective(&x)?;
    }
    let Some((mut f, mut g)) = current else {
        return Ok(None);
    };
    let mut step = 1.0;
    let mut iterations = 0;
    let mut residual = stationarity(&x, &g, radius)?;
    let mut history = std::collections::VecDeque::with_capacity(STAGNATION_WINDOW + 1);
    while residual > tol && iterations < max_iter {
        iterations += 1;
        history.push_back(f);
        if history.len() > STAGNATION_WINDOW {
            let old = history.pop_front().expect("window is full");
            if f - old <= 1e-14 * (1.0 + f.abs()) {
                break;
            }
        }
        let mut s = step;
        let mut accepted = None;
        for _ in 0..80 {
            let xn = project_feasible(&(x + g * s), radius)?;
            let d = xn - x;
            // No representable move left: the gradient and values disagree at
            // rounding level, which is as stationary as the objective allows.
            if d.norm() <= 1e-15 * (1.0 + x.norm()) {
                break;
            }
            if let Some((fnew, gnew)) = objective(&xn)? {
                if fnew >= f + ARMIJO * g.dot(&d) {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            s *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            break;
        };
        let sk = xn - x;
        let yk = gnew - g;
        let sy = sk.dot(&yk);
        step = if sy < 0.0 {
            (sk.dot(&sk) / -sy).clamp(1e-10, 1e10)
        } else {
            (2.0 * s).min(1e10)
        };
        x = xn;
        f = fnew;
        g = gnew;
        residual = stationarity(&x, &g, radius)?;
    }
    Ok(Some(Terminal {
        point: x,
        value: f,
        gradient: g,
        residual,
        iterations,
    }))
}

/// Start points: the apex, four identity scalings, then Wishart draws with seed `seed + i`.
pub fn start_points(dim: usize, radius: f64, starts: usize, seed: u64) -> Vec<SymMatrix> {
    let unit = SymMatrix::identity(dim) * (1.0 / (dim as f64).sqrt());
    let fractions = [0.1, 0.3, 0.6, 0.9];
    (0..starts.max(1))
        .map(|i| match i {
            0 => SymMatrix::zeros(dim),
            k if k <= fractions.len() => unit * (fractions[k - 1] * radius),
            k => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
                let w = wishart(dim, &mut rng);
                let scale: f64 = rng.random_range(0.05..0.9);
                let n = w.norm();
                if n > 0.0 {
                    w * (scale * radius / n)
                } else {
                    w
                }
            }
        })
        .collect()
}

/// Multi-start maximization over the PSD cone inside the ball of `radius`.
///
/// Starts are [`start_points`] followed by `extra`. The best value wins, with
/// ties broken by the lowest start index.
pub fn maximize_in_ball(
    dim: usize,
    objective: &Objective,
    radius: f64,
    options: &SolverOptions,
    extra: &[SymMatrix],
    formula: Formula,
) -> Result<Option<VariationalResult>> {
    let mut starts = start_points(dim, radius, options.starts, options.seed);
    starts.extend_from_slice(extra);
    let terminals: Vec<Option<Terminal>> = starts
        .par_iter()
        .map(|s| ascend(objective, s, radius, options.tol, options.max_iter))
        .collect::<Result<_>>()?;
    let mut best: Option<(usize, &Terminal)> = None;
    for (i, t) in terminals.iter().enumerate() {
        if let Some(t) = t {
            if best.is_none_or(|(_, b)| t.value > b.value) {
                best = Some((i, t));
            }
        }
    }
    let Some((best_index, best_terminal)) = best else {
        return Ok(None);
    };
    let tie = terminals.iter().flatten().any(|t| {
        t.value >= best_terminal.value - TIE_VALUE
            && (t.point - best_terminal.point).norm() > TIE_DISTANCE
    });
    Ok(Some(VariationalResult {
        value: best_terminal.value,
        maximizer: ConePoint::new(best_terminal.point)?,
        stationarity_residual: best_terminal.residual,
        starts: starts.len(),
        best_start_index: best_index,
        formula,
        radius,
        terminals: terminals
            .iter()
            .flatten()
            .map(|t| (t.value, t.point))
            .collect(),
        tie,
    }))
}

/// Maximizes in balls of doubling radius until the maximizer is interior, the
/// value stops changing, or the increments stop decreasing [`DIVERGENT_STREAK`] times.
pub fn maximize_expanding(
    dim: usize,
    objective: &Objective,
    initial_radius: f64,
    options: &SolverOptions,
    formula: Formula,
) -> Result<ConjugateOutcome> {
    if !(initial_radius > 0.0) || !initial_radius.is_finite() {
        return Err(Error::Invalid(format!("search radius {initial_radius}")));
    }
    let mut radius = initial_radius;
    let mut previous: Option<VariationalResult> = None;
    let mut last_increment: Option<f64> = None;
    let mut streak = 0;
    for _ in 0..MAX_DOUBLINGS {
        let extra: Vec<SymMatrix> = previous
            .as_ref()
            .map(|p| vec![*p.maximizer.matrix()])
            .unwrap_or_default();
        let Some(result) = maximize_in_ball(dim, objective, radius, options, &extra, formula)? else {
            return Err(Error::Numeric("objective is -inf on the whole search ball".into()));
        };
        if result.maximizer.matrix().norm() < radius * (1.0 - 1e-6) {
            return Ok(ConjugateOutcome::Finite(result));
        }
        if let Some(prev) = &previous {
            let increment = result.value - prev.value;
            if increment <= 1e-13 * (1.0 + result.value.abs()) {
                return Ok(ConjugateOutcome::Finite(result));
            }
            if let Some(last) = last_increment {
                streak = if increment >= last { streak + 1 } else { 0 };
                if streak >= DIVERGENT_STREAK {
                    return Ok(ConjugateOutcome::Divergent {
                        radius,
                        value: result.value,
                        increment,
                    });
                }
            }
            last_increment = Some(increment);
        }
        previous = Some(result);
        radius *= 2.0;
    }
    let prev = previous.expect("at least one round ran");
    Ok(ConjugateOutcome::Divergent {
        radius,
        value: prev.value,
        increment: last_increment.unwrap_or(f64::INFINITY),
    })
}

/// `g*(h) = sup_{h' PSD} { inner(h, h') - g(h') }`.
///
/// The first ball has radius `max(radius, |h| + lipschitz + 1)` and is doubled
/// as needed.
pub fn monotone_conjugate(
    g: &dyn ConeFunction,
    h: &SymMatrix,
    radius: f64,
    options: &SolverOptions,
) -> Result<ConjugateOutcome> {
    if h.dim() != g.dim() {
        return Err(Error::Dimension(format!(
            "h is {}x{} but {} acts on {}x{}",
            h.dim(),
            h.dim(),
            g.label(),
            g.dim(),
            g.dim()
        )));
    }
    let objective = |x: &SymMatrix| -> Result<Option<(f64, SymMatrix)>> {
        let (v, grad) = g.value_and_gradient(x)?;
        Ok(Some((h.dot(x) - v, *h - grad)))
    };
    if let Some(ceiling) = g.gradient_ceiling() {
        let excess = (*h - ceiling).eigh()?.values[h.dim() - 1];
        if excess > 1e-12 {
            return Ok(ConjugateOutcome::Divergent {
                radius: 0.0,
                value: f64::INFINITY,
                increment: excess,
            });
        }
    }
    let floor = h.norm() + g.lipschitz_bound().unwrap_or(0.0) + 1.0;
    maximize_expanding(g.dim(), &objective, radius.max(floor), options, Formula::Conjugate)
}

/// Memo table for a conjugate, keyed by the exact bits of the argument.
///
/// The inner solver is deterministic, so concurrent duplicate inserts agree.
#[derive(Default)]
struct ConjugateMemo {
    map: RwLock<HashMap<Vec<u64>, Memo>>,
}

#[derive(Clone, Copy)]
enum Memo {
    Finite { value: f64, maximizer: SymMatrix },
    Divergent,
}

impl ConjugateMemo {
    fn get_or_solve(
        &self,
        g: &dyn ConeFunction,
        h: &SymMatrix,
        options: &SolverOptions,
    ) -> Result<Memo> {
        let key: Vec<u64> = h.upper_triangle().iter().map(|v| v.to_bits()).collect();
        if let Some(m) = self.map.read().expect("memo lock").get(&key) {
            return Ok(*m);
        }
        let memo = match monotone_conjugate(g, h, 1.0, options)? {
            ConjugateOutcome::Finite(r) => Memo::Finite {
                value: r.value,
                maximizer: *r.maximizer.matrix(),
            },
            ConjugateOutcome::Divergent { .. } => Memo::Divergent,
        };
        let mut map = self.map.write().expect("memo lock");
        if map.len() < MEMO_CAP {
            map.insert(key, memo);
        }
        Ok(memo)
    }

    fn len(&self) -> usize {
        self.map.read().expect("memo lock").len()
    }
}

/// Evaluates the Hopf and Hopf-Lax formulas for one `psi` and one interaction,
/// sharing memoized conjugates across calls.
pub struct HopfSolver<P: ConeFunction> {
    psi: P,
    interaction: InteractionSpec,
    options: SolverOptions,
    inner: SolverOptions,
    psi_star: ConjugateMemo,
    h_star: ConjugateMemo,
    convex: bool,
}

impl<P: ConeFunction> HopfSolver<P> {
    pub fn new(psi: P, interaction: InteractionSpec, options: SolverOptions) -> Result<Self> {
        if psi.dim() != interaction.d() {
            return Err(Error::Dimension(format!(
                "psi acts on D = {} but the interaction has D = {}",
                psi.dim(),
                interaction.d()
            )));
        }
        let convex = convexity_probe(&interaction, 200, options.seed)?.passed();
        let inner = SolverOptions {
            starts: 1,
            ..options
        };
        Ok(HopfSolver {
            psi,
            interaction,
            options,
            inner,
            psi_star: ConjugateMemo::default(),
            h_star: ConjugateMemo::default(),
            convex,
        })
    }

    pub fn psi(&self) -> &P {
        &self.psi
    }

    pub fn interaction(&self) -> &InteractionSpec {
        &self.interaction
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    /// Whether the convexity probe of `H` passed (required for Hopf-Lax).
    pub fn convex(&self) -> bool {
        self.convex
    }

    /// Number of memoized `psi*` evaluations.
    pub fn memo_len(&self) -> usize {
        self.psi_star.len()
    }

    /// Radius `D sqrt(D) + 1` of the Hopf search ball.
    pub fn hopf_radius(&self) -> f64 {
        let d = self.psi.dim() as f64;
        d * d.sqrt() + 1.0
    }

    fn check(&self, t: f64, h: &ConePoint) -> Result<()> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("t must be finite and nonnegative, got {t}")));
        }
        if h.dim() != self.psi.dim() {
            return Err(Error::Dimension(format!("h is {}x{}", h.dim(), h.dim())));
        }
        Ok(())
    }

    /// `psi*(h')`, `None` when the sup diverges, with the maximizer.
    pub fn psi_star(&self, hp: &SymMatrix) -> Result<Option<(f64, SymMatrix)>> {
        Ok(match self.psi_star.get_or_solve(&self.psi, hp, &self.inner)? {
            Memo::Finite { value, maximizer } => Some((value, maximizer)),
            Memo::Divergent => None,
        })
    }

    /// `H*(p)` with its maximizer.
    pub fn h_star(&self, p: &SymMatrix) -> Result<(f64, SymMatrix)> {
        match self.h_star.get_or_solve(&self.interaction, p, &self.inner)? {
            Memo::Finite { value, maximizer } => Ok((value, maximizer)),
            Memo::Divergent => Err(Error::Numeric(format!(
                "conjugate of H diverges at {p:?}; H must grow superlinearly"
            ))),
        }
    }

    /// `sup_{h' PSD} { inner(h', h) - psi*(h') + t H(h') }`.
    pub fn hopf(&self, t: f64, h: &ConePoint) -> Result<VariationalResult> {
        self.check(t, h)?;
        let hm = *h.matrix();
        let objective = |hp: &SymMatrix| -> Result<Option<(f64, SymMatrix)>> {
            let Some((conj, argmax)) = self.psi_star(hp)? else {
                return Ok(None);
            };
            let (hv, hg) = if t > 0.0 {
                (h_value(&self.interaction, hp)?, h_grad(&self.interaction, hp)?)
            } else {
                (0.0, SymMatrix::zeros(hp.dim()))
            };
            // Envelope theorem: the gradient of psi* is its maximizer.
            Ok(Some((hp.dot(&hm) - conj + t * hv, hm - argmax + hg * t)))
        };
        maximize_in_ball(
            self.psi.dim(),
            &objective,
            self.hopf_radius(),
            &self.options,
            &[],
            Formula::Hopf,
        )?
        .ok_or_else(|| Error::Numeric("Hopf objective is -inf on the search ball".into()))
    }

    /// Hopf-Lax value in either form; `t = 0` returns `psi(h)` with maximizer 0.
    pub fn hopf_lax(&self, t: f64, h: &ConePoint, form: HopfLaxForm) -> Result<VariationalResult> {
        self.check(t, h)?;
        if !self.convex {
            return Err(Error::FormulaUnavailable(
                "Hopf-Lax needs a convex H and the convexity probe failed".into(),
            ));
        }
        let formula = match form {
            HopfLaxForm::Standard => Formula::HopfLax,
            HopfLaxForm::Scaled => Formula::HopfLaxScaled,
        };
        let d = self.psi.dim();
        if t == 0.0 {
            return Ok(VariationalResult {
                value: self.psi.value(h.matrix())?,
                maximizer: ConePoint::zero(d),
                stationarity_residual: 0.0,
                starts: 0,
                best_start_index: 0,
                formula,
                radius: 0.0,
                terminals: Vec::new(),
                tie: false,
            });
        }
        let hm = *h.matrix();
        let objective = |hp: &SymMatrix| -> Result<Option<(f64, SymMatrix)>> {
            Ok(Some(match form {
                HopfLaxForm::Standard => {
                    let (pv, pg) = self.psi.value_and_gradient(&(hm + *hp))?;
                    let (sv, sq) = self.h_star(&(*hp * (1.0 / t)))?;
                    (pv - t * sv, pg - sq)
                }
                HopfLaxForm::Scaled => {
                    let (pv, pg) = self.psi.value_and_gradient(&(hm + *hp * t))?;
                    let (sv, sq) = self.h_star(hp)?;
                    (pv - t * sv, (pg - sq) * t)
                }
            }))
        };
        let radius = match form {
            HopfLaxForm::Standard => t * self.hopf_radius(),
            HopfLaxForm::Scaled => self.hopf_radius(),
        };
        maximize_expanding(d, &objective, radius, &self.options, formula)?.finite()
    }

    pub fn value(&self, formula: Formula, t: f64, h: &ConePoint) -> Result<VariationalResult> {
        match formula {
            Formula::Hopf => self.hopf(t, h),
            Formula::HopfLax => self.hopf_lax(t, h, HopfLaxForm::Standard),
            Formula::HopfLaxScaled => self.hopf_lax(t, h, HopfLaxForm::Scaled),
            Formula::Conjugate => Err(Error::Invalid(
                "a conjugate is not a representation of f".into(),
            )),
        }
    }

    /// Finite-difference derivatives of `f` from the given formula.
    pub fn derivatives(
        &self,
        formula: Formula,
        t: f64,
        h: &ConePoint,
        step: f64,
    ) -> Result<Derivatives> {
        let d = self.psi.dim();
        let f0 = self.value(formula, t, h)?.value;
        let mut grad_h = SymMatrix::zeros(d);
        let mut gap: f64 = 0.0;
        let mut two_sided = true;
        for e in basis(d)? {
            let fp = self.value(formula, t, &ConePoint::new(*h.matrix() + e * step)?)?.value;
            let forward = (fp - f0) / step;
            let slope = match ConePoint::new(*h.matrix() - e * step) {
                Ok(back) => {
                    let fm = self.value(formula, t, &back)?.value;
                    let backward = (f0 - fm) / step;
                    gap = gap.max((forward - backward).abs());
                    0.5 * (forward + backward)
                }
                Err(_) => {
                    two_sided = false;
                    forward
                }
            };
            grad_h += e * (slope / e.dot(&e));
        }
        let fp = self.value(formula, t + step, h)?.value;
        let forward = (fp - f0) / step;
        let d_t = if t > step {
            let fm = self.value(formula, t - step, h)?.value;
            let backward = (f0 - fm) / step;
            gap = gap.max((forward - backward).abs());
            0.5 * (forward + backward)
        } else {
            two_sided = false;
            forward
        };
        Ok(Derivatives {
            value: f0,
            grad_h,
            d_t,
            quotient_gap: gap,
            two_sided,
        })
    }

    /// Checks a maximizer against finite-difference derivatives of `f`.
    pub fn diagnostics(
        &self,
        result: &VariationalResult,
        t: f64,
        h: &ConePoint,
        fd_step: f64,
    ) -> Result<MaximizerDiagnostics> {
        let der = self.derivatives(result.formula, t, h, fd_step)?;
        let hj_residual = (der.d_t - h_value(&self.interaction, &der.grad_h)?).abs();
        let m = *result.maximizer.matrix();
        let (a1, a2, b1) = match result.formula {
            Formula::Hopf => (
                Some((m - der.grad_h).norm()),
                Some((h_value(&self.interaction, &m)? - der.d_t).abs()),
                None,
            ),
            Formula::HopfLax => {
                let g = self.psi.gradient(&(*h.matrix() + m))?;
                (None, None, Some((g - der.grad_h).norm()))
            }
            Formula::HopfLaxScaled => {
                let g = self.psi.gradient(&(*h.matrix() + m * t))?;
                (None, None, Some((g - der.grad_h).norm()))
            }
            Formula::Conjugate => (None, None, None),
        };
        Ok(MaximizerDiagnostics {
            differentiable: der.two_sided && der.quotient_gap < SCREEN_TOL && !result.tie,
            derivatives: der,
            hj_residual,
            a1,
            a2,
            b1,
            tie: result.tie,
        })
    }
}

/// One-sided quotients must agree within this for a point to count as differentiable.
pub const SCREEN_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Derivatives {
    pub value: f64,
    pub grad_h: SymMatrix,
    pub d_t: f64,
    /// Largest gap between forward and backward quotients.
    pub quotient_gap: f64,
    /// Every stencil was two-sided.
    pub two_sided: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaximizerDiagnostics {
    pub derivatives: Derivatives,
    /// `|d_t f - H(grad_h f)|`.
    pub hj_residual: f64,
    /// `|h* - grad_h f|` (Hopf).
    pub a1: Option<f64>,
    /// `|H(h*) - d_t f|` (Hopf).
    pub a2: Option<f64>,
    /// `|grad psi(h + h_lozenge) - grad_h f|` (Hopf-Lax; `h + t h_lozenge` when scaled).
    pub b1: Option<f64>,
    /// Multi-start found distinct maximizers with equal values.
    pub tie: bool,
    /// Two-sided stencils, agreeing one-sided quotients and no tie.
    pub differentiable: bool,
}

/// One-shot Hopf value; see [`HopfSolver::hopf`].
pub fn hopf_value<P: ConeFunction>(
    psi: P,
    spec: &InteractionSpec,
    t: f64,
    h: &ConePoint,
    options: &SolverOptions,
) -> Result<VariationalResult> {
    HopfSolver::new(psi, spec.clone(), *options)?.hopf(t, h)
}

/// One-shot Hopf-Lax value; see [`HopfSolver::hopf_lax`].
pub fn hopf_lax_value<P: ConeFunction>(
    psi: P,
    spec: &InteractionSpec,
    t: f64,
    h: &ConePoint,
    form: HopfLaxForm,
    options: &SolverOptions,
) -> Result<VariationalResult> {
    HopfSolver::new(psi, spec.clone(), *options)?.hopf_lax(t, h, form)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PriorSpec;

    fn scalar(v: f64) -> SymMatrix {
        SymMatrix::diag(&[v])
    }

    fn quadratic() -> FnCone<'static> {
        FnCone::new(1, "half square", |h| Ok(0.5 * h.get(0, 0).powi(2)))
            .with_gradient(|h| Ok(*h))
    }

    #[test]
    fn conjugate_of_half_square() {
        let opts = SolverOptions::default();
        let r = monotone_conjugate(&quadratic(), &scalar(0.7), 1.0, &opts)
            .unwrap()
            .finite()
            .unwrap();
        // 1-d grid oracle over x in [0, 10] at step 1e-4.
        let oracle = (0..=100_000)
            .map(|k| {
                let x = k as f64 * 1e-4;
                0.7 * x - 0.5 * x * x
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((r.value - oracle).abs() < 1e-6);
        assert!((r.value - 0.245).abs() < 1e-12);
        assert!((r.maximizer.matrix().get(0, 0) - 0.7).abs() < 1e-9);
        // Negative arguments: the monotone conjugate is attained at the apex.
        let r = monotone_conjugate(&quadratic(), &scalar(-0.4), 1.0, &opts)
            .unwrap()
            .finite()
            .unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn conjugate_without_gradient_uses_differences() {
        let g = FnCone::new(1, "half square", |h| Ok(0.5 * h.get(0, 0).powi(2)));
        let r = monotone_conjugate(&g, &scalar(0.7), 1.0, &SolverOptions::default())
            .unwrap()
            .finite()
            .unwrap();
        assert!((r.value - 0.245).abs() < 1e-9);
    }

    #[test]
    fn linear_conjugate_divergence_sentinel() {
        let opts = SolverOptions::default();
        let g = FnCone::linear(scalar(0.5));
        let low = monotone_conjugate(&g, &scalar(0.3), 1.0, &opts).unwrap();
        assert_eq!(low.finite().unwrap().value, 0.0);
        let high = monotone_conjugate(&g, &scalar(0.8), 1.0, &opts).unwrap();
        assert!(high.is_divergent());
    }

    #[test]
    fn conjugate_is_convex() {
        let opts = SolverOptions::default();
        let g = FnCone::new(2, "quartic", |h| Ok(h.dot(h).powi(2) + 0.3 * h.trace()))
            .with_gradient(|h| Ok(*h * (4.0 * h.dot(h)) + SymMatrix::identity(2) * 0.3));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = wishart(2, &mut rng) - SymMatrix::identity(2) * 0.3;
            let b = wishart(2, &mut rng);
            let mid = (a + b) * 0.5;
            let f = |x: &SymMatrix| {
                monotone_conjugate(&g, x, 1.0, &opts).unwrap().finite().unwrap().value
            };
            assert!(f(&mid) <= 0.5 * (f(&a) + f(&b)) + 1e-9);
        }
    }

    #[test]
    fn h_star_matches_closed_form() {
        // H(q) = q^2 on the cone: H*(p) = max(p, 0)^2 / 4.
        let solver = HopfSolver::new(
            PsiOracle::new(&PriorSpec::rademacher(), 32).unwrap(),
            InteractionSpec::scalar_quadratic(),
            SolverOptions::default(),
        )
        .unwrap();
        for p in [-0.5, 0.0, 0.3, 1.7] {
            let (v, q) = solver.h_star(&scalar(p)).unwrap();
            let expect = p.max(0.0f64).powi(2) / 4.0;
            assert!((v - expect).abs() < 1e-12, "{p}: {v} vs {expect}");
            assert!((q.get(0, 0) - p.max(0.0) / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn feasible_projection() {
        let x = SymMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let p = project_feasible(&x, 2.0).unwrap();
        assert!((p.get(0, 0) - 2.0).abs() < 1e-15 && p.get(1, 1).abs() < 1e-15);
        let starts = start_points(2, 1.0, 16, 7);
        assert_eq!(starts.len(), 16);
        assert_eq!(starts[0], SymMatrix::zeros(2));
        assert!(starts.iter().all(|s| s.min_eigenvalue().unwrap() >= -1e-12 && s.norm() <= 1.0));
        assert_eq!(starts, start_points(2, 1.0, 16, 7));
    }

    #[test]
    fn hopf_at_time_zero_is_psi() {
        let oracle = PsiOracle::new(&PriorSpec::rademacher(), 64).unwrap();
        let solver = HopfSolver::new(
            oracle.clone(),
            InteractionSpec::scalar_quadratic(),
            SolverOptions {
                starts: 4,
                ..SolverOptions::default()
            },
        )
        .unwrap();
        for h in [0.1, 0.5] {
            let hp = ConePoint::new(scalar(h)).unwrap();
            let r = solver.hopf(0.0, &hp).unwrap();
            let psi = oracle.value(&scalar(h)).unwrap();
            assert!((r.value - psi).abs() < 1e-6, "{} vs {psi}", r.value);
            let lax = solver.hopf_lax(0.0, &hp, HopfLaxForm::Standard).unwrap();
            assert_eq!(lax.value, psi);
        }
    }
}
