//! Empirical-likelihood ambiguity sets over reweighted empirical distributions.
//!
//! The feasible set for `m` sources with `n_p` observations each is
//!
//! ```text
//! U = { w : w_p ∈ Δ(n_p) for every p,  -2 Σ_p Σ_j ln(n_p w_pj) <= radius }
//! ```
//!
//! [`max_linear`] maximizes `Σ c_pj w_pj` over `U`. At an optimum with the
//! radius constraint active the weights take the form
//! `w_pj = 2θ / (ν_p - c_pj)`, so with `τ = 1/(2θ)` and `d_pj = max_j c_pj - c_pj`
//!
//! ```text
//! w_pj = 1 / (r_p + τ d_pj),   Σ_j w_pj = 1,   r_p ∈ [1, n_p].
//! ```
//!
//! For fixed `τ` each `r_p` is a monotone scalar root, and the EL statistic
//! `g(τ)` is increasing in `τ`, so the whole program reduces to nested scalar
//! root finding. [`el_log_ratio`] solves the profile program by Newton's
//! method on its concave dual.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{cholesky, chi2_quantile, SquareMatrix, StatsError};

/// Coefficient spread below which a source's objective is treated as constant.
const DEGENERATE_SPREAD: f64 = 1e-12;
const MAX_OUTER: usize = 200;
const MAX_INNER: usize = 200;

#[derive(Debug, Error)]
pub enum ElError {
    #[error("invalid source sizes: {0}")]
    InvalidSizes(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("radius must be finite and nonnegative, got {0}")]
    InvalidRadius(f64),
    #[error("solver did not converge after {} iterations (kkt residual {:.3e})", .0.iterations, .0.kkt_residual)]
    NotConverged(Box<ElSolveReport>),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Number of sources and observations per source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSizes {
    counts: Vec<usize>,
}

impl SourceSizes {
    pub fn new(counts: Vec<usize>) -> Result<Self, ElError> {
        if counts.is_empty() {
            return Err(ElError::InvalidSizes("at least one source is required".into()));
        }
        if let Some(p) = counts.iter().position(|&n| n < 2) {
            return Err(ElError::InvalidSizes(format!(
                "source {p} has {} observations, need at least 2",
                counts[p]
            )));
        }
        Ok(Self { counts })
    }

    pub fn num_sources(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, p: usize) -> usize {
        self.counts[p]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Average sample size `n = (1/m) Σ n_p`.
    pub fn average(&self) -> f64 {
        self.total() as f64 / self.counts.len() as f64
    }

    fn check_shape<T>(&self, blocks: &[Vec<T>], what: &str) -> Result<(), ElError> {
        if blocks.len() != self.counts.len() {
            return Err(ElError::Shape(format!(
                "{what}: expected {} sources, got {}",
                self.counts.len(),
                blocks.len()
            )));
        }
        for (p, (b, &n)) in blocks.iter().zip(&self.counts).enumerate() {
            if b.len() != n {
                return Err(ElError::Shape(format!("{what}: source {p} has length {}, expected {n}", b.len())));
            }
        }
        Ok(())
    }
}

/// The EL ambiguity set: sizes plus the radius of the log-likelihood ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySpec {
    pub sizes: SourceSizes,
    pub radius: f64,
    /// Confidence parameter the radius was derived from, when there is one.
    pub alpha: Option<f64>,
}

impl AmbiguitySpec {
    pub fn new(sizes: SourceSizes, radius: f64) -> Result<Self, ElError> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(ElError::InvalidRadius(radius));
        }
        Ok(Self {
            sizes,
            radius,
            alpha: None,
        })
    }

    /// Radius `χ²_{dof, 1-alpha}`.
    pub fn chi_square(sizes: SourceSizes, dof: u32, alpha: f64) -> Result<Self, ElError> {
        let radius = chi2_quantile(dof, 1.0 - alpha)?;
        Ok(Self {
            sizes,
            radius,
            alpha: Some(alpha),
        })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }
}

/// Per-source probability weights over the observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    blocks: Vec<Vec<f64>>,
}

impl WeightVector {
    pub fn new(blocks: Vec<Vec<f64>>) -> Self {
        Self { blocks }
    }

    pub fn uniform(sizes: &SourceSizes) -> Self {
        Self {
            blocks: sizes.counts.iter().map(|&n| vec![1.0 / n as f64; n]).collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn block(&self, p: usize) -> &[f64] {
        &self.blocks[p]
    }

    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        self.blocks
    }

    /// `-2 Σ_p Σ_j ln(n_p w_pj)`; infinite if any weight is zero.
    pub fn el_statistic(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let n = b.len() as f64;
                b.iter()
                    .map(|&w| if w > 0.0 { -2.0 * (n * w).ln() } else { f64::INFINITY })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Largest violation of nonnegativity or unit block sums.
    pub fn simplex_residual(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let neg = b.iter().fold(0.0f64, |m, &w| m.max(-w));
                neg.max((b.iter().sum::<f64>() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, radius: f64) -> bool {
        self.simplex_residual() <= 1e-9 && self.el_statistic() <= radius + 1e-7
    }

    /// Whether `l/n_p <= w_pj <= u/n_p` holds up to a relative tolerance.
    pub fn within_box(&self, lower: f64, upper: f64, rel_tol: f64) -> bool {
        self.blocks.iter().all(|b| {
            let n = b.len() as f64;
            b.iter()
                .all(|&w| n * w >= lower * (1.0 - rel_tol) && n * w <= upper * (1.0 + rel_tol))
        })
    }

    /// `Σ_p Σ_j c_pj w_pj`.
    pub fn dot(&self, coeffs: &[Vec<f64>]) -> f64 {
        self.blocks
            .iter()
            .zip(coeffs)
            .map(|(w, c)| w.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }
}

/// Outcome of [`max_linear`], including the dual certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElSolveReport {
    pub value: f64,
    pub weights: WeightVector,
    /// Multiplier θ of the radius constraint. `None` when the feasible set is
    /// a single point (radius zero); `Some(0.0)` when the objective is constant
    /// and the constraint is inactive.
    pub theta: Option<f64>,
    /// Per-source simplex multipliers ν_p.
    pub normalizers: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Dual bound minus primal value, `θ (radius - g(w))`.
    pub duality_gap: f64,
}

/// Roots `l <= 1 <= u` of `x · exp(1 + radius/2 - x) = 1`. Every member of the
/// ambiguity set satisfies `l/n_p <= w_pj <= u/n_p`.
pub fn weight_bounds(spec: &AmbiguitySpec) -> (f64, f64) {
    weight_bounds_for_radius(spec.radius)
}

pub fn weight_bounds_for_radius(radius: f64) -> (f64, f64) {
    // equivalent form: x - ln x = K with K = 1 + radius/2
    let k = 1.0 + radius.max(0.0) / 2.0;
    if radius <= 0.0 {
        return (1.0, 1.0);
    }
    let f = |x: f64| x - x.ln() - k;
    let solve = |mut lo: f64, mut hi: f64, decreasing: bool| {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let above = f(mid) > 0.0;
            if above == decreasing {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * hi {
                break;
            }
        }
        let mut x = 0.5 * (lo + hi);
        // polish with Newton on f, f' = 1 - 1/x
        for _ in 0..3 {
            let d = 1.0 - 1.0 / x;
            if d.abs() < 1e-300 {
                break;
            }
            let next = x - f(x) / d;
            if next > lo.min(hi) * 0.5 && next.is_finite() {
                x = next;
            }
        }
        x
    };
    let lower = solve((-k).exp(), 1.0, true);
    let upper = solve(1.0, 2.0 * k, false);
    (lower, upper)
}

struct Block {
    cmax: f64,
    gaps: Vec<f64>,
    spread: f64,
}

impl Block {
    fn new(c: &[f64]) -> Self {
        let cmax = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cmin = c.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            cmax,
            gaps: c.iter().map(|&v| cmax - v).collect(),
            spread: cmax - cmin,
        }
    }

    fn degenerate(&self) -> bool {
        self.spread < DEGENERATE_SPREAD
    }

    /// Solves `Σ_j 1/(r + τ d_j) = 1` for `r ∈ [1, n]`.
    ///
    /// The left side is decreasing and convex in `r`, so Newton iterates
    /// started at a point with nonnegative residual increase monotonically to
    /// the root.
    fn normalizer(&self, tau: f64) -> f64 {
        let n = self.gaps.len() as f64;
        let mut r = (n - tau * self.spread).max(1.0);
        for _ in 0..MAX_INNER {
            let (mut h, mut dh) = (-1.0, 0.0);
            for &d in &self.gaps {
                let inv = 1.0 / (r + tau * d);
                h += inv;
                dh += inv * inv;
            }
            if h <= 0.0 {
                break;
            }
            let step = h / dh;
            r = (r + step).min(n);
            if step <= 1e-15 * r {
                break;
            }
        }
        r
    }
}

struct BlockState {
    r: f64,
    w: Vec<f64>,
}

struct Sweep {
    blocks: Vec<BlockState>,
    g: f64,
    dg: f64,
}

fn sweep(blocks: &[Block], tau: f64) -> Sweep {
    let mut g = 0.0;
    let mut dg = 0.0;
    let states = blocks
        .iter()
        .map(|b| {
            let r = b.normalizer(tau);
            let mut w: Vec<f64> = b.gaps.iter().map(|&d| 1.0 / (r + tau * d)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let n = w.len() as f64;
            let (mut wd, mut w2d, mut w2) = (0.0, 0.0, 0.0);
            for (&wj, &d) in w.iter().zip(&b.gaps) {
                g -= 2.0 * (n * wj.max(1e-300)).ln();
                wd += wj * d;
                w2d += wj * wj * d;
                w2 += wj * wj;
            }
            dg += 2.0 * (wd - w2d / w2);
            BlockState { r, w }
        })
        .collect();
    Sweep { blocks: states, g, dg }
}

/// Maximize `Σ_p Σ_j c_pj w_pj` over the ambiguity set.
///
/// On failure to converge the best iterate is returned inside
/// [`ElError::NotConverged`].
pub fn max_linear(spec: &AmbiguitySpec, coeffs: &[Vec<f64>]) -> Result<ElSolveReport, ElError> {
    spec.sizes.check_shape(coeffs, "coefficients")?;
    if let Some((p, _)) = coeffs.iter().enumerate().find(|(_, b)| b.iter().any(|v| !v.is_finite())) {
        return Err(ElError::Shape(format!("coefficients of source {p} are not finite")));
    }
    if !(spec.radius >= 0.0) || !spec.radius.is_finite() {
        return Err(ElError::InvalidRadius(spec.radius));
    }
    let blocks: Vec<Block> = coeffs.iter().map(|c| Block::new(c)).collect();
    let radius = spec.radius;

    let uniform_report = |theta: Option<f64>| {
        let weights = WeightVector::uniform(&spec.sizes);
        let value = weights.dot(coeffs);
        let normalizers = coeffs
            .iter()
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        ElSolveReport {
            value,
            weights,
            theta,
            normalizers,
            iterations: 0,
            kkt_residual: 0.0,
            duality_gap: 0.0,
        }
    };
    if radius == 0.0 {
        return Ok(uniform_report(None));
    }
    if blocks.iter().all(Block::degenerate) {
        return Ok(uniform_report(Some(0.0)));
    }

    // g(τ) ≈ τ² Σ_p Σ_j (d_pj - d̄_p)² / n_p² for small τ
    let curvature: f64 = blocks
        .iter()
        .map(|b| {
            let n = b.gaps.len() as f64;
            let mean = b.gaps.iter().sum::<f64>() / n;
            b.gaps.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n * n)
        })
        .sum();
    let target = radius.ln();
    let resid = |s: &Sweep| s.g.max(1e-300).ln() - target;

    let mut t = 0.5 * (radius / curvature).ln();
    let mut cur = sweep(&blocks, t.exp());
    let mut iterations = 1;

    // bracket the root of ln g(e^t) = ln radius
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut step = 1.0;
    loop {
        let r = resid(&cur);
        if r <= 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if lo.is_finite() && hi.is_finite() {
            break;
        }
        if iterations > MAX_OUTER {
            break;
        }
        t += if r <= 0.0 { step } else { -step };
        step *= 2.0;
        cur = sweep(&blocks, t.exp());
        iterations += 1;
    }
    // best feasible iterate (largest g not exceeding the radius)
    let mut best: Option<(f64, f64)> = None;
    let mut note_feasible = |t: f64, s: &Sweep| {
        if s.g <= radius && best.is_none_or(|(_, g)| s.g > g) {
            best = Some((t, s.g));
        }
    };
    note_feasible(t, &cur);

    let mut converged = false;
    while iterations < MAX_OUTER {
        let r = resid(&cur);
        if (cur.g - radius).abs() <= 1e-13 * radius.max(1.0) || hi - lo <= 1e-15 * (1.0 + t.abs()) {
            converged = true;
            break;
        }
        if r <= 0.0 {
            lo = lo.max(t);
        } else {
            hi = hi.min(t);
        }
        let tau = t.exp();
        let slope = tau * cur.dg / cur.g.max(1e-300);
        let newton = t - r / slope;
        t = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        cur = sweep(&blocks, t.exp());
        iterations += 1;
        note_feasible(t, &cur);
    }

    // prefer an iterate that is feasible by construction
    if let Some((tb, gb)) = best {
        if (radius - gb) <= 1e-9 * radius.max(1.0) && cur.g > radius {
            t = tb;
            cur = sweep(&blocks, t.exp());
        }
    }

    let tau = t.exp();
    let theta = 1.0 / (2.0 * tau);
    let mut value = 0.0;
    let mut stationarity = 0.0f64;
    let mut simplex = 0.0f64;
    let mut normalizers = Vec::with_capacity(blocks.len());
    for (b, st) in blocks.iter().zip(&cur.blocks) {
        value += b.cmax - st.w.iter().zip(&b.gaps).map(|(w, d)| w * d).sum::<f64>();
        for (&w, &d) in st.w.iter().zip(&b.gaps) {
            stationarity = stationarity.max((w * (st.r + tau * d) - 1.0).abs());
        }
        simplex = simplex.max((st.w.iter().sum::<f64>() - 1.0).abs());
        normalizers.push(b.cmax + st.r / tau);
    }
    let duality_gap = theta * (radius - cur.g);
    let complementarity = (cur.g - radius).abs() / radius.max(1.0);
    let kkt_residual = stationarity
        .max(simplex)
        .max(complementarity)
        .max(duality_gap.abs() / (1.0 + value.abs()));

    let report = ElSolveReport {
        value,
        weights: WeightVector::new(cur.blocks.into_iter().map(|s| s.w).collect()),
        theta: Some(theta),
        normalizers,
        iterations,
        kkt_residual,
        duality_gap,
    };
    if converged && kkt_residual <= 1e-6 {
        Ok(report)
    } else {
        Err(ElError::NotConverged(Box::new(report)))
    }
}

/// Result of the profile EL program at a candidate mean.
#[derive(Clone, Debug, PartialEq)]
pub enum ElRatio {
    /// `statistic = -2 ln R(μ)` with the optimal weights.
    Finite { statistic: f64, weights: WeightVector },
    /// `μ` lies outside the set of attainable means.
    Infeasible,
}

impl ElRatio {
    pub fn statistic(&self) -> Option<f64> {
        match self {
            ElRatio::Finite { statistic, .. } => Some(*statistic),
            ElRatio::Infeasible => None,
        }
    }
}

/// `-2 ln R(μ)`: minimize `-2 Σ Σ ln(n_p w_pj)` subject to
/// `Σ_p Σ_j Y_pj w_pj = μ` and per-source simplices.
///
/// `observations[p][j]` is the vector `Y_pj`; all share the dimension of `mu`.
pub fn el_log_ratio(observations: &[Vec<Vec<f64>>], mu: &[f64]) -> Result<ElRatio, ElError> {
    let sizes = SourceSizes::new(observations.iter().map(Vec::len).collect())?;
    let q = mu.len();
    for (p, src) in observations.iter().enumerate() {
        if src.iter().any(|y| y.len() != q) {
            return Err(ElError::Shape(format!("source {p} has observations of dimension != {q}")));
        }
    }
    let m = sizes.num_sources();
    let total = sizes.total() as f64;

    // center each source at its mean and scale each coordinate; the statistic
    // is invariant under both
    let means: Vec<Vec<f64>> = observations
        .iter()
        .map(|src| {
            let n = src.len() as f64;
            (0..q).map(|k| src.iter().map(|y| y[k]).sum::<f64>() / n).collect()
        })
        .collect();
    let mut keep = Vec::new();
    let mut scale = Vec::new();
    for k in 0..q {
        let ss: f64 = observations
            .iter()
            .zip(&means)
            .map(|(src, mean)| src.iter().map(|y| (y[k] - mean[k]).powi(2)).sum::<f64>())
            .sum();
        let sd = (ss / total).sqrt();
        let shift: f64 = means.iter().map(|mean| mean[k]).sum();
        let target = mu[k] - shift;
        if sd <= 1e-300 || sd <= 1e-14 * shift.abs() {
            // coordinate is constant in every source: attainable only exactly
            if target.abs() > 1e-12 * (1.0 + shift.abs()) {
                return Ok(ElRatio::Infeasible);
            }
            continue;
        }
        keep.push(k);
        scale.push((sd, target / sd));
    }
    let d = keep.len();
    let z: Vec<Vec<Vec<f64>>> = observations
        .iter()
        .zip(&means)
        .map(|(src, mean)| {
            src.iter()
                .map(|y| keep.iter().zip(&scale).map(|(&k, (sd, _))| (y[k] - mean[k]) / sd).collect())
                .collect()
        })
        .collect();
    let zeta: Vec<f64> = scale.iter().map(|(_, t)| *t).collect();

    if d == 1 {
        let lo: f64 = z.iter().map(|s| s.iter().map(|y| y[0]).fold(f64::INFINITY, f64::min)).sum();
        let hi: f64 = z.iter().map(|s| s.iter().map(|y| y[0]).fold(f64::NEG_INFINITY, f64::max)).sum();
        if !(zeta[0] > lo && zeta[0] < hi) {
            return Ok(ElRatio::Infeasible);
        }
    }

    // dual variables: λ ∈ R^d, κ ∈ R^m; a_pj = κ_p + λᵀ z_pj, w_pj = 1 / a_pj
    let dim = d + m;
    let mut lambda = vec![0.0; d];
    let mut kappa: Vec<f64> = sizes.counts().iter().map(|&n| n as f64).collect();

    let dual = |lambda: &[f64], kappa: &[f64]| -> Option<f64> {
        let mut v = -lambda.iter().zip(&zeta).map(|(a, b)| a * b).sum::<f64>() - kappa.iter().sum::<f64>();
        for (p, src) in z.iter().enumerate() {
            for y in src {
                let a = kappa[p] + lambda.iter().zip(y).map(|(l, yk)| l * yk).sum::<f64>();
                if !(a > 0.0) {
                    return None;
                }
                v += a.ln();
            }
        }
        Some(v)
    };

    let mut value = dual(&lambda, &kappa).expect("uniform weights are interior");
    let mut converged = false;
    for _ in 0..500 {
        let mut grad = vec![0.0; dim];
        let mut hess = SquareMatrix::zeros(dim);
        for (k, zk) in zeta.iter().enumerate() {
            grad[k] = -zk;
        }
        for (p, src) in z.iter().enumerate() {
            grad[d + p] -= 1.0;
            for y in src {
                let a = kappa[p] + lambda.iter().zip(y).map(|(l, yk)| l * yk).sum::<f64>();
                let inv = 1.0 / a;
                let inv2 = inv * inv;
                for k in 0..d {
                    grad[k] += y[k] * inv;
                    for l in 0..=k {
                        hess[(k, l)] += y[k] * y[l] * inv2;
                    }
                    hess[(d + p, k)] += y[k] * inv2;
                }
                grad[d + p] += inv;
                hess[(d + p, d + p)] += inv2;
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                hess[(i, j)] = hess[(j, i)];
            }
        }
        // Newton direction for the concave dual: (-H) Δ = grad
        let l = match cholesky(&hess) {
            Ok(l) => l,
            Err(_) => {
                let mut ridge = hess.clone();
                for i in 0..dim {
                    ridge[(i, i)] += 1e-12 * (1.0 + hess[(i, i)]);
                }
                cholesky(&ridge)?
            }
        };
        let delta = solve_lower_upper(&l, &grad);
        let decrement: f64 = grad.iter().zip(&delta).map(|(g, s)| g * s).sum();
        // below this the dual value cannot resolve further ascent
        if decrement < 1e-22 * total + 1e-14 * (1.0 + value.abs()) {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand_l: Vec<f64> = lambda.iter().zip(&delta).map(|(x, s)| x + step * s).collect();
            let cand_k: Vec<f64> = kappa.iter().zip(&delta[d..]).map(|(x, s)| x + step * s).collect();
            if let Some(v) = dual(&cand_l, &cand_k) {
                if v > value && v >= value + 1e-4 * step * decrement {
                    lambda = cand_l;
                    kappa = cand_k;
                    value = v;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        let norm = lambda.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e8 {
            return Ok(ElRatio::Infeasible);
        }
        if !accepted {
            converged = decrement < 1e-12 * total;
            break;
        }
    }
    if !converged {
        let norm = lambda.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e4 {
            return Ok(ElRatio::Infeasible);
        }
        return Err(ElError::Shape("profile EL dual did not converge".into()));
    }

    let mut statistic = 0.0;
    let blocks: Vec<Vec<f64>> = z
        .iter()
        .enumerate()
        .map(|(p, src)| {
            let n = src.len() as f64;
            let mut w: Vec<f64> = src
                .iter()
                .map(|y| {
                    let a = kappa[p] + lambda.iter().zip(y).map(|(l, yk)| l * yk).sum::<f64>();
                    statistic += 2.0 * (a / n).ln();
                    1.0 / a
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            w
        })
        .collect();
    Ok(ElRatio::Finite {
        statistic: statistic.max(0.0),
        weights: WeightVector::new(blocks),
    })
}

/// Solve `L Lᵀ x = b`.
fn solve_lower_upper(l: &SquareMatrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        y[i] = (b[i] - s) / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l[(k, i)] * x[k]).sum();
        x[i] = (y[i] - s) / l[(i, i)];
    }
    x
}

/// Support points of the confidence region `{Σ Y_pj w_pj : w ∈ U}`: for each
/// direction `a`, the attained mean at the maximizer of `aᵀ(attained mean)`.
pub fn region_boundary(
    observations: &[Vec<Vec<f64>>],
    radius: f64,
    directions: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, ElError> {
    let sizes = SourceSizes::new(observations.iter().map(Vec::len).collect())?;
    let q = observations[0].first().map_or(0, Vec::len);
    if observations.iter().flatten().any(|y| y.len() != q) {
        return Err(ElError::Shape("observations must share one dimension".into()));
    }
    let spec = AmbiguitySpec::new(sizes, radius)?;
    directions
        .iter()
        .map(|a| {
            if a.len() != q {
                return Err(ElError::Shape(format!("direction has dimension {}, expected {q}", a.len())));
            }
            let coeffs: Vec<Vec<f64>> = observations
                .iter()
                .map(|src| src.iter().map(|y| y.iter().zip(a).map(|(u, v)| u * v).sum()).collect())
                .collect();
            let report = max_linear(&spec, &coeffs)?;
            let mut point = vec![0.0; q];
            for (src, w) in observations.iter().zip(report.weights.blocks()) {
                for (y, &wj) in src.iter().zip(w) {
                    for k in 0..q {
                        point[k] += y[k] * wj;
                    }
                }
            }
            Ok(point)
        })
        .collect()
}

/// `count` unit vectors evenly spaced on the circle.
pub fn circle_directions(count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            vec![a.cos(), a.sin()]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::StreamKey;

    fn spec(counts: Vec<usize>, radius: f64) -> AmbiguitySpec {
        AmbiguitySpec::new(SourceSizes::new(counts).unwrap(), radius).unwrap()
    }

    #[test]
    fn sizes_validation() {
        assert!(SourceSizes::new(vec![]).is_err());
        assert!(SourceSizes::new(vec![3, 1]).is_err());
        let s = SourceSizes::new(vec![2, 4]).unwrap();
        assert_eq!(s.total(), 6);
        assert_eq!(s.average(), 3.0);
    }

    #[test]
    fn negative_radius_rejected() {
        assert!(AmbiguitySpec::new(SourceSizes::new(vec![3]).unwrap(), -1.0).is_err());
    }

    #[test]
    fn weight_bounds_zero_radius() {
        assert_eq!(weight_bounds_for_radius(0.0), (1.0, 1.0));
    }

    #[test]
    fn weight_bounds_match_bisection_oracle() {
        let radius = 4.605;
        let eq = |x: f64| x * (1.0 + radius / 2.0 - x).exp() - 1.0;
        // independent oracle: bisection on the original equation on each side of 1
        let bisect = |mut a: f64, mut b: f64| {
            for _ in 0..300 {
                let m = 0.5 * (a + b);
                if eq(a).signum() == eq(m).signum() {
                    a = m
                } else {
                    b = m
                }
            }
            0.5 * (a + b)
        };
        let (l, u) = weight_bounds_for_radius(radius);
        assert!((l - bisect(1e-12, 1.0)).abs() < 1e-10);
        assert!((u - bisect(1.0, 100.0)).abs() < 1e-10);
        assert!(l < 1.0 && 1.0 < u);
        assert!(eq(l).abs() < 1e-10 && eq(u).abs() < 1e-10);
    }

    #[test]
    fn weight_bounds_large_radius() {
        let (l, u) = weight_bounds_for_radius(100.0);
        // u - ln u = 51 gives u ≈ 55.0; bounded above by 2(1 + radius/2)
        assert!(u < 2.0 * (1.0 + 50.0));
        assert!((u - u.ln() - 51.0).abs() < 1e-9);
        assert!(l > 0.0 && (l - l.ln() - 51.0).abs() < 1e-9);
    }

    #[test]
    fn constant_coefficients_give_uniform() {
        let s = spec(vec![3, 4], 4.605);
        let coeffs = vec![vec![2.0; 3], vec![-1.5; 4]];
        let r = max_linear(&s, &coeffs).unwrap();
        assert!((r.value - 0.5).abs() < 1e-12);
        assert_eq!(r.weights, WeightVector::uniform(&s.sizes));
    }

    #[test]
    fn two_point_closed_form() {
        for &b in &[0.1, 1.0, 2.706, 4.605, 10.0] {
            let r = max_linear(&spec(vec![2], b), &[vec![1.0, 0.0]]).unwrap();
            let expected = 0.5 * (1.0 + (1.0 - (-b / 2.0).exp()).sqrt());
            assert!((r.value - expected).abs() < 1e-10, "b={b}: {} vs {expected}", r.value);
        }
    }

    #[test]
    fn zero_radius_is_uniform() {
        let coeffs = vec![vec![1.0, 5.0, -2.0]];
        let r = max_linear(&spec(vec![3], 0.0), &coeffs).unwrap();
        assert!((r.value - 4.0 / 3.0).abs() < 1e-12);
        assert!(r.theta.is_none());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = spec(vec![3, 3], 1.0);
        assert!(matches!(max_linear(&s, &[vec![1.0; 3]]), Err(ElError::Shape(_))));
        assert!(matches!(max_linear(&s, &[vec![1.0; 3], vec![1.0; 2]]), Err(ElError::Shape(_))));
    }

    #[test]
    fn kkt_form_holds() {
        let mut rng = StreamKey::new(4).stream();
        let coeffs: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.uniform() * 10.0 - 5.0).collect()).collect();
        let r = max_linear(&spec(vec![5, 5, 5], 2.706), &coeffs).unwrap();
        let theta = r.theta.unwrap();
        assert!(theta > 0.0);
        assert!(r.kkt_residual <= 1e-6);
        for ((w, c), nu) in r.weights.blocks().iter().zip(&coeffs).zip(&r.normalizers) {
            let cmax = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(*nu > cmax);
            for (wj, cj) in w.iter().zip(c) {
                assert!((wj - 2.0 * theta / (nu - cj)).abs() < 1e-9);
            }
        }
        assert!((r.weights.el_statistic() - 2.706).abs() < 1e-9);
        assert!(r.duality_gap >= -1e-9);
    }

    #[test]
    fn shift_invariance() {
        let coeffs = vec![vec![0.3, -1.0, 2.0, 0.7], vec![5.0, 4.0, 4.5]];
        let s = spec(vec![4, 3], 3.0);
        let base = max_linear(&s, &coeffs).unwrap();
        let shifted: Vec<Vec<f64>> = vec![
            coeffs[0].iter().map(|c| c + 10.0).collect(),
            coeffs[1].iter().map(|c| c - 3.0).collect(),
        ];
        let moved = max_linear(&s, &shifted).unwrap();
        assert!((moved.value - base.value - 7.0).abs() < 1e-9);
        for (a, b) in base.weights.blocks().iter().flatten().zip(moved.weights.blocks().iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ties_at_the_maximum() {
        let coeffs = vec![vec![1.0, 1.0, 0.0, -1.0]];
        let r = max_linear(&spec(vec![4], 4.0), &coeffs).unwrap();
        let w = r.weights.block(0);
        assert!((w[0] - w[1]).abs() < 1e-12);
        assert!(r.weights.is_feasible(4.0));
    }

    #[test]
    fn huge_radius_concentrates() {
        let coeffs = vec![vec![1.0, 0.0, 0.0]];
        let r = max_linear(&spec(vec![3], 200.0), &coeffs).unwrap();
        assert!(r.value > 0.999);
        assert!(r.weights.is_feasible(200.0));
    }

    fn one_sample_oracle(y: &[f64], mu: f64) -> f64 {
        // classical one-sample EL: w_j = 1/(n(1 + λ(y_j - μ))), Σ w_j (y_j - μ) = 0
        let n = y.len() as f64;
        let f = |lam: f64| y.iter().map(|v| (v - mu) / (1.0 + lam * (v - mu))).sum::<f64>();
        let lo_lim = y.iter().filter(|v| **v > mu).map(|v| -1.0 / (v - mu)).fold(f64::NEG_INFINITY, f64::max);
        let hi_lim = y.iter().filter(|v| **v < mu).map(|v| -1.0 / (v - mu)).fold(f64::INFINITY, f64::min);
        let (mut a, mut b) = (lo_lim + 1e-15, hi_lim - 1e-15);
        for _ in 0..300 {
            let m = 0.5 * (a + b);
            if f(m) > 0.0 {
                a = m
            } else {
                b = m
            }
        }
        let lam = 0.5 * (a + b);
        let _ = n;
        y.iter().map(|v| 2.0 * (1.0 + lam * (v - mu)).ln()).sum()
    }

    #[test]
    fn el_ratio_at_sample_mean_is_zero() {
        let obs = vec![
            vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]],
            vec![vec![2.0, 2.0], vec![-2.0, 1.0], vec![0.0, 0.0], vec![4.0, 1.0]],
        ];
        let mu = vec![1.5 + 1.0, 0.5 + 1.0];
        let r = el_log_ratio(&obs, &mu).unwrap();
        assert!(r.statistic().unwrap().abs() < 1e-10);
    }

    #[test]
    fn el_ratio_infeasible_outside_hull() {
        let obs = vec![vec![vec![0.0], vec![1.0], vec![2.0]], vec![vec![0.0], vec![1.0]]];
        assert_eq!(el_log_ratio(&obs, &[3.5]).unwrap(), ElRatio::Infeasible);
        assert_eq!(el_log_ratio(&obs, &[3.0]).unwrap(), ElRatio::Infeasible);
        let obs2 = vec![vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]];
        assert_eq!(el_log_ratio(&obs2, &[0.8, 0.8]).unwrap(), ElRatio::Infeasible);
    }

    #[test]
    fn el_ratio_one_sample_oracle() {
        let y = [0.0, 1.0, 2.0];
        let obs = vec![y.iter().map(|v| vec![*v]).collect()];
        let got = el_log_ratio(&obs, &[0.8]).unwrap().statistic().unwrap();
        let expected = one_sample_oracle(&y, 0.8);
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn el_ratio_consistent_with_max_linear() {
        // weights returned by max_linear attain a mean whose profile statistic
        // cannot exceed the radius
        let mut rng = StreamKey::new(8).stream();
        let obs: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| (0..6).map(|_| vec![rng.uniform(), rng.uniform()]).collect())
            .collect();
        let radius = 4.605;
        for a in circle_directions(8) {
            let coeffs: Vec<Vec<f64>> =
                obs.iter().map(|s| s.iter().map(|y| y[0] * a[0] + y[1] * a[1]).collect()).collect();
            let r = max_linear(&spec(vec![6, 6], radius), &coeffs).unwrap();
            let mut mu = vec![0.0; 2];
            for (s, w) in obs.iter().zip(r.weights.blocks()) {
                for (y, wj) in s.iter().zip(w) {
                    mu[0] += y[0] * wj;
                    mu[1] += y[1] * wj;
                }
            }
            let stat = el_log_ratio(&obs, &mu).unwrap().statistic().unwrap();
            assert!(stat <= radius + 1e-6, "stat {stat}");
        }
    }

    #[test]
    fn boundary_degenerates_at_zero_radius() {
        let obs = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]]];
        let pts = region_boundary(&obs, 0.0, &circle_directions(6)).unwrap();
        for p in pts {
            assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_support_point_matches_value() {
        let obs = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0], vec![-1.0, 0.5]]];
        let pts = region_boundary(&obs, 2.0, &[vec![1.0, 0.0]]).unwrap();
        let coeffs = vec![obs[0].iter().map(|y| y[0]).collect::<Vec<_>>()];
        let r = max_linear(&spec(vec![4], 2.0), &coeffs).unwrap();
        assert!((pts[0][0] - r.value).abs() < 1e-12);
    }
}
