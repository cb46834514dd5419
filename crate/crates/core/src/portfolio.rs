//! Parametric Markowitz value function
//!
//!   α(φ) = min over the decision set of ( -μᵀθ + (φ/2) θᵀΣθ ),
//!
//! solved exactly on the simplex by active-set enumeration (closed-form
//! equality-constrained KKT system per support, feasibility- and
//! dual-checked) and by exhaustive minimum on finite decision sets. Also
//! provides the envelope derivative α'(φ) = ½ θ̂ᵀΣθ̂, the slope bounds
//! ω ≤ α' ≤ L, the explicit three-branch decomposition for n = 2, and the
//! monotone inverse φ = α⁻¹(ψ).

use crate::error::{Error, Result};

/// Feasible set of portfolio weights.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionSet {
    /// {θ ≥ 0, 1ᵀθ = 1}.
    Simplex,
    /// A finite list of weight vectors, each on the simplex.
    Discrete(Vec<Vec<f64>>),
}

/// Mean returns, covariance and the decision set of one allocation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioProblem {
    pub mean_returns: Vec<f64>,
    /// Row-major symmetric positive-definite covariance (per year).
    pub covariance: Vec<Vec<f64>>,
    pub decision_set: DecisionSet,
}

/// Optimum of the parametric problem at one φ.
#[derive(Debug, Clone)]
pub struct AlphaSolution {
    pub alpha: f64,
    pub weights: Vec<f64>,
    /// Indices with strictly positive weight (simplex) or the chosen point
    /// index (discrete).
    pub support: Vec<usize>,
    /// Support as a bitmask, for compact export.
    pub support_mask: u64,
}

impl PortfolioProblem {
    pub fn n_assets(&self) -> usize {
        self.mean_returns.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_assets();
        if n == 0 {
            return Err(Error::Parameter("empty mean-return vector".into()));
        }
        if self.covariance.len() != n || self.covariance.iter().any(|r| r.len() != n) {
            return Err(Error::Parameter("covariance shape mismatch".into()));
        }
        if self.mean_returns.iter().any(|m| !m.is_finite()) {
            return Err(Error::Parameter("non-finite mean return".into()));
        }
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                scale = scale.max(self.covariance[i][j].abs());
            }
        }
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (self.covariance[i][j], self.covariance[j][i]);
                if !a.is_finite() || (a - b).abs() > 1e-12 * scale.max(1.0) {
                    return Err(Error::Parameter("covariance must be finite symmetric".into()));
                }
            }
        }
        if !cholesky_spd(&self.covariance) {
            return Err(Error::Parameter("covariance must be positive definite".into()));
        }
        if let DecisionSet::Discrete(points) = &self.decision_set {
            if points.is_empty() {
                return Err(Error::Parameter("discrete decision set is empty".into()));
            }
            for p in points {
                if p.len() != n
                    || p.iter().any(|&w| !(w >= -1e-12))
                    || (p.iter().sum::<f64>() - 1.0).abs() > 1e-10
                {
                    return Err(Error::Parameter(
                        "discrete points must lie on the simplex".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn quad_form(&self, theta: &[f64]) -> f64 {
        let n = self.n_assets();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += theta[i] * self.covariance[i][j] * theta[j];
            }
        }
        acc
    }

    fn objective(&self, theta: &[f64], phi: f64) -> f64 {
        let ret: f64 = self.mean_returns.iter().zip(theta).map(|(m, t)| m * t).sum();
        -ret + 0.5 * phi * self.quad_form(theta)
    }
}

/// True when the matrix admits a Cholesky factor with positive pivots.
fn cholesky_spd(a: &[Vec<f64>]) -> bool {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return false;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    true
}

/// Dense solve with partial pivoting for the small KKT systems.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        b[col] /= a[col][col];
        for row in 0..col {
            b[row] -= a[row][col] * b[col];
        }
    }
    Some(b)
}

const ACTIVE_SET_LIMIT: usize = 20;

/// Value and minimizer of α(φ); exact active-set enumeration on the simplex
/// (up to 20 assets, projected gradient beyond), exhaustive minimum on
/// discrete sets with ties broken toward the smaller slope ½θᵀΣθ.
pub fn alpha_value(problem: &PortfolioProblem, phi: f64) -> Result<AlphaSolution> {
    problem.validate()?;
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::Parameter(format!("phi must be > 0, got {phi}")));
    }
    match &problem.decision_set {
        DecisionSet::Discrete(points) => {
            let mut best: Option<(f64, f64, usize)> = None; // (objective, slope, index)
            for (idx, p) in points.iter().enumerate() {
                let obj = problem.objective(p, phi);
                let slope = 0.5 * problem.quad_form(p);
                let better = match &best {
                    None => true,
                    Some((bo, bs, _)) => {
                        obj < bo - 1e-14 * bo.abs().max(1.0)
                            || ((obj - bo).abs() <= 1e-14 * bo.abs().max(1.0) && slope < *bs)
                    }
                };
                if better {
                    best = Some((obj, slope, idx));
                }
            }
            let (alpha, _, idx) = best.unwrap();
            Ok(AlphaSolution {
                alpha,
                weights: points[idx].clone(),
                support: vec![idx],
                support_mask: 1u64 << (idx.min(63)),
            })
        }
        DecisionSet::Simplex => {
            let n = problem.n_assets();
            if n > ACTIVE_SET_LIMIT {
                return projected_gradient_solution(problem, phi);
            }
            active_set_simplex(problem, phi)
        }
    }
}

fn active_set_simplex(problem: &PortfolioProblem, phi: f64) -> Result<AlphaSolution> {
    let n = problem.n_assets();
    let mu = &problem.mean_returns;
    let sigma = &problem.covariance;
    let mut best: Option<AlphaSolution> = None;
    for mask in 1u64..(1u64 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = support.len();
        // KKT system on the support: φ Σ_AA θ + λ 1 = μ_A, 1ᵀθ = 1.
        let mut a = vec![vec![0.0; k + 1]; k + 1];
        let mut b = vec![0.0; k + 1];
        for (r, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                a[r][c] = phi * sigma[i][j];
            }
            a[r][k] = 1.0;
            a[k][r] = 1.0;
            b[r] = mu[i];
        }
        b[k] = 1.0;
        let Some(sol) = solve_dense(a, b) else { continue };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let lambda = sol[k];
        // Primal feasibility on the support.
        if sol[..k].iter().any(|&t| t < -1e-12) {
            continue;
        }
        let mut theta = vec![0.0; n];
        for (r, &i) in support.iter().enumerate() {
            theta[i] = sol[r].max(0.0);
        }
        // Dual feasibility off the support: η_i = -μ_i + φ(Σθ)_i + λ ≥ 0.
        let mut dual_ok = true;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                continue;
            }
            let sigma_theta_i: f64 = (0..n).map(|j| sigma[i][j] * theta[j]).sum();
            if -mu[i] + phi * sigma_theta_i + lambda < -1e-10 {
                dual_ok = false;
                break;
            }
        }
        if !dual_ok {
            continue;
        }
        let alpha = problem.objective(&theta, phi);
        let keep = match &best {
            None => true,
            Some(b) => alpha < b.alpha,
        };
        if keep {
            let support_pos: Vec<usize> =
                (0..n).filter(|&i| theta[i] > 1e-12).collect();
            let mut pos_mask = 0u64;
            for &i in &support_pos {
                pos_mask |= 1 << i;
            }
            best = Some(AlphaSolution {
                alpha,
                weights: theta,
                support: support_pos,
                support_mask: pos_mask,
            });
        }
    }
    best.ok_or_else(|| {
        Error::NonConvergence {
            context: "no KKT-feasible support found".into(),
            residual: f64::NAN,
            iterations: 1 << n,
        }
    })
}

/// Euclidean projection onto the simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if k + 1 == n || sorted[k + 1] <= candidate {
            if u > candidate {
                tau = candidate;
            }
            if k + 1 < n && sorted[k + 1] > candidate {
                continue;
            }
            tau = candidate;
            break;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

fn lambda_max(sigma: &[Vec<f64>]) -> f64 {
    let n = sigma.len();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lam = 0.0;
    for _ in 0..200 {
        let mut w = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                w[i] += sigma[i][j] * v[j];
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lam = norm;
        for i in 0..n {
            v[i] = w[i] / norm;
        }
    }
    lam
}

/// Projected-gradient minimization; the fallback beyond the active-set size
/// limit and the independent oracle used by the tests.
pub fn projected_gradient_minimize(
    problem: &PortfolioProblem,
    phi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    problem.validate()?;
    let n = problem.n_assets();
    let step = 1.0 / (phi * lambda_max(&problem.covariance)).max(1e-12);
    let mut theta = vec![1.0 / n as f64; n];
    for _ in 0..max_iter {
        let mut grad = vec![0.0; n];
        for i in 0..n {
            grad[i] = -problem.mean_returns[i];
            for j in 0..n {
                grad[i] += phi * problem.covariance[i][j] * theta[j];
            }
        }
        let moved: Vec<f64> =
            theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
        let next = project_simplex(&moved);
        let shift: f64 = next
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        theta = next;
        if shift / step <= tol {
            return Ok(theta);
        }
    }
    Ok(theta)
}

fn projected_gradient_solution(problem: &PortfolioProblem, phi: f64) -> Result<AlphaSolution> {
    let theta = projected_gradient_minimize(problem, phi, 1e-12, 200_000)?;
    let support: Vec<usize> = (0..theta.len()).filter(|&i| theta[i] > 1e-12).collect();
    let mut mask = 0u64;
    for &i in &support {
        mask |= 1 << (i.min(63));
    }
    Ok(AlphaSolution {
        alpha: problem.objective(&theta, phi),
        weights: theta,
        support,
        support_mask: mask,
    })
}

/// Envelope derivative α'(φ) = ½ θ̂(φ)ᵀ Σ θ̂(φ).
pub fn alpha_derivative(problem: &PortfolioProblem, phi: f64) -> Result<f64> {
    let sol = alpha_value(problem, phi)?;
    Ok(0.5 * problem.quad_form(&sol.weights))
}

/// Slope bounds of α: ω = min ½θᵀΣθ over the simplex (a QP at μ = 0),
/// L = max over vertices.
pub fn lipschitz_bounds(problem: &PortfolioProblem) -> Result<(f64, f64)> {
    problem.validate()?;
    let n = problem.n_assets();
    let zero_mu = PortfolioProblem {
        mean_returns: vec![0.0; n],
        covariance: problem.covariance.clone(),
        decision_set: DecisionSet::Simplex,
    };
    let omega = alpha_value(&zero_mu, 1.0)?.alpha; // min ½θΣθ
    let l = (0..n).map(|i| 0.5 * problem.covariance[i][i]).fold(f64::MIN, f64::max);
    Ok((omega, l))
}

/// Three-branch decomposition of α for two assets on the simplex:
/// linear below `phi_lower` (vertex), `A - B/φ + Cφ` between the breakpoints,
/// linear above `phi_upper`. Open sides are None (the interior solution
/// persists to 0 or ∞); `degenerate` marks a = 0 (interior for all φ, B = 0).
#[derive(Debug, Clone, Copy)]
pub struct BreakpointsN2 {
    pub phi_lower: Option<f64>,
    pub phi_upper: Option<f64>,
    pub a_coef: f64,
    pub b_coef: f64,
    pub c_coef: f64,
    /// (E, D) of the active line below phi_lower.
    pub lower_line: Option<(f64, f64)>,
    /// (E, D) of the active line above phi_upper.
    pub upper_line: Option<(f64, f64)>,
    pub degenerate: bool,
}

impl BreakpointsN2 {
    /// α(φ) from the branch decomposition (middle branch shown explicitly).
    pub fn eval(&self, phi: f64) -> f64 {
        if let (Some(pl), Some((e, d))) = (self.phi_lower, self.lower_line) {
            if phi <= pl {
                return e * phi + d;
            }
        }
        if let (Some(pu), Some((e, d))) = (self.phi_upper, self.upper_line) {
            if phi >= pu {
                return e * phi + d;
            }
        }
        self.a_coef - self.b_coef / phi + self.c_coef * phi
    }
}

/// Interior solution on the weight line θ = (s, 1-s):
/// s*(φ) = (Δμ/q)/φ + (Σ22 - Σ12)/q with q = Σ11 - 2Σ12 + Σ22, giving the
/// middle branch α = A - B/φ + Cφ with
/// A = -μ2 - Δμ(Σ22-Σ12)/q, B = Δμ²/(2q) ≥ 0, C = det Σ/(2q) > 0, and
/// C¹-matching lines E± = B/(φ*±)² + C at the breakpoints.
pub fn breakpoints_n2(problem: &PortfolioProblem) -> Result<BreakpointsN2> {
    problem.validate()?;
    if problem.n_assets() != 2 || problem.decision_set != DecisionSet::Simplex {
        return Err(Error::Parameter("breakpoints_n2 needs a 2-asset simplex problem".into()));
    }
    let (mu1, mu2) = (problem.mean_returns[0], problem.mean_returns[1]);
    let (s11, s12, s22) =
        (problem.covariance[0][0], problem.covariance[0][1], problem.covariance[1][1]);
    let q = s11 - 2.0 * s12 + s22;
    if q <= 1e-14 {
        return Err(Error::Parameter("degenerate covariance: q = Σ11-2Σ12+Σ22 ≈ 0".into()));
    }
    let dmu = mu1 - mu2;
    let a = dmu / q;
    let c0 = (s22 - s12) / q;
    let a_coef = -mu2 - dmu * c0;
    let b_coef = dmu * dmu / (2.0 * q);
    let c_coef = (s11 * s22 - s12 * s12) / (2.0 * q);
    if dmu == 0.0 {
        // Interior for every φ when c0 ∈ (0,1); B = 0 and the branch
        // structure degenerates to a single line A + Cφ.
        return Ok(BreakpointsN2 {
            phi_lower: None,
            phi_upper: None,
            a_coef,
            b_coef,
            c_coef,
            lower_line: None,
            upper_line: None,
            degenerate: true,
        });
    }
    // s*(φ) crosses 1 at φ = a/(1-c0) and 0 at φ = -a/c0; only positive
    // crossings are real breakpoints.
    let cross1 = a / (1.0 - c0);
    let cross0 = -a / c0;
    let vertex1 = (0.5 * s11, -mu1); // θ = (1, 0)
    let vertex2 = (0.5 * s22, -mu2); // θ = (0, 1)
    let mut lower: Option<(f64, (f64, f64))> = None;
    let mut upper: Option<(f64, (f64, f64))> = None;
    for (phi_cross, vertex) in [(cross1, vertex1), (cross0, vertex2)] {
        if !(phi_cross.is_finite() && phi_cross > 0.0) {
            continue;
        }
        // Just below the crossing the interior s* sits outside [0,1] on this
        // vertex side iff a and the boundary agree; classify by evaluating.
        let probe = |phi: f64| a / phi + c0;
        let before = probe(phi_cross * 0.999_999);
        if !(0.0..=1.0).contains(&before) {
            lower = Some((phi_cross, vertex));
        } else {
            upper = Some((phi_cross, vertex));
        }
    }
    Ok(BreakpointsN2 {
        phi_lower: lower.map(|(p, _)| p),
        phi_upper: upper.map(|(p, _)| p),
        a_coef,
        b_coef,
        c_coef,
        lower_line: lower.map(|(_, l)| l),
        upper_line: upper.map(|(_, l)| l),
        degenerate: false,
    })
}

/// Monotone inversion: the φ in [phi_lo, phi_hi] with α(φ) = target, found by
/// bisection (α is strictly increasing with slope ≥ ω > 0).
pub fn inverse_alpha(
    problem: &PortfolioProblem,
    target: f64,
    phi_lo: f64,
    phi_hi: f64,
) -> Result<f64> {
    if !(phi_lo > 0.0 && phi_hi > phi_lo) {
        return Err(Error::Parameter("need 0 < phi_lo < phi_hi".into()));
    }
    let f_lo = alpha_value(problem, phi_lo)?.alpha;
    let f_hi = alpha_value(problem, phi_hi)?.alpha;
    if target < f_lo - 1e-12 || target > f_hi + 1e-12 {
        return Err(Error::OutOfRange(format!(
            "target {target} outside [α({phi_lo}), α({phi_hi})] = [{f_lo}, {f_hi}]"
        )));
    }
    let (mut lo, mut hi) = (phi_lo, phi_hi);
    // Bisect to φ-resolution, not just value residual: a flat α (slope near
    // ω << 1) needs the interval itself collapsed for a tight round trip.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-12 * mid.max(1.0) {
            break;
        }
        if alpha_value(problem, mid)?.alpha < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi = 0.5 * (lo + hi);
    let val = alpha_value(problem, phi)?.alpha;
    if (val - target).abs() > 1e-10 {
        return Err(Error::NonConvergence {
            context: "inverse_alpha bisection".into(),
            residual: (val - target).abs(),
            iterations: 200,
        });
    }
    Ok(phi)
}

/// KKT residuals of a simplex solution: (stationarity on the support,
/// dual feasibility minimum, weight-negativity, budget residual).
pub fn kkt_residuals(problem: &PortfolioProblem, phi: f64, sol: &AlphaSolution) -> (f64, f64, f64, f64) {
    let n = problem.n_assets();
    let theta = &sol.weights;
    let mut sigma_theta = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            sigma_theta[i] += problem.covariance[i][j] * theta[j];
        }
    }
    // λ from the support average of μ_i - φ(Σθ)_i.
    let support: Vec<usize> = (0..n).filter(|&i| theta[i] > 1e-9).collect();
    let lambda = support
        .iter()
        .map(|&i| problem.mean_returns[i] - phi * sigma_theta[i])
        .sum::<f64>()
        / support.len().max(1) as f64;
    let mut stationarity: f64 = 0.0;
    let mut dual_min: f64 = f64::INFINITY;
    for i in 0..n {
        let eta = -problem.mean_returns[i] + phi * sigma_theta[i] + lambda;
        if theta[i] > 1e-9 {
            stationarity = stationarity.max(eta.abs());
        } else {
            dual_min = dual_min.min(eta);
        }
    }
    if !dual_min.is_finite() {
        dual_min = 0.0;
    }
    let neg = theta.iter().fold(0.0f64, |acc, &t| acc.max(-t));
    let budget = (theta.iter().sum::<f64>() - 1.0).abs();
    (stationarity, dual_min, neg, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn symmetric2() -> PortfolioProblem {
        PortfolioProblem {
            mean_returns: vec![0.1, 0.1],
            covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            decision_set: DecisionSet::Simplex,
        }
    }

    /// Stock index and bond data of the two-asset pension example:
    /// σs = 0.3, σb = 0.01, correlation -0.15, μ = (0.1, 0.05).
    pub(crate) fn pension2() -> PortfolioProblem {
        let (ss, sb, rho) = (0.3, 0.01, -0.15);
        PortfolioProblem {
            mean_returns: vec![0.1, 0.05],
            covariance: vec![
                vec![ss * ss, rho * ss * sb],
                vec![rho * ss * sb, sb * sb],
            ],
            decision_set: DecisionSet::Simplex,
        }
    }

    fn random_spd(n: usize, rng: &mut StdRng) -> PortfolioProblem {
        loop {
            let mut factor = vec![vec![0.0; n]; n];
            for row in factor.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let mut cov = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += factor[i][k] * factor[j][k];
                    }
                    cov[i][j] = acc + if i == j { 0.05 } else { 0.0 };
                }
            }
            let mu = (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let p = PortfolioProblem {
                mean_returns: mu,
                covariance: cov,
                decision_set: DecisionSet::Simplex,
            };
            if p.validate().is_ok() {
                return p;
            }
        }
    }

    #[test]
    fn symmetric_case_closed_form() {
        let p = symmetric2();
        for &phi in &[0.3, 1.0, 5.0] {
            let sol = alpha_value(&p, phi).unwrap();
            assert!((sol.weights[0] - 0.5).abs() < 1e-12);
            assert!((sol.weights[1] - 0.5).abs() < 1e-12);
            assert!((sol.alpha - (-0.1 + phi / 4.0)).abs() < 1e-12);
            assert!((alpha_derivative(&p, phi).unwrap() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_three_fund_lines() {
        let base = pension2();
        let points = vec![vec![0.8, 0.2], vec![0.5, 0.5], vec![0.0, 1.0]];
        let p = PortfolioProblem {
            decision_set: DecisionSet::Discrete(points.clone()),
            ..base.clone()
        };
        for &phi in &[0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0] {
            let sol = alpha_value(&p, phi).unwrap();
            // α equals the minimum of the lines E^i φ + D^i exactly.
            let best_line = points
                .iter()
                .map(|pt| {
                    let e = 0.5 * base.quad_form(pt);
                    let d = -(pt[0] * 0.1 + pt[1] * 0.05);
                    e * phi + d
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(sol.alpha, best_line);
        }
    }

    #[test]
    fn discrete_tie_breaks_to_smaller_slope() {
        // Two points engineered to produce the same objective at phi = 1.
        let p = PortfolioProblem {
            mean_returns: vec![0.55, 0.05],
            covariance: vec![vec![1.0, 0.0], vec![0.0, 0.0001]],
            decision_set: DecisionSet::Discrete(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        };
        // line 1: 0.5 φ - 0.55 ; line 2: 0.00005 φ - 0.05; equal at φ ≈ 1.0.
        let phi_star = 0.5 / (0.5 - 0.00005);
        let sol = alpha_value(&p, phi_star).unwrap();
        assert_eq!(sol.support, vec![1], "tie must pick the flatter line");
    }

    #[test]
    fn matches_projected_gradient_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for n in [2usize, 3, 5] {
            for _ in 0..5 {
                let p = random_spd(n, &mut rng);
                let phi = rng.gen_range(0.2..8.0);
                let active = alpha_value(&p, phi).unwrap();
                let pg = projected_gradient_minimize(&p, phi, 1e-10, 1_000_000).unwrap();
                let pg_obj = p.objective(&pg, phi);
                assert!(
                    active.alpha <= pg_obj + 1e-9,
                    "active-set {} worse than PG {}",
                    active.alpha,
                    pg_obj
                );
                assert!(
                    (active.alpha - pg_obj).abs() < 1e-8,
                    "n={n} phi={phi}: {} vs {}",
                    active.alpha,
                    pg_obj
                );
            }
        }
    }

    #[test]
    fn kkt_residuals_tight() {
        let mut rng = StdRng::seed_from_u64(11);
        for n in [2usize, 3, 5] {
            for _ in 0..10 {
                let p = random_spd(n, &mut rng);
                let phi = rng.gen_range(0.1..10.0);
                let sol = alpha_value(&p, phi).unwrap();
                let (stat, dual, neg, budget) = kkt_residuals(&p, phi, &sol);
                assert!(stat < 1e-10, "stationarity {stat}");
                assert!(dual > -1e-10, "dual {dual}");
                assert!(neg < 1e-12);
                assert!(budget < 1e-12);
            }
        }
    }

    #[test]
    fn envelope_matches_finite_difference() {
        let p = pension2();
        let h = 1e-5;
        for &phi in &[0.2, 0.9, 3.0, 12.0] {
            // Skip φ adjacent to a support change.
            let s_lo = alpha_value(&p, phi - h).unwrap().support_mask;
            let s_hi = alpha_value(&p, phi + h).unwrap().support_mask;
            if s_lo != s_hi {
                continue;
            }
            let fd = (alpha_value(&p, phi + h).unwrap().alpha
                - alpha_value(&p, phi - h).unwrap().alpha)
                / (2.0 * h);
            let env = alpha_derivative(&p, phi).unwrap();
            assert!((fd - env).abs() < 1e-6, "phi {phi}: fd {fd} vs envelope {env}");
        }
    }

    #[test]
    fn slope_within_lipschitz_bounds() {
        let p = pension2();
        let (omega, l) = lipschitz_bounds(&p).unwrap();
        assert!(omega > 0.0 && omega <= l);
        for k in 1..60 {
            let phi = 0.1 * k as f64;
            let slope = alpha_derivative(&p, phi).unwrap();
            assert!(slope >= omega - 1e-12 && slope <= l + 1e-12, "phi {phi} slope {slope}");
        }
    }

    #[test]
    fn lipschitz_bounds_vs_grid_search() {
        let p = pension2();
        let (omega, l) = lipschitz_bounds(&p).unwrap();
        let mut grid_min = f64::INFINITY;
        let mut vertex_max: f64 = f64::MIN;
        let steps = 10_000;
        for k in 0..=steps {
            let s = k as f64 / steps as f64;
            let theta = [s, 1.0 - s];
            let half_var = 0.5 * p.quad_form(&theta);
            grid_min = grid_min.min(half_var);
        }
        for i in 0..2 {
            vertex_max = vertex_max.max(0.5 * p.covariance[i][i]);
        }
        assert!((omega - grid_min).abs() < 1e-6, "omega {omega} vs grid {grid_min}");
        assert!((l - vertex_max).abs() < 1e-14);
        assert!(omega <= l);
    }

    #[test]
    fn symmetric_breakpoints_degenerate() {
        let bp = breakpoints_n2(&symmetric2()).unwrap();
        assert!(bp.degenerate);
        assert_eq!(bp.b_coef, 0.0);
        assert!(bp.phi_lower.is_none() && bp.phi_upper.is_none());
        for &phi in &[0.5, 2.0] {
            assert!((bp.eval(phi) - alpha_value(&symmetric2(), phi).unwrap().alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn pension_breakpoints_match_bisection() {
        let p = pension2();
        let bp = breakpoints_n2(&p).unwrap();
        let pl = bp.phi_lower.expect("low-φ vertex branch exists");
        // The stock weight leaves 1 exactly at phi_lower: bisect on θ̂_0 = 1.
        let stock_weight = |phi: f64| alpha_value(&p, phi).unwrap().weights[0];
        let (mut lo, mut hi) = (1e-3, 10.0);
        assert!(stock_weight(lo) > 1.0 - 1e-9 && stock_weight(hi) < 1.0 - 1e-6);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if stock_weight(mid) > 1.0 - 1e-12 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((0.5 * (lo + hi) - pl).abs() < 1e-6, "bisection {} vs formula {pl}", 0.5 * (lo + hi));
        // No upper breakpoint for this data: the interior persists as φ → ∞.
        assert!(bp.phi_upper.is_none());
        // Branch values agree with the engine on both sides.
        for &phi in &[0.5 * pl, pl * 1.5, pl * 4.0] {
            assert!((bp.eval(phi) - alpha_value(&p, phi).unwrap().alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn breakpoint_is_c1() {
        let p = pension2();
        let bp = breakpoints_n2(&p).unwrap();
        let pl = bp.phi_lower.unwrap();
        let h = 1e-7;
        let left = (bp.eval(pl) - bp.eval(pl - h)) / h;
        let right = (bp.eval(pl + h) - bp.eval(pl)) / h;
        assert!((left - right).abs() < 1e-6, "C1 gap {}", (left - right).abs());
        // E± = B/φ*² + C identity.
        let (e_low, _) = bp.lower_line.unwrap();
        assert!((e_low - (bp.b_coef / (pl * pl) + bp.c_coef)).abs() < 1e-12);
    }

    #[test]
    fn inverse_alpha_examples() {
        let p = symmetric2();
        // α(φ) = -0.1 + φ/4: ψ = 0 at φ = 0.4.
        let phi = inverse_alpha(&p, 0.0, 1e-3, 10.0).unwrap();
        assert!((phi - 0.4).abs() < 1e-8);
        assert!(matches!(inverse_alpha(&p, -5.0, 1e-3, 10.0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn inverse_alpha_round_trip() {
        let p = pension2();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let phi = rng.gen_range(0.05..20.0);
            let alpha = alpha_value(&p, phi).unwrap().alpha;
            let back = inverse_alpha(&p, alpha, 1e-3, 40.0).unwrap();
            assert!((back - phi).abs() < 1e-8, "{phi} -> {alpha} -> {back}");
        }
    }

    #[test]
    fn scaling_invariance() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..10 {
            let p = random_spd(3, &mut rng);
            let c = rng.gen_range(0.5..4.0);
            let scaled = PortfolioProblem {
                mean_returns: p.mean_returns.iter().map(|m| c * m).collect(),
                covariance: p
                    .covariance
                    .iter()
                    .map(|r| r.iter().map(|v| c * v).collect())
                    .collect(),
                decision_set: DecisionSet::Simplex,
            };
            let phi = rng.gen_range(0.3..5.0);
            let a = alpha_value(&p, phi).unwrap();
            let b = alpha_value(&scaled, phi).unwrap();
            assert!((b.alpha - c * a.alpha).abs() < 1e-10 * c.max(1.0));
            for (wa, wb) in a.weights.iter().zip(&b.weights) {
                assert!((wa - wb).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_bad_problems() {
        let p = PortfolioProblem {
            mean_returns: vec![0.1, 0.2],
            covariance: vec![vec![1.0, 2.0], vec![2.0, 1.0]], // indefinite
            decision_set: DecisionSet::Simplex,
        };
        assert!(p.validate().is_err());
        assert!(alpha_value(&symmetric2(), -1.0).is_err());
        assert!(alpha_value(&symmetric2(), 0.0).is_err());
    }

    #[test]
    fn simplex_projection_is_projection() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let n = rng.gen_range(2..7);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = project_simplex(&v);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(p.iter().all(|&x| x >= -1e-12));
        }
    }
}
