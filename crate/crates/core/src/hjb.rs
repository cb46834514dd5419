//! Finite-volume solver for the Riccati-transformed dynamic portfolio
//! equation
//!
//!   ∂_τ φ - ∂²_x α(x, φ) = -∂_x( α(x, φ) φ ),   φ(x, 0) = φ0(x),
//!
//! on a truncated symmetric domain with homogeneous Neumann boundaries.
//! The diffusion flux ∂_x α is implicit through the lagged-coefficient
//! linearization α(x, w) ≈ α(x, φ_k) + α'_φ(x, φ_k)(w - φ_k) (tridiagonal
//! M-matrix solve per Picard pass); the convective flux -αφ is explicit,
//! upwinded by the sign of α. Total mass then changes only through the
//! boundary convective flux, which the solver tracks in a ledger.
//!
//! The drift μ(x,θ) = μᵀθ - ½θᵀΣθ + ε(e^x)e^{-x} folds into the Markowitz
//! value function as α(x, φ) = α_M(1 + φ) - ε(e^x)e^{-x}: the Itô variance
//! correction shifts the risk-aversion argument by one, and the inflow term
//! passes through the min untouched.

use crate::error::{Error, Result};
use crate::portfolio::{alpha_value, lipschitz_bounds, AlphaSolution, PortfolioProblem};

/// Terminal utility choice; φ0 = -u''/u'.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilitySpec {
    /// Piecewise-exponential with risk aversion a0 for x ≤ x*, a1 beyond.
    Dara { a0: f64, a1: f64, x_star: f64 },
    /// u(x) = arctan(x), φ0 = 2x/(1+x²).
    Arctan,
    /// Direct samples of φ0 on the grid cells.
    Sampled(Vec<f64>),
}

/// Utility plus the truncation radius γ outside which φ0 is set to zero
/// (linear-utility extension).
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityConfig {
    pub spec: UtilitySpec,
    pub gamma_trunc: f64,
}

impl UtilityConfig {
    pub fn dara(a0: f64, a1: f64, x_star: f64) -> Self {
        UtilityConfig { spec: UtilitySpec::Dara { a0, a1, x_star }, gamma_trunc: 6.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_trunc > 0.0) {
            return Err(Error::Parameter("gamma_trunc must be > 0".into()));
        }
        match &self.spec {
            UtilitySpec::Dara { a0, a1, .. } => {
                if !(*a0 > 0.0 && *a1 > 0.0) {
                    return Err(Error::Parameter("DARA constants must be positive".into()));
                }
            }
            UtilitySpec::Sampled(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Parameter("sampled phi0 must be finite".into()));
                }
            }
            UtilitySpec::Arctan => {}
        }
        Ok(())
    }
}

/// Symmetric space-time lattice for the transformed equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbGrid {
    /// Domain [-X, X].
    pub half_width: f64,
    /// Number of finite-volume cells.
    pub cells: usize,
    /// Time horizon T.
    pub horizon: f64,
    /// Number of time steps.
    pub steps: usize,
}

impl HjbGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0) || self.cells < 16 || self.steps < 2 || !(self.horizon > 0.0) {
            return Err(Error::Parameter(
                "hjb grid needs X > 0, cells >= 16, steps >= 2, horizon > 0".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Cell-center coordinate.
    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }
}

/// Cash in-/outflow ε(y): 0 below y⁻, the constant rate above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSpec {
    pub inflow_rate: f64,
    pub inflow_threshold: f64,
}

impl DriftSpec {
    /// No inflow: the drift is independent of x.
    pub fn none() -> Self {
        DriftSpec { inflow_rate: 0.0, inflow_threshold: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.inflow_rate.is_finite() || !(self.inflow_threshold > 0.0) {
            return Err(Error::Parameter("inflow rate must be finite, threshold > 0".into()));
        }
        Ok(())
    }

    /// ε(e^x) e^{-x}.
    #[inline]
    pub fn inflow_term(&self, x: f64) -> f64 {
        if x > self.inflow_threshold.ln() {
            self.inflow_rate * (-x).exp()
        } else {
            0.0
        }
    }

    /// p(x) = max over the decision set of |∂_x μ| — θ-independent here.
    #[inline]
    pub fn drift_gradient_bound(&self, x: f64) -> f64 {
        if x > self.inflow_threshold.ln() {
            (self.inflow_rate * (-x).exp()).abs()
        } else {
            0.0
        }
    }
}

/// The diffusion function α(x, φ) of the transformed equation and its
/// φ-derivative, backed by the Markowitz engine.
pub struct AlphaField<'a> {
    pub problem: &'a PortfolioProblem,
    pub drift: DriftSpec,
}

impl AlphaField<'_> {
    /// α(x, φ) = α_M(1 + φ) - ε(e^x)e^{-x}. Requires 1 + φ > 0.
    pub fn value(&self, x: f64, phi: f64) -> Result<f64> {
        Ok(alpha_value(self.problem, self.shifted(phi)?)?.alpha - self.drift.inflow_term(x))
    }

    /// α'_φ(x, φ) = ½ θ̂ᵀΣθ̂ at 1 + φ; lies in [ω, L].
    pub fn slope(&self, phi: f64) -> Result<f64> {
        crate::portfolio::alpha_derivative(self.problem, self.shifted(phi)?)
    }

    /// Optimal weights at risk aversion 1 + φ (the inflow drops from the argmin).
    pub fn weights(&self, phi: f64) -> Result<AlphaSolution> {
        alpha_value(self.problem, self.shifted(phi)?)
    }

    fn shifted(&self, phi: f64) -> Result<f64> {
        let arg = 1.0 + phi;
        if !(arg > 0.0) {
            return Err(Error::Domain(format!(
                "risk-aversion argument 1 + phi = {arg} left the admissible range"
            )));
        }
        Ok(arg)
    }

    /// Certified slope bounds of α'_φ over the decision set.
    pub fn slope_bounds(&self) -> Result<(f64, f64)> {
        lipschitz_bounds(self.problem)
    }
}

/// Initial profile φ0 at the cell centers.
pub fn phi0_from_utility(utility: &UtilityConfig, grid: &HjbGrid) -> Result<Vec<f64>> {
    utility.validate()?;
    grid.validate()?;
    let g = utility.gamma_trunc;
    match &utility.spec {
        UtilitySpec::Dara { a0, a1, x_star } => Ok(grid
            .centers()
            .iter()
            .map(|&x| {
                if x.abs() >= g {
                    0.0
                } else if x <= *x_star {
                    *a0
                } else {
                    *a1
                }
            })
            .collect()),
        UtilitySpec::Arctan => Ok(grid
            .centers()
            .iter()
            .map(|&x| if x.abs() >= g { 0.0 } else { 2.0 * x / (1.0 + x * x) })
            .collect()),
        UtilitySpec::Sampled(values) => {
            if values.len() != grid.cells {
                return Err(Error::Parameter(format!(
                    "sampled phi0 length {} != cells {}",
                    values.len(),
                    grid.cells
                )));
            }
            Ok(values.clone())
        }
    }
}

/// Sub/supersolution envelope constants: ψ̲ = min{0, inf α(x, φ0)},
/// ψ̄ = max{0, sup α(x, φ0)}, λ = sup p(x), giving
/// ψ̲ e^{λτ} ≤ α(x, φ(x,τ)) ≤ ψ̄ e^{λτ}.
#[derive(Debug, Clone, Copy)]
pub struct AprioriBounds {
    pub psi_lower: f64,
    pub psi_upper: f64,
    pub lambda: f64,
}

pub fn apriori_bounds(
    field: &AlphaField,
    phi0: &[f64],
    grid: &HjbGrid,
) -> Result<AprioriBounds> {
    grid.validate()?;
    if phi0.len() != grid.cells {
        return Err(Error::Parameter("phi0 length mismatch".into()));
    }
    let mut inf = f64::INFINITY;
    let mut sup = f64::NEG_INFINITY;
    let mut lambda: f64 = 0.0;
    for (i, &x) in grid.centers().iter().enumerate() {
        let a = field.value(x, phi0[i])?;
        inf = inf.min(a);
        sup = sup.max(a);
        lambda = lambda.max(field.drift_gradient_bound_at(x));
    }
    Ok(AprioriBounds { psi_lower: inf.min(0.0), psi_upper: sup.max(0.0), lambda })
}

impl AlphaField<'_> {
    fn drift_gradient_bound_at(&self, x: f64) -> f64 {
        self.drift.drift_gradient_bound(x)
    }
}

/// Scheme controls.
#[derive(Debug, Clone, Copy)]
pub struct HjbSchemeConfig {
    pub picard_tol: f64,
    pub max_picard: usize,
    /// Tolerance of the a-priori envelope monitor (flag, not abort).
    pub envelope_tol: f64,
}

impl Default for HjbSchemeConfig {
    fn default() -> Self {
        HjbSchemeConfig { picard_tol: 1e-9, max_picard: 60, envelope_tol: 1e-6 }
    }
}

/// Solution profiles with the conservation ledger and envelope monitor.
#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub grid: HjbGrid,
    /// profiles[j][i] = φ(x_i, τ_j).
    pub profiles: Vec<Vec<f64>>,
    /// Largest per-step defect |Δ(Σφh) - Δτ (F_right - F_left)|.
    pub mass_ledger_residual: f64,
    /// (step index, overshoot) where the a-priori envelope was exceeded by
    /// more than the tolerance.
    pub envelope_violations: Vec<(usize, f64)>,
}

/// Time-steps the conservative finite-volume scheme.
pub fn solve_riccati_pde(
    field: &AlphaField,
    phi0: &[f64],
    grid: &HjbGrid,
    scheme: &HjbSchemeConfig,
) -> Result<HjbSolution> {
    field.problem.validate()?;
    field.drift.validate()?;
    grid.validate()?;
    if phi0.len() != grid.cells {
        return Err(Error::Parameter("phi0 length mismatch".into()));
    }
    let (omega, big_l) = field.slope_bounds()?;
    if !(omega > 0.0 && big_l >= omega) {
        return Err(Error::Parameter("slope bounds must satisfy 0 < omega <= L".into()));
    }
    let bounds = apriori_bounds(field, phi0, grid)?;
    let n = grid.cells;
    let h = grid.dx();
    let dt = grid.dt();
    let centers = grid.centers();

    let mut profiles = Vec::with_capacity(grid.steps + 1);
    profiles.push(phi0.to_vec());
    let mut phi = phi0.to_vec();
    let mut ledger: f64 = 0.0;
    let mut violations = Vec::new();

    let mut alpha_old = vec![0.0; n];
    let mut alpha_k = vec![0.0; n];
    let mut slope_k = vec![0.0; n];
    let mut conv_div = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];

    for step in 0..grid.steps {
        for i in 0..n {
            alpha_old[i] = field.value(centers[i], phi[i])?;
        }
        // Convective flux of -αφ through face i+1/2, upwinded by the sign of
        // the transport speed -ᾱ; boundary faces use the adjacent cell value
        // (zero-gradient ghost).
        let conv_face = |left: isize| -> f64 {
            if left < 0 {
                return -alpha_old[0] * phi[0];
            }
            let l = left as usize;
            if l + 1 >= n {
                return -alpha_old[n - 1] * phi[n - 1];
            }
            let speed = -0.5 * (alpha_old[l] + alpha_old[l + 1]);
            if speed >= 0.0 {
                speed * phi[l]
            } else {
                speed * phi[l + 1]
            }
        };
        for i in 0..n {
            conv_div[i] = (conv_face(i as isize) - conv_face(i as isize - 1)) / h;
        }
        // Boundary diffusive fluxes under the mirror ghost on φ: the
        // φ-dependent parts of α cancel and only the explicit x-gradient of
        // the inflow term survives.
        let g_left = (field.drift.inflow_term(centers[0])
            - field.drift.inflow_term(centers[0] - h))
            / h;
        let g_right = (field.drift.inflow_term(centers[n - 1] + h)
            - field.drift.inflow_term(centers[n - 1]))
            / h;
        // α carries -inflow, so D = ∂_x α = -∂_x(inflow).
        let (g_left, g_right) = (-g_left, -g_right);
        let flux_left = conv_face(-1) + g_left;
        let flux_right = conv_face(n as isize - 1) + g_right;
        let mass_before: f64 = phi.iter().sum::<f64>() * h;

        // Picard passes over the lagged-coefficient diffusion linearization.
        let mut iterate = phi.clone();
        let mut converged = false;
        for _ in 0..scheme.max_picard {
            for i in 0..n {
                alpha_k[i] = field.value(centers[i], iterate[i])?;
                slope_k[i] = field.slope(iterate[i])?;
            }
            for i in 0..n {
                let mut d = 1.0 / dt;
                let mut r = phi[i] / dt + conv_div[i];
                if i + 1 < n {
                    d += slope_k[i] / (h * h);
                    upper[i] = -slope_k[i + 1] / (h * h);
                    r += (alpha_k[i + 1] - alpha_k[i] - slope_k[i + 1] * iterate[i + 1]
                        + slope_k[i] * iterate[i])
                        / (h * h);
                } else {
                    upper[i] = 0.0;
                    r += g_right / h;
                }
                if i > 0 {
                    d += slope_k[i] / (h * h);
                    lower[i] = -slope_k[i - 1] / (h * h);
                    r -= (alpha_k[i] - alpha_k[i - 1] - slope_k[i] * iterate[i]
                        + slope_k[i - 1] * iterate[i - 1])
                        / (h * h);
                } else {
                    lower[i] = 0.0;
                    r -= g_left / h;
                }
                diag[i] = d;
                rhs[i] = r;
            }
            hjb_thomas(&lower, &diag, &upper, &mut rhs);
            let mut residual: f64 = 0.0;
            for i in 0..n {
                if !rhs[i].is_finite() {
                    return Err(Error::NonConvergence {
                        context: format!("hjb step {step}: non-finite Picard update"),
                        residual: f64::NAN,
                        iterations: step,
                    });
                }
                residual = residual.max((rhs[i] - iterate[i]).abs());
                iterate[i] = rhs[i];
            }
            if residual <= scheme.picard_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                context: format!("hjb step {step}: Picard correction stalled"),
                residual: f64::NAN,
                iterations: scheme.max_picard,
            });
        }
        phi.copy_from_slice(&iterate);

        // Conservation ledger: interior fluxes telescope, so the mass moves
        // only by the boundary convective flux.
        let mass_after: f64 = phi.iter().sum::<f64>() * h;
        let defect = (mass_after - mass_before - dt * (flux_right - flux_left)).abs();
        ledger = ledger.max(defect);

        // A-priori envelope monitor (flag, not abort).
        let tau = (step + 1) as f64 * dt;
        let lo = bounds.psi_lower * (bounds.lambda * tau).exp() - scheme.envelope_tol;
        let hi = bounds.psi_upper * (bounds.lambda * tau).exp() + scheme.envelope_tol;
        let mut overshoot: f64 = 0.0;
        for i in 0..n {
            let a = field.value(centers[i], phi[i])?;
            overshoot = overshoot.max(lo - a).max(a - hi);
        }
        if overshoot > 0.0 {
            violations.push((step + 1, overshoot));
        }

        profiles.push(phi.clone());
    }

    Ok(HjbSolution {
        grid: *grid,
        profiles,
        mass_ledger_residual: ledger,
        envelope_violations: violations,
    })
}

fn hjb_thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c_star = vec![0.0; n];
    c_star[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * c_star[i - 1];
        if i < n - 1 {
            c_star[i] = upper[i] / denom;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c_star[i] * rhs[i + 1];
    }
}

/// Optimal-weight field θ̂(x, τ) mapped through the Markowitz engine, with
/// the support bitmask per node for the diversification contours.
pub fn optimal_weights_surface(
    field: &AlphaField,
    solution: &HjbSolution,
) -> Result<Vec<Vec<AlphaSolution>>> {
    solution
        .profiles
        .iter()
        .map(|row| row.iter().map(|&p| field.weights(p)).collect())
        .collect()
}

/// Unnormalized value-function shape from one profile row: V with
/// V_x(x) = exp(-∫_0^x φ) and V(x_left) = 0, by trapezoidal integration.
/// Fixing the two integration constants is up to the caller.
pub fn value_shape_from_profile(grid: &HjbGrid, profile: &[f64]) -> Result<Vec<f64>> {
    if profile.len() != grid.cells {
        return Err(Error::Parameter("profile length mismatch".into()));
    }
    let h = grid.dx();
    let n = grid.cells;
    // ∫ φ from the left edge by the trapezoid rule on cell centers.
    let mut cum = vec![0.0; n];
    for i in 1..n {
        cum[i] = cum[i - 1] + 0.5 * (profile[i - 1] + profile[i]) * h;
    }
    // Recenter the exponent at x = 0 so the shape is comparable across grids.
    let mid = n / 2;
    let offset = cum[mid];
    let vx: Vec<f64> = cum.iter().map(|&c| (-(c - offset)).exp()).collect();
    let mut v = vec![0.0; n];
    for i in 1..n {
        v[i] = v[i - 1] + 0.5 * (vx[i - 1] + vx[i]) * h;
    }
    Ok(v)
}
