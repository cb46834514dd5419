//! Large-trader feedback: the implicit shift equations for H and ξ, their
//! first-order ρ-expansions, the feedback volatility, and the drift
//! correction δ(τ, x).
//!
//! Both implicit equations are solved by damped fixed-point iteration; under
//! ρL < 1 the iteration map is a contraction with factor ≤ ρL, so convergence
//! is certified rather than hoped for.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::levy::LevyMeasure;
use crate::quad::{QuadConfig, QuadResult};

type StrategyFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A prescribed large-trader holding function.
///
/// The same object serves both coordinate conventions: φ(t, S) in spot space
/// (shift equation for H, feedback volatility) and ψ(τ, x) in transformed
/// space (shift equation for ξ). `bound` is the Lipschitz-type constant
/// relevant to the convention in use: sup |S ∂φ/∂S| for φ, the Lipschitz
/// bound of ψ(τ, ·) for ψ. Every consumer requires ρ·bound < 1.
#[derive(Clone)]
pub struct TradingStrategy {
    func: Arc<StrategyFn>,
    derivative: Option<Arc<StrategyFn>>,
    pub bound: f64,
    pub holder_exponent: f64,
    /// False when the strategy does not depend on its first argument;
    /// lets the PIDE solver reuse one weight table across time steps.
    pub time_dependent: bool,
}

impl std::fmt::Debug for TradingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TradingStrategy")
            .field("bound", &self.bound)
            .field("holder_exponent", &self.holder_exponent)
            .field("time_dependent", &self.time_dependent)
            .field("analytic_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl TradingStrategy {
    pub fn new<F>(func: F, bound: f64, holder_exponent: f64) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        TradingStrategy {
            func: Arc::new(func),
            derivative: None,
            bound,
            holder_exponent,
            time_dependent: false,
        }
    }

    pub fn with_derivative<F>(mut self, derivative: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.derivative = Some(Arc::new(derivative));
        self
    }

    pub fn time_dependent(mut self, yes: bool) -> Self {
        self.time_dependent = yes;
        self
    }

    pub fn constant(c: f64) -> Self {
        TradingStrategy::new(move |_, _| c, 0.0, 1.0).with_derivative(|_, _| 0.0)
    }

    /// tanh profile a·tanh((s - center)/width); bound is sup |s ∂φ/∂s|,
    /// estimated numerically at construction.
    pub fn tanh_profile(amplitude: f64, center: f64, width: f64) -> Self {
        let f = move |_: f64, s: f64| amplitude * ((s - center) / width).tanh();
        let d = move |_: f64, s: f64| {
            let u = ((s - center) / width).cosh();
            amplitude / (width * u * u)
        };
        let mut bound: f64 = 0.0;
        for i in 1..=4000 {
            let s = center.abs().max(width) * 4.0 * i as f64 / 4000.0;
            let u = ((s - center) / width).cosh();
            bound = bound.max((s * amplitude / (width * u * u)).abs());
        }
        TradingStrategy::new(f, bound, 1.0).with_derivative(d)
    }

    /// Normal-CDF profile in the transformed coordinate: ψ(τ, x) = a·N(x).
    pub fn normal_cdf_profile(amplitude: f64) -> Self {
        let f = move |_: f64, x: f64| amplitude * crate::special::norm_cdf(x);
        let d = move |_: f64, x: f64| amplitude * crate::special::norm_pdf(x);
        let bound = amplitude.abs() * crate::special::norm_pdf(0.0);
        TradingStrategy::new(f, bound, 1.0).with_derivative(d)
    }

    #[inline]
    pub fn value(&self, a: f64, b: f64) -> f64 {
        (self.func)(a, b)
    }

    /// ∂/∂(second argument); analytic closure when supplied, otherwise a
    /// central difference with step 1e-5 of scale.
    pub fn slope(&self, a: f64, b: f64) -> f64 {
        if let Some(d) = &self.derivative {
            return d(a, b);
        }
        let h = 1e-5 * b.abs().max(1.0);
        ((self.func)(a, b + h) - (self.func)(a, b - h)) / (2.0 * h)
    }
}

/// Iteration controls for the implicit shift solves.
#[derive(Debug, Clone, Copy)]
pub struct ShiftSolveConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub damping: f64,
}

impl Default for ShiftSolveConfig {
    fn default() -> Self {
        ShiftSolveConfig { max_iter: 200, tol: 1e-12, damping: 1.0 }
    }
}

impl ShiftSolveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Parameter("shift solve tol must be > 0".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Parameter("shift solve damping must be in (0, 1]".into()));
        }
        Ok(())
    }
}

fn require_contraction(rho: f64, bound: f64) -> Result<()> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::Parameter(format!("rho must be >= 0, got {rho}")));
    }
    if rho * bound >= 1.0 {
        return Err(Error::AssumptionViolation(format!(
            "rho * L = {} must be < 1",
            rho * bound
        )));
    }
    Ok(())
}

/// Solves H = S(e^z - 1) + ρS(φ(t, S+H) - φ(t, S)).
pub fn solve_shift_h(
    t: f64,
    z: f64,
    spot: f64,
    strategy: &TradingStrategy,
    rho: f64,
    cfg: &ShiftSolveConfig,
) -> Result<f64> {
    Ok(solve_shift_h_traced(t, z, spot, strategy, rho, cfg)?.0)
}

/// As `solve_shift_h`, also returning the per-iteration update magnitudes.
pub fn solve_shift_h_traced(
    t: f64,
    z: f64,
    spot: f64,
    strategy: &TradingStrategy,
    rho: f64,
    cfg: &ShiftSolveConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    require_contraction(rho, strategy.bound)?;
    if !(spot > 0.0) {
        return Err(Error::Domain(format!("spot must be > 0, got {spot}")));
    }
    let base = spot * (z.exp() - 1.0);
    let phi_s = strategy.value(t, spot);
    let map = |h: f64| base + rho * spot * (strategy.value(t, spot + h) - phi_s);
    fixed_point(base, map, cfg, "shift H")
}

/// First-order expansion H ≈ S(e^z - 1) + ρS(φ(t, S e^z) - φ(t, S)).
pub fn shift_h_first_order(
    t: f64,
    z: f64,
    spot: f64,
    strategy: &TradingStrategy,
    rho: f64,
) -> Result<f64> {
    require_contraction(rho, strategy.bound)?;
    if !(spot > 0.0) {
        return Err(Error::Domain(format!("spot must be > 0, got {spot}")));
    }
    Ok(spot * (z.exp() - 1.0)
        + rho * spot * (strategy.value(t, spot * z.exp()) - strategy.value(t, spot)))
}

/// Solves e^ξ = e^z + ρ(ψ(τ, x+ξ) - ψ(τ, x)) by iterating in
/// ξ = ln(e^z + ρ Δψ).
pub fn solve_xi(
    tau: f64,
    x: f64,
    z: f64,
    psi: &TradingStrategy,
    rho: f64,
    cfg: &ShiftSolveConfig,
) -> Result<f64> {
    Ok(solve_xi_traced(tau, x, z, psi, rho, cfg)?.0)
}

pub fn solve_xi_traced(
    tau: f64,
    x: f64,
    z: f64,
    psi: &TradingStrategy,
    rho: f64,
    cfg: &ShiftSolveConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    require_contraction(rho, psi.bound)?;
    let psi_x = psi.value(tau, x);
    let ez = z.exp();
    let map = |xi: f64| -> f64 {
        let arg = ez + rho * (psi.value(tau, x + xi) - psi_x);
        // Signalled through NaN and converted to a domain error below.
        if arg <= 0.0 {
            f64::NAN
        } else {
            arg.ln()
        }
    };
    match fixed_point(z, map, cfg, "shift xi") {
        Ok(r) => Ok(r),
        Err(Error::NonConvergence { residual, .. }) if residual.is_nan() => Err(Error::Domain(
            "xi iteration left the domain: e^z + rho * delta psi <= 0".into(),
        )),
        Err(e) => Err(e),
    }
}

/// Which ξ provider the nonlocal operator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XiMode {
    /// Solve the implicit equation at every node.
    #[default]
    Exact,
    /// ξ = z + ρ e^{-z} (ψ(τ, x+z) - ψ(τ, x)).
    FirstOrder,
    /// ξ = z + ρ (ψ(τ, x+z) - ψ(τ, x)); the restatement without the e^{-z}
    /// factor, kept for the discrepancy study.
    FirstOrderNoEz,
}

impl XiMode {
    pub fn name(&self) -> &'static str {
        match self {
            XiMode::Exact => "exact",
            XiMode::FirstOrder => "first-order",
            XiMode::FirstOrderNoEz => "no-ezfactor",
        }
    }
}

/// First-order expansion ξ = z + ρ e^{-z} (ψ(τ, x+z) - ψ(τ, x)).
pub fn xi_first_order(tau: f64, x: f64, z: f64, psi: &TradingStrategy, rho: f64) -> Result<f64> {
    require_contraction(rho, psi.bound)?;
    Ok(z + rho * (-z).exp() * (psi.value(tau, x + z) - psi.value(tau, x)))
}

/// ξ via the selected mode.
pub fn xi_value(
    mode: XiMode,
    tau: f64,
    x: f64,
    z: f64,
    psi: &TradingStrategy,
    rho: f64,
    cfg: &ShiftSolveConfig,
) -> Result<f64> {
    match mode {
        XiMode::Exact => solve_xi(tau, x, z, psi, rho, cfg),
        XiMode::FirstOrder => xi_first_order(tau, x, z, psi, rho),
        XiMode::FirstOrderNoEz => {
            require_contraction(rho, psi.bound)?;
            Ok(z + rho * (psi.value(tau, x + z) - psi.value(tau, x)))
        }
    }
}

/// Feedback-modified diffusion volatility v = σ / (1 - ρ S ∂φ/∂S).
pub fn feedback_volatility(
    t: f64,
    spot: f64,
    strategy: &TradingStrategy,
    rho: f64,
    sigma: f64,
) -> Result<f64> {
    require_contraction(rho, strategy.bound)?;
    if !(spot > 0.0) {
        return Err(Error::Domain(format!("spot must be > 0, got {spot}")));
    }
    let denom = 1.0 - rho * spot * strategy.slope(t, spot);
    if denom <= 0.0 {
        return Err(Error::AssumptionViolation(format!(
            "feedback denominator 1 - rho S dphi/dS = {denom} at S = {spot}"
        )));
    }
    Ok(sigma / denom)
}

/// Drift correction δ(τ, x) = ∫ (e^ξ - 1 - ξ) ν(dz).
pub fn drift_correction_delta(
    tau: f64,
    x: f64,
    psi: &TradingStrategy,
    rho: f64,
    measure: &LevyMeasure,
    mode: XiMode,
    quad: &QuadConfig,
    shift: &ShiftSolveConfig,
) -> Result<QuadResult> {
    measure.validate()?;
    require_contraction(rho, psi.bound)?;
    let g = |z: f64| -> f64 {
        if z == 0.0 {
            return 0.0;
        }
        match xi_value(mode, tau, x, z, psi, rho, shift) {
            Ok(xi) => xi.exp() - 1.0 - xi,
            Err(_) => f64::NAN,
        }
    };
    let result = measure.compensated_integral_unchecked(&g, quad);
    match result {
        Ok(r) if r.value.is_nan() => {
            Err(Error::Domain("xi solve failed on a quadrature node".into()))
        }
        other => other,
    }
}

/// Damped fixed-point iteration with a geometric-convergence trace.
fn fixed_point<F: Fn(f64) -> f64>(
    start: f64,
    map: F,
    cfg: &ShiftSolveConfig,
    context: &str,
) -> Result<(f64, Vec<f64>)> {
    let mut current = start;
    let mut trace = Vec::new();
    let scale = start.abs().max(1.0);
    for i in 0..cfg.max_iter {
        let next_raw = map(current);
        if next_raw.is_nan() {
            return Err(Error::NonConvergence {
                context: context.into(),
                residual: f64::NAN,
                iterations: i,
            });
        }
        let next = (1.0 - cfg.damping) * current + cfg.damping * next_raw;
        let update = (next - current).abs();
        trace.push(update);
        // Returning the pre-update iterate keeps exact fixed points
        // (rho = 0, constant strategies) bit-exact.
        if update <= cfg.tol * scale {
            return Ok((current, trace));
        }
        current = next;
    }
    Err(Error::NonConvergence {
        context: context.into(),
        residual: *trace.last().unwrap_or(&f64::INFINITY),
        iterations: cfg.max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ShiftSolveConfig {
        ShiftSolveConfig::default()
    }

    fn tanh_strategy() -> TradingStrategy {
        TradingStrategy::tanh_profile(0.5, 100.0, 120.0)
    }

    #[test]
    fn h_reduces_to_jump_at_rho_zero() {
        let s = 100.0;
        let h = solve_shift_h(0.0, 0.3, s, &tanh_strategy(), 0.0, &cfg()).unwrap();
        assert_eq!(h, s * (0.3f64.exp() - 1.0));
    }

    #[test]
    fn h_zero_at_z_zero() {
        let h = solve_shift_h(0.0, 0.0, 100.0, &tanh_strategy(), 0.05, &cfg()).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn h_matches_bisection_oracle() {
        let strat = tanh_strategy();
        let (t, s, rho) = (0.3, 100.0, 0.05);
        for &z in &[-0.8, -0.2, 0.1, 0.5] {
            let h = solve_shift_h(t, z, s, &strat, rho, &cfg()).unwrap();
            let resid = |hh: f64| {
                hh - s * (z.exp() - 1.0) - rho * s * (strat.value(t, s + hh) - strat.value(t, s))
            };
            // Bracketed root oracle.
            let span = s * (z.exp() - 1.0).abs() / (1.0 - rho * strat.bound) + 1.0;
            let (mut lo, mut hi) = (-span, span);
            assert!(resid(lo) < 0.0 && resid(hi) > 0.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if resid(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let oracle = 0.5 * (lo + hi);
            assert!((h - oracle).abs() < 1e-10, "z = {z}: {h} vs {oracle}");
        }
    }

    #[test]
    fn h_rejects_strong_feedback() {
        let strat = TradingStrategy::new(|_, s: f64| s, 1e9, 1.0);
        assert!(matches!(
            solve_shift_h(0.0, 0.1, 100.0, &strat, 0.5, &cfg()),
            Err(Error::AssumptionViolation(_))
        ));
    }

    #[test]
    fn h_first_order_constant_strategy_exact() {
        let strat = TradingStrategy::constant(0.7);
        for &rho in &[0.0, 0.05, 0.3] {
            let exact = solve_shift_h(0.0, 0.2, 90.0, &strat, rho, &cfg()).unwrap();
            let first = shift_h_first_order(0.0, 0.2, 90.0, &strat, rho).unwrap();
            assert_eq!(exact, first);
            assert_eq!(exact, 90.0 * (0.2f64.exp() - 1.0));
        }
    }

    #[test]
    fn h_expansion_is_second_order_in_rho() {
        let strat = tanh_strategy();
        let (t, s, z) = (0.0, 100.0, 0.4);
        let gap = |rho: f64| {
            let exact = solve_shift_h(t, z, s, &strat, rho, &cfg()).unwrap();
            let first = shift_h_first_order(t, z, s, &strat, rho).unwrap();
            (exact - first).abs()
        };
        let (g4, g2, g1) = (gap(0.04), gap(0.02), gap(0.01));
        let slope_a = (g4 / g2).log2();
        let slope_b = (g2 / g1).log2();
        assert!((slope_a - 2.0).abs() < 0.2, "slope {slope_a}");
        assert!((slope_b - 2.0).abs() < 0.2, "slope {slope_b}");
    }

    #[test]
    fn xi_reduces_to_z() {
        let psi = TradingStrategy::normal_cdf_profile(1.0);
        assert_eq!(solve_xi(0.0, 0.3, 0.25, &psi, 0.0, &cfg()).unwrap(), 0.25);
        let c = TradingStrategy::constant(2.0);
        assert_eq!(solve_xi(0.0, 0.3, 0.25, &c, 0.4, &cfg()).unwrap(), 0.25);
    }

    #[test]
    fn xi_matches_bisection_oracle() {
        let psi = TradingStrategy::normal_cdf_profile(1.0);
        let (tau, x, rho) = (0.5, 0.2, 0.05);
        for &z in &[-0.6, -0.1, 0.2, 0.7] {
            let xi = solve_xi(tau, x, z, &psi, rho, &cfg()).unwrap();
            let resid =
                |v: f64| v.exp() - z.exp() - rho * (psi.value(tau, x + v) - psi.value(tau, x));
            let (mut lo, mut hi) = (z - 1.0, z + 1.0);
            assert!(resid(lo) < 0.0 && resid(hi) > 0.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if resid(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let oracle = 0.5 * (lo + hi);
            assert!((xi - oracle).abs() < 1e-10, "z = {z}: {xi} vs {oracle}");
            assert!(resid(xi).abs() < 1e-10);
        }
    }

    #[test]
    fn xi_first_order_linear_psi() {
        let psi = TradingStrategy::new(|_, x| x, 1.0, 1.0);
        let (z, rho) = (0.3, 0.2);
        let got = xi_first_order(0.0, 1.0, z, &psi, rho).unwrap();
        assert!((got - (z + rho * (-z).exp() * z)).abs() < 1e-15);
    }

    #[test]
    fn xi_expansion_is_second_order_in_rho() {
        let psi = TradingStrategy::normal_cdf_profile(1.0);
        let (tau, x, z) = (0.5, -0.3, 0.45);
        let gap = |rho: f64| {
            let exact = solve_xi(tau, x, z, &psi, rho, &cfg()).unwrap();
            let first = xi_first_order(tau, x, z, &psi, rho).unwrap();
            (exact - first).abs()
        };
        let slope = (gap(0.04) / gap(0.02)).log2();
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn contraction_trace_is_geometric() {
        let psi = TradingStrategy::normal_cdf_profile(1.0);
        let rho = 0.8; // rho * bound = 0.8 * 0.3989 ≈ 0.32
        let rate = rho * psi.bound;
        let tight = ShiftSolveConfig { tol: 1e-14, ..cfg() };
        let (_, trace) = solve_xi_traced(0.0, 0.1, 0.5, &psi, rho, &tight).unwrap();
        for w in trace.windows(2) {
            if w[0] > 1e-12 {
                assert!(w[1] <= rate * w[0] * 1.05 + 1e-15, "ratio {} > {}", w[1] / w[0], rate);
            }
        }
        let (_, trace_h) =
            solve_shift_h_traced(0.0, 0.4, 100.0, &tanh_strategy(), 0.5, &tight).unwrap();
        let rate_h = 0.5 * tanh_strategy().bound;
        for w in trace_h.windows(2) {
            if w[0] > 1e-9 {
                assert!(w[1] <= rate_h * w[0] * 1.05 + 1e-12);
            }
        }
    }

    #[test]
    fn xi_holder_envelope() {
        // |ξ| ≤ C0 |z|^ω (1 + e^{|z|}) with C0 fitted at rho = 0.04 and
        // verified on a denser, shifted grid.
        let psi = TradingStrategy::normal_cdf_profile(1.0);
        let rho = 0.04;
        let envelope = |z: f64| z.abs() * (1.0 + z.abs().exp());
        let mut c0: f64 = 0.0;
        for i in 1..=20 {
            let z = -1.0 + 2.0 * i as f64 / 20.0;
            if z == 0.0 {
                continue;
            }
            let xi = solve_xi(0.3, 0.1, z, &psi, rho, &cfg()).unwrap();
            c0 = c0.max(xi.abs() / envelope(z));
        }
        let c0 = c0 * 1.05;
        for i in 1..=200 {
            let z = -1.01 + 2.0 * i as f64 / 200.0;
            if z.abs() < 1e-9 {
                continue;
            }
            let xi = solve_xi(0.3, 0.1, z, &psi, rho, &cfg()).unwrap();
            assert!(xi.abs() <= c0 * envelope(z) + 1e-12);
        }
    }

    #[test]
    fn volatility_quotient() {
        let sigma = 0.23;
        // S dphi/dS = 0.5 everywhere for phi = 0.5 ln S.
        let strat = TradingStrategy::new(|_, s: f64| 0.5 * s.ln(), 0.5, 1.0)
            .with_derivative(|_, s: f64| 0.5 / s);
        let v = feedback_volatility(0.0, 100.0, &strat, 0.1, sigma).unwrap();
        assert!((v - sigma / 0.95).abs() < 1e-14);
        assert_eq!(feedback_volatility(0.0, 100.0, &strat, 0.0, sigma).unwrap(), sigma);
        let flat = TradingStrategy::constant(0.3);
        assert_eq!(feedback_volatility(0.0, 100.0, &flat, 0.4, sigma).unwrap(), sigma);
    }

    #[test]
    fn volatility_respects_bounds() {
        let strat = tanh_strategy();
        let (rho, sigma) = (0.5, 0.23);
        for &s in &[50.0, 100.0, 150.0] {
            let v = feedback_volatility(0.0, s, &strat, rho, sigma).unwrap();
            assert!(v >= sigma / (1.0 + rho * strat.bound) - 1e-12);
            assert!(v <= sigma / (1.0 - rho * strat.bound) + 1e-12);
        }
    }

    #[test]
    fn delta_correction_examples() {
        let quad = QuadConfig::default();
        let shift = cfg();
        let merton = LevyMeasure::Merton { lambda: 0.1, m: -0.2, delta: 0.15 };
        let psi = TradingStrategy::normal_cdf_profile(1.0);

        // rho = 0: δ = λ(e^{m+δ²/2} - 1 - m).
        let d0 = drift_correction_delta(0.2, 0.0, &psi, 0.0, &merton, XiMode::Exact, &quad, &shift)
            .unwrap();
        let expected = 0.1 * ((-0.2f64 + 0.5 * 0.15 * 0.15).exp() - 1.0 + 0.2);
        assert!((d0.value - expected).abs() < 1e-8);

        // Zero measure.
        let none = LevyMeasure::Merton { lambda: 0.0, m: 0.0, delta: 1.0 };
        let dz = drift_correction_delta(0.2, 0.0, &psi, 0.05, &none, XiMode::Exact, &quad, &shift)
            .unwrap();
        assert_eq!(dz.value, 0.0);

        // Constant psi: any rho gives the rho = 0 value.
        let c = TradingStrategy::constant(0.4);
        let dc = drift_correction_delta(0.2, 0.0, &c, 0.3, &merton, XiMode::Exact, &quad, &shift)
            .unwrap();
        assert!((dc.value - expected).abs() < 1e-8);
    }
}
