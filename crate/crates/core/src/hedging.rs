//! Variance-minimizing hedge of a large trader: the pointwise tracking-error
//! objective, its exact minimizer, the outer fixed point for ρ > 0, and the
//! first-order ρ-expansion.
//!
//! The instantaneous tracking-error variance rate at holding `a` is
//!
//!   v² S² (∂_S V - a)² + ∫ ( V(t, S+H) - V(t, S) - a H )² ν(dz),
//!
//! a strictly convex quadratic in `a` whose minimizer is
//!
//!   φ = β [ v² S² ∂_S V + ∫ (V(t,S+H) - V(t,S)) H ν(dz) ],
//!   β = 1 / [ v² S² + ∫ H² ν(dz) ].
//!
//! For ρ = 0, H = S(e^z - 1) and v = σ; for ρ > 0 both depend on the hedge
//! function itself and consistency is restored by damped Picard iteration
//! over the evaluation grid.

use crate::error::{Error, Result};
use crate::feedback::{feedback_volatility, solve_shift_h, ShiftSolveConfig, TradingStrategy};
use crate::levy::LevyMeasure;
use crate::pide::Surface;
use crate::pricing::{BsTransformed, MarketScenario};
use crate::quad::QuadConfig;

/// Option-value surface V(t, S) with a spot delta.
pub trait ValueProvider: Sync {
    fn value(&self, t: f64, spot: f64) -> f64;
    fn delta(&self, t: f64, spot: f64) -> f64;
}

/// Closed-form jump-free provider; exact values and deltas.
pub struct BsProvider {
    pub scenario: MarketScenario,
}

impl ValueProvider for BsProvider {
    fn value(&self, t: f64, spot: f64) -> f64 {
        let o = self.scenario.option;
        if spot <= 1e-12 {
            // Continuous extension at the absorbing boundary; shifted spots
            // S + H can graze zero under strong feedback.
            return zero_spot_value(&self.scenario, t, spot);
        }
        crate::pricing::bs_price(spot, o.strike, o.maturity - t, self.scenario.sigma, self.scenario.rate, o.kind)
            .unwrap_or(f64::NAN)
    }

    fn delta(&self, t: f64, spot: f64) -> f64 {
        let o = self.scenario.option;
        if spot <= 1e-12 {
            return match o.kind {
                crate::pricing::OptionKind::Call => 0.0,
                crate::pricing::OptionKind::Put => -1.0,
            };
        }
        crate::pricing::bs_delta(spot, o.strike, o.maturity - t, self.scenario.sigma, self.scenario.rate, o.kind)
            .unwrap_or(f64::NAN)
    }
}

fn zero_spot_value(scenario: &MarketScenario, t: f64, spot: f64) -> f64 {
    let o = scenario.option;
    let df = (-scenario.rate * (o.maturity - t)).exp();
    match o.kind {
        crate::pricing::OptionKind::Call => 0.0,
        crate::pricing::OptionKind::Put => o.strike * df - spot,
    }
}

/// PIDE-surface provider. Inside the lattice it interpolates the surface;
/// outside, where the solver extends U by zero, it falls back to the
/// closed-form jump-free value, keeping the two consistent. The delta is a
/// central difference over one grid cell in log-moneyness.
pub struct SurfaceProvider<'a> {
    surface: &'a Surface,
    bs: BsTransformed,
}

impl<'a> SurfaceProvider<'a> {
    pub fn new(surface: &'a Surface) -> Self {
        SurfaceProvider { surface, bs: BsTransformed::new(&surface.scenario) }
    }

    fn u_at(&self, tau: f64, x: f64) -> f64 {
        if x.abs() <= self.surface.grid.half_width {
            self.surface.value_at(tau, x).unwrap_or(f64::NAN)
        } else {
            self.bs.value(tau, x)
        }
    }
}

impl ValueProvider for SurfaceProvider<'_> {
    fn value(&self, t: f64, spot: f64) -> f64 {
        let sc = &self.surface.scenario;
        if spot <= 1e-12 {
            return zero_spot_value(sc, t, spot);
        }
        let tau = sc.option.maturity - t;
        let x = (spot / sc.option.strike).ln();
        (-sc.rate * tau).exp() * self.u_at(tau, x)
    }

    fn delta(&self, t: f64, spot: f64) -> f64 {
        let sc = &self.surface.scenario;
        if spot <= 1e-12 {
            return match sc.option.kind {
                crate::pricing::OptionKind::Call => 0.0,
                crate::pricing::OptionKind::Put => -1.0,
            };
        }
        let tau = sc.option.maturity - t;
        let x = (spot / sc.option.strike).ln();
        let h = self.surface.grid.dx();
        let du = (self.u_at(tau, x + h) - self.u_at(tau, x - h)) / (2.0 * h);
        (-sc.rate * tau).exp() * du / spot
    }
}

/// Everything a pointwise hedge evaluation needs.
pub struct HedgeContext<'a> {
    pub provider: &'a dyn ValueProvider,
    pub scenario: MarketScenario,
    pub measure: LevyMeasure,
    pub rho: f64,
    /// Current hedge-function iterate; required when ρ > 0 (H and v depend
    /// on the strategy), ignored for ρ = 0.
    pub hedge_strategy: Option<TradingStrategy>,
    pub quad: QuadConfig,
    pub shift: ShiftSolveConfig,
}

impl<'a> HedgeContext<'a> {
    pub fn frictionless(
        provider: &'a dyn ValueProvider,
        scenario: MarketScenario,
        measure: LevyMeasure,
    ) -> Self {
        HedgeContext {
            provider,
            scenario,
            measure,
            rho: 0.0,
            hedge_strategy: None,
            quad: QuadConfig::default(),
            shift: ShiftSolveConfig::default(),
        }
    }

    fn shift_h(&self, t: f64, z: f64, spot: f64) -> Result<f64> {
        if self.rho == 0.0 {
            return Ok(spot * (z.exp() - 1.0));
        }
        let strat = self.hedge_strategy.as_ref().ok_or_else(|| {
            Error::Parameter("rho > 0 hedging needs a current hedge_strategy iterate".into())
        })?;
        solve_shift_h(t, z, spot, strat, self.rho, &self.shift)
    }

    fn vol(&self, t: f64, spot: f64) -> Result<f64> {
        if self.rho == 0.0 {
            return Ok(self.scenario.sigma);
        }
        let strat = self.hedge_strategy.as_ref().ok_or_else(|| {
            Error::Parameter("rho > 0 hedging needs a current hedge_strategy iterate".into())
        })?;
        feedback_volatility(t, spot, strat, self.rho, self.scenario.sigma)
    }

    /// Absolute error floor for the jump-moment quadratures. Every moment
    /// enters the hedge scaled by β = 1/(v²S² + I₂), so errors far below
    /// σ²S² cannot move the holding.
    fn moment_floor(&self, spot: f64) -> f64 {
        1e-14 * self.scenario.sigma * self.scenario.sigma * spot * spot
    }
}

/// Tracking-error variance rate at candidate holding `a`; direct quadrature
/// of the squared jump mismatch (independent of the moment route used by the
/// minimizer).
pub fn pointwise_objective(ctx: &HedgeContext, t: f64, spot: f64, a: f64) -> Result<f64> {
    let v = ctx.vol(t, spot)?;
    let delta = ctx.provider.delta(t, spot);
    let local = v * v * spot * spot * (delta - a) * (delta - a);
    let vs = ctx.provider.value(t, spot);
    let g = |z: f64| -> f64 {
        if z == 0.0 {
            return 0.0;
        }
        match ctx.shift_h(t, z, spot) {
            Ok(h) => {
                let mis = ctx.provider.value(t, spot + h) - vs - a * h;
                mis * mis
            }
            Err(_) => f64::NAN,
        }
    };
    let jump = ctx.measure.compensated_integral_floor(&g, &ctx.quad, ctx.moment_floor(spot))?;
    if jump.value.is_nan() {
        return Err(Error::Domain("shift solve failed on a quadrature node".into()));
    }
    Ok(local + jump.value)
}

/// The three jump moments (∫ΔV² ν, ∫ΔV·H ν, ∫H² ν) at one point.
fn jump_moments(ctx: &HedgeContext, t: f64, spot: f64) -> Result<(f64, f64, f64)> {
    let vs = ctx.provider.value(t, spot);
    let moment = |f: &dyn Fn(f64, f64) -> f64| -> Result<f64> {
        let g = |z: f64| -> f64 {
            if z == 0.0 {
                return 0.0;
            }
            match ctx.shift_h(t, z, spot) {
                Ok(h) => f(ctx.provider.value(t, spot + h) - vs, h),
                Err(_) => f64::NAN,
            }
        };
        let r = ctx.measure.compensated_integral_floor(&g, &ctx.quad, ctx.moment_floor(spot))?;
        if r.value.is_nan() {
            return Err(Error::Domain("shift solve failed on a quadrature node".into()));
        }
        Ok(r.value)
    };
    let i0 = moment(&|dv, _| dv * dv)?;
    let i1 = moment(&|dv, h| dv * h)?;
    let i2 = moment(&|_, h| h * h)?;
    Ok((i0, i1, i2))
}

/// Minimizer of [`pointwise_objective`] in `a` through the moment route;
/// for ρ > 0 the context must carry the current strategy iterate.
pub fn optimal_strategy_pointwise(ctx: &HedgeContext, t: f64, spot: f64) -> Result<f64> {
    let v = ctx.vol(t, spot)?;
    let delta = ctx.provider.delta(t, spot);
    let (_, i1, i2) = jump_moments(ctx, t, spot)?;
    let vs2 = v * v * spot * spot;
    let beta = 1.0 / (vs2 + i2);
    Ok(beta * (vs2 * delta + i1))
}

/// Stationarity residual |∂_a objective| at `a` (for verification).
pub fn objective_gradient(ctx: &HedgeContext, t: f64, spot: f64, a: f64) -> Result<f64> {
    let v = ctx.vol(t, spot)?;
    let delta = ctx.provider.delta(t, spot);
    let (_, i1, i2) = jump_moments(ctx, t, spot)?;
    let vs2 = v * v * spot * spot;
    Ok(-2.0 * (vs2 * (delta - a) + i1 - a * i2))
}

/// Outer damped Picard iteration for ρ > 0: the hedge function on `spots` is
/// updated through the pointwise minimizer until sup-norm convergence.
/// Returns the converged holdings at `spots`.
pub fn optimal_strategy_fixed_point(
    ctx: &HedgeContext,
    t: f64,
    spots: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    if spots.len() < 2 || spots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("spots must be strictly increasing, length >= 2".into()));
    }
    if ctx.rho == 0.0 {
        return spots.iter().map(|&s| optimal_strategy_pointwise(ctx, t, s)).collect();
    }
    // Start from the frictionless solution.
    let base = HedgeContext { rho: 0.0, hedge_strategy: None, ..*ctx };
    let mut phi: Vec<f64> = spots
        .iter()
        .map(|&s| optimal_strategy_pointwise(&base, t, s))
        .collect::<Result<_>>()?;
    let damping = 0.5;
    for iteration in 0..max_iter {
        let strat = grid_strategy(spots, &phi);
        if ctx.rho * strat.bound >= 1.0 {
            return Err(Error::AssumptionViolation(format!(
                "hedge iterate violates rho * L < 1 (rho L = {})",
                ctx.rho * strat.bound
            )));
        }
        let step = HedgeContext { hedge_strategy: Some(strat), ..*ctx };
        let mut worst: f64 = 0.0;
        let mut next = phi.clone();
        for (j, &s) in spots.iter().enumerate() {
            let target = optimal_strategy_pointwise(&step, t, s)?;
            let updated = (1.0 - damping) * phi[j] + damping * target;
            worst = worst.max((updated - phi[j]).abs());
            next[j] = updated;
        }
        phi = next;
        if worst <= tol {
            return Ok(phi);
        }
        if iteration + 1 == max_iter {
            return Err(Error::NonConvergence {
                context: "hedge outer fixed point".into(),
                residual: worst,
                iterations: max_iter,
            });
        }
    }
    Ok(phi)
}

/// Piecewise-linear strategy through (spots, values), constant beyond the
/// ends; the bound is the sampled sup |S dφ/dS|.
fn grid_strategy(spots: &[f64], values: &[f64]) -> TradingStrategy {
    let xs: Vec<f64> = spots.to_vec();
    let ys: Vec<f64> = values.to_vec();
    let mut bound: f64 = 0.0;
    for j in 1..xs.len() {
        let slope = (ys[j] - ys[j - 1]) / (xs[j] - xs[j - 1]);
        bound = bound.max((xs[j] * slope).abs());
    }
    let (xs2, ys2) = (xs.clone(), ys.clone());
    TradingStrategy::new(
        move |_t, s: f64| {
            if s <= xs2[0] {
                return ys2[0];
            }
            if s >= *xs2.last().unwrap() {
                return *ys2.last().unwrap();
            }
            let j = xs2.partition_point(|&v| v < s).max(1);
            let w = (s - xs2[j - 1]) / (xs2[j] - xs2[j - 1]);
            (1.0 - w) * ys2[j - 1] + w * ys2[j]
        },
        bound,
        1.0,
    )
}

/// First-order expansion φ^ρ ≈ φ⁰ + ρ φ¹ of the variance-minimizing hedge.
///
/// φ¹ = β⁰ [ 2σ²S³ ∂_S V ∂_S φ⁰ + ∫ (V(Se^z) - V(S) + ∂_S V(Se^z) H⁰) H¹ ν(dz) ]
///    + β¹ [ σ²S² ∂_S V + ∫ (V(Se^z) - V(S)) H⁰ ν(dz) ],
/// with H⁰ = S(e^z - 1), H¹ = S(φ⁰(Se^z) - φ⁰(S)),
/// β⁰ = 1/[σ²S² + S²∫(e^z-1)² ν] and
/// β¹ = -(β⁰)² [ 2σ²S³ ∂_S φ⁰ + 2S² ∫ (e^z-1)(φ⁰(Se^z) - φ⁰(S)) ν(dz) ].
/// The shifted-argument delta ∂_S V(Se^z) inside the first integral follows
/// the printed expansion; see the module notes on this ambiguity.
pub fn strategy_first_order(ctx: &HedgeContext, t: f64, spot: f64) -> Result<f64> {
    let base = HedgeContext { rho: 0.0, hedge_strategy: None, ..*ctx };
    let sigma = ctx.scenario.sigma;
    let phi0 = |s: f64| optimal_strategy_pointwise(&base, t, s);
    let phi0_s = phi0(spot)?;
    let h = 1e-4 * spot;
    let dphi0 = (phi0(spot + h)? - phi0(spot - h)?) / (2.0 * h);

    let vs = ctx.provider.value(t, spot);
    let quad = |g: &dyn Fn(f64) -> f64| -> Result<f64> {
        let r = ctx.measure.compensated_integral_floor(g, &ctx.quad, ctx.moment_floor(spot))?;
        if r.value.is_nan() {
            return Err(Error::Domain("first-order quadrature failed".into()));
        }
        Ok(r.value)
    };

    // Cache φ⁰ at shifted spots on a log ladder; each direct evaluation costs
    // three quadratures.
    let big_z = ctx.quad.truncation;
    let n_cache = 241;
    let mut cache_x = Vec::with_capacity(n_cache);
    let mut cache_y = Vec::with_capacity(n_cache);
    for k in 0..n_cache {
        let z = -big_z + 2.0 * big_z * k as f64 / (n_cache - 1) as f64;
        cache_x.push(spot * z.exp());
        cache_y.push(f64::NAN);
    }
    let mut phi0_cached = vec![false; n_cache];
    let mut phi0_at = |s: f64| -> Result<f64> {
        // Nearest-ladder lookup with on-demand fill and linear blend.
        let z = (s / spot).ln();
        let pos = (z + big_z) / (2.0 * big_z) * (n_cache - 1) as f64;
        let j = (pos.floor() as usize).min(n_cache - 2);
        for idx in [j, j + 1] {
            if !phi0_cached[idx] {
                cache_y[idx] = phi0(cache_x[idx])?;
                phi0_cached[idx] = true;
            }
        }
        let w = pos - j as f64;
        Ok((1.0 - w) * cache_y[j] + w * cache_y[j + 1])
    };

    let mut i_h1 = 0.0; // ∫ (ΔV + Δ(Se^z) H⁰) H¹ ν
    let mut i_cross = 0.0; // ∫ (e^z-1)(φ⁰(Se^z)-φ⁰(S)) ν
    let mut i_dv_h0 = 0.0; // ∫ ΔV H⁰ ν
    let mut i_h0sq = 0.0; // ∫ (e^z-1)² ν
    {
        // One pass per moment keeps each quadrature independent.
        let phi_shift = std::cell::RefCell::new(&mut phi0_at);
        let g1 = |z: f64| -> f64 {
            if z == 0.0 {
                return 0.0;
            }
            let s_shift = spot * z.exp();
            let h0 = spot * (z.exp() - 1.0);
            let p = match (phi_shift.borrow_mut())(s_shift) {
                Ok(v) => v,
                Err(_) => return f64::NAN,
            };
            let h1 = spot * (p - phi0_s);
            (ctx.provider.value(t, s_shift) - vs + ctx.provider.delta(t, s_shift) * h0) * h1
        };
        i_h1 = quad(&g1)?;
        let g2 = |z: f64| -> f64 {
            if z == 0.0 {
                return 0.0;
            }
            let p = match (phi_shift.borrow_mut())(spot * z.exp()) {
                Ok(v) => v,
                Err(_) => return f64::NAN,
            };
            (z.exp() - 1.0) * (p - phi0_s)
        };
        i_cross = quad(&g2)?;
    }
    i_dv_h0 = quad(&|z: f64| {
        if z == 0.0 {
            return 0.0;
        }
        (ctx.provider.value(t, spot * z.exp()) - vs) * spot * (z.exp() - 1.0)
    })?;
    i_h0sq = quad(&|z: f64| (z.exp() - 1.0) * (z.exp() - 1.0))?;

    let delta = ctx.provider.delta(t, spot);
    let s2 = spot * spot;
    let beta0 = 1.0 / (sigma * sigma * s2 + s2 * i_h0sq);
    let beta1 = -beta0 * beta0 * (2.0 * sigma * sigma * spot * s2 * dphi0 + 2.0 * s2 * i_cross);
    let phi1 = beta0 * (2.0 * sigma * sigma * spot * s2 * delta * dphi0 + i_h1)
        + beta1 * (sigma * sigma * s2 * delta + i_dv_h0);
    Ok(phi0_s + ctx.rho * phi1)
}

/// Pointwise slope clamp: a forward sweep limiting |S dφ/dS| to `l_cap` on
/// the sampled grid. A projection heuristic, not the true functional
/// constrained minimizer.
pub fn clamp_strategy_slope(spots: &[f64], values: &[f64], l_cap: f64) -> Vec<f64> {
    let mut out = values.to_vec();
    for j in 1..out.len() {
        let dls = (spots[j] / spots[j - 1]).ln();
        let cap = l_cap * dls;
        out[j] = out[j].clamp(out[j - 1] - cap, out[j - 1] + cap);
    }
    out
}
