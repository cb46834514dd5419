//! Closed-form pricers: Black-Scholes prices/deltas and the jump-diffusion
//! series price. These double as acceptance oracles for the PIDE solver.

use crate::error::{Error, Result};
use crate::levy::LevyMeasure;
use crate::special::{norm_cdf, norm_pdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Call,
    Put,
}

impl OptionKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptionKind::Call => "call",
            OptionKind::Put => "put",
        }
    }

    pub fn payoff(&self, spot: f64, strike: f64) -> f64 {
        match self {
            OptionKind::Call => (spot - strike).max(0.0),
            OptionKind::Put => (strike - spot).max(0.0),
        }
    }
}

/// European option contract: strike (currency), maturity (years), kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EuropeanOption {
    pub strike: f64,
    pub maturity: f64,
    pub kind: OptionKind,
}

impl EuropeanOption {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike.is_finite() && self.strike > 0.0) {
            return Err(Error::Parameter(format!("strike must be > 0, got {}", self.strike)));
        }
        if !(self.maturity.is_finite() && self.maturity > 0.0) {
            return Err(Error::Parameter(format!("maturity must be > 0, got {}", self.maturity)));
        }
        Ok(())
    }
}

/// All scalar market inputs of a pricing run in one place.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketScenario {
    /// Diffusion volatility, per sqrt(year).
    pub sigma: f64,
    /// Risk-free rate, per year.
    pub rate: f64,
    /// Price-impact (liquidity) parameter ρ ≥ 0.
    pub rho_liquidity: f64,
    pub option: EuropeanOption,
}

impl MarketScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Parameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::Parameter(format!("rate must be >= 0, got {}", self.rate)));
        }
        if !(self.rho_liquidity.is_finite() && self.rho_liquidity >= 0.0) {
            return Err(Error::Parameter(format!(
                "rho_liquidity must be >= 0, got {}",
                self.rho_liquidity
            )));
        }
        self.option.validate()
    }
}

fn d12(spot: f64, strike: f64, tau: f64, sigma: f64, rate: f64) -> (f64, f64) {
    let vol = sigma * tau.sqrt();
    let d1 = ((spot / strike).ln() + (rate + 0.5 * sigma * sigma) * tau) / vol;
    (d1, d1 - vol)
}

/// Black-Scholes price at time-to-maturity `tau`. `tau = 0` returns the payoff.
pub fn bs_price(spot: f64, strike: f64, tau: f64, sigma: f64, rate: f64, kind: OptionKind) -> Result<f64> {
    if !(spot.is_finite() && spot > 0.0) {
        return Err(Error::Domain(format!("spot must be > 0, got {spot}")));
    }
    if tau < 0.0 {
        return Err(Error::Domain("time to maturity must be >= 0".into()));
    }
    if tau == 0.0 || sigma * tau.sqrt() < 1e-14 {
        // Degenerate-volatility limit: discounted forward payoff.
        let call = (spot - strike * (-rate * tau).exp()).max(0.0);
        return Ok(match kind {
            OptionKind::Call => call,
            OptionKind::Put => call - spot + strike * (-rate * tau).exp(),
        });
    }
    let (d1, d2) = d12(spot, strike, tau, sigma, rate);
    let call = spot * norm_cdf(d1) - strike * (-rate * tau).exp() * norm_cdf(d2);
    Ok(match kind {
        OptionKind::Call => call,
        // Put-call parity: P = C - S + K e^{-r tau}.
        OptionKind::Put => call - spot + strike * (-rate * tau).exp(),
    })
}

/// ∂V/∂S of `bs_price` at time-to-maturity `tau`.
pub fn bs_delta(spot: f64, strike: f64, tau: f64, sigma: f64, rate: f64, kind: OptionKind) -> Result<f64> {
    if !(spot.is_finite() && spot > 0.0) {
        return Err(Error::Domain(format!("spot must be > 0, got {spot}")));
    }
    if tau <= 0.0 || sigma * tau.sqrt() < 1e-14 {
        let fwd_itm = spot > strike * (-rate * tau).exp();
        return Ok(match kind {
            OptionKind::Call => {
                if fwd_itm {
                    1.0
                } else {
                    0.0
                }
            }
            OptionKind::Put => {
                if fwd_itm {
                    0.0
                } else {
                    -1.0
                }
            }
        });
    }
    let (d1, _) = d12(spot, strike, tau, sigma, rate);
    Ok(match kind {
        OptionKind::Call => norm_cdf(d1),
        OptionKind::Put => norm_cdf(d1) - 1.0,
    })
}

impl MarketScenario {
    /// Price at t = 0 (full maturity on the clock).
    pub fn bs_price(&self, spot: f64) -> Result<f64> {
        self.validate()?;
        bs_price(spot, self.option.strike, self.option.maturity, self.sigma, self.rate, self.option.kind)
    }

    pub fn bs_delta(&self, spot: f64) -> Result<f64> {
        self.validate()?;
        bs_delta(spot, self.option.strike, self.option.maturity, self.sigma, self.rate, self.option.kind)
    }
}

/// Undiscounted transformed solution u(τ, x) = e^{rτ} V(T-τ, K e^x) of the
/// jump-free equation, together with its first two x-derivatives.
///
/// Call case: u = K e^{x+rτ} N(d1) - K N(d2) with d_{1,2} = (x + (r ± σ²/2)τ)/(σ√τ);
/// ∂_x u = K e^{x+rτ} N(d1) and ∂²_x u = K e^{x+rτ} (N(d1) + n(d1)/(σ√τ)).
/// Put values follow from parity in u-space: u_c - u_p = K e^{x+rτ} - K.
#[derive(Debug, Clone, Copy)]
pub struct BsTransformed {
    pub strike: f64,
    pub sigma: f64,
    pub rate: f64,
    pub kind: OptionKind,
}

impl BsTransformed {
    pub fn new(scenario: &MarketScenario) -> Self {
        BsTransformed {
            strike: scenario.option.strike,
            sigma: scenario.sigma,
            rate: scenario.rate,
            kind: scenario.option.kind,
        }
    }

    #[inline]
    fn d1(&self, tau: f64, x: f64) -> f64 {
        let vol = self.sigma * tau.sqrt();
        (x + (self.rate + 0.5 * self.sigma * self.sigma) * tau) / vol
    }

    /// u(τ, x); at τ = 0 this is the transformed payoff.
    pub fn value(&self, tau: f64, x: f64) -> f64 {
        let k = self.strike;
        if tau <= 0.0 {
            return self.kind.payoff(k * x.exp(), k);
        }
        let d1 = self.d1(tau, x);
        let d2 = d1 - self.sigma * tau.sqrt();
        let call = k * (x + self.rate * tau).exp() * norm_cdf(d1) - k * norm_cdf(d2);
        match self.kind {
            OptionKind::Call => call,
            OptionKind::Put => call - k * (x + self.rate * tau).exp() + k,
        }
    }

    /// ∂u/∂x(τ, x).
    pub fn dx(&self, tau: f64, x: f64) -> f64 {
        let k = self.strike;
        if tau <= 0.0 {
            let grad_call = if x > 0.0 { k * x.exp() } else { 0.0 };
            return match self.kind {
                OptionKind::Call => grad_call,
                OptionKind::Put => grad_call - k * x.exp(),
            };
        }
        let first = k * (x + self.rate * tau).exp() * norm_cdf(self.d1(tau, x));
        match self.kind {
            OptionKind::Call => first,
            OptionKind::Put => first - k * (x + self.rate * tau).exp(),
        }
    }

    /// ∂²u/∂x²(τ, x); only meaningful for τ > 0.
    pub fn dxx(&self, tau: f64, x: f64) -> f64 {
        let k = self.strike;
        let d1 = self.d1(tau, x);
        let second =
            k * (x + self.rate * tau).exp() * (norm_cdf(d1) + norm_pdf(d1) / (self.sigma * tau.sqrt()));
        match self.kind {
            OptionKind::Call => second,
            OptionKind::Put => second - k * (x + self.rate * tau).exp(),
        }
    }
}

/// Result of the truncated series price: value plus the magnitude of the last
/// term added, as a truncation estimate.
#[derive(Debug, Clone, Copy)]
pub struct SeriesPrice {
    pub price: f64,
    pub last_term: f64,
    pub terms_used: usize,
}

/// Jump-diffusion price as a Poisson-weighted sum of Black-Scholes prices:
///
/// C = e^{-rT} Σ_j e^{-λT} (λT)^j / j! · e^{r_j T} C_BS(S0 e^{jδ²/2}, K, T, σ_j, r_j),
/// with r_j = r - λ(e^{m+δ²/2}-1) + jm/T and σ_j = √(σ² + jδ²/T).
///
/// Conditional on j jumps the log-price is Gaussian with variance σ²T + jδ²
/// and mean ln S0 + (r - λ(e^{m+δ²/2}-1))T + jm, which pins the spot
/// adjustment at e^{jδ²/2}. Puts are priced via parity.
pub fn merton_series_price(
    spot: f64,
    scenario: &MarketScenario,
    measure: &LevyMeasure,
    max_terms: usize,
) -> Result<SeriesPrice> {
    scenario.validate()?;
    measure.validate()?;
    let LevyMeasure::Merton { lambda, m, delta } = *measure else {
        return Err(Error::FamilyMismatch {
            expected: "merton".into(),
            got: measure.family_name().into(),
        });
    };
    if !(spot.is_finite() && spot > 0.0) {
        return Err(Error::Domain(format!("spot must be > 0, got {spot}")));
    }
    let t = scenario.option.maturity;
    let k = scenario.option.strike;
    let (sigma, r) = (scenario.sigma, scenario.rate);
    let kbar = (m + 0.5 * delta * delta).exp() - 1.0;

    let mut total = 0.0;
    let mut weight = (-lambda * t).exp(); // e^{-λT} (λT)^j / j!
    let mut last_term = 0.0;
    let mut terms = 0usize;
    for j in 0..=max_terms {
        let jf = j as f64;
        let r_j = r - lambda * kbar + jf * m / t;
        let sigma_j = (sigma * sigma + jf * delta * delta / t).sqrt();
        let spot_j = spot * (0.5 * jf * delta * delta).exp();
        let call_j = bs_price(spot_j, k, t, sigma_j, r_j, OptionKind::Call)?;
        let term = weight * (r_j * t).exp() * call_j;
        total += term;
        last_term = term.abs();
        terms = j + 1;
        if j > (lambda * t) as usize && last_term < 1e-14 * total.abs() {
            break;
        }
        weight *= lambda * t / (jf + 1.0);
    }
    let call = (-r * t).exp() * total;
    let price = match scenario.option.kind {
        OptionKind::Call => call,
        OptionKind::Put => call - spot + k * (-r * t).exp(),
    };
    Ok(SeriesPrice { price, last_term, terms_used: terms })
}
