//! Model primitives: drift, volatility, cost, discount, utilities and
//! liquidation, together with the control sets and growth metadata.
//!
//! Every primitive is a shared closure so that a [`ModelSpec`] is cheap to
//! clone and safe to evaluate from many threads.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{uniform_axis, GridSpec};

pub type DriftFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
pub type VolFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type CostFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type DiscountFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Closed-form maximiser of `a ↦ F(t, x, y, z, a, n)`: `(t, x, y, z, n) ↦ a`.
pub type EffortFn = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Closed interval `[lo, hi]`, possibly a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidInput(format!("bad interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo - 1e-12 && v <= self.hi + 1e-12
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// A monotone utility map with an optional exact inverse on `range`.
#[derive(Clone)]
pub struct Utility {
    name: String,
    forward: ScalarFn,
    inverse: Option<ScalarFn>,
    range: (f64, f64),
}

impl fmt::Debug for Utility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Utility")
            .field("name", &self.name)
            .field("range", &self.range)
            .finish()
    }
}

impl Utility {
    pub fn new(
        name: impl Into<String>,
        forward: impl Fn(f64) -> f64 + Send + Sync + 'static,
        inverse: Option<ScalarFn>,
        range: (f64, f64),
    ) -> Self {
        Self {
            name: name.into(),
            forward: Arc::new(forward),
            inverse,
            range,
        }
    }

    pub fn linear() -> Self {
        Self::new(
            "linear",
            |x| x,
            Some(Arc::new(|y| y)),
            (f64::NEG_INFINITY, f64::INFINITY),
        )
    }

    /// `(1 - exp(-rho x)) / rho`, increasing and concave with supremum `1/rho`.
    pub fn cara(rho: f64) -> Self {
        Self::new(
            format!("cara:{rho}"),
            move |x| -(-rho * x).exp_m1() / rho,
            Some(Arc::new(move |y: f64| -(-rho * y).ln_1p() / rho)),
            (f64::NEG_INFINITY, 1.0 / rho),
        )
    }

    /// Identity clipped to `[-bound, bound]`; the inverse is exact on that range.
    pub fn saturating(bound: f64) -> Self {
        Self::new(
            format!("saturating:{bound}"),
            move |x: f64| x.clamp(-bound, bound),
            Some(Arc::new(|y| y)),
            (-bound, bound),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.forward)(x)
    }

    /// Inverse on the closure of the range; `None` outside it or when no
    /// inverse is known.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        let inv = self.inverse.as_ref()?;
        if y < self.range.0 || y > self.range.1 {
            return None;
        }
        let v = inv(y);
        v.is_finite().then_some(v)
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    /// `sup |U|` when the utility is bounded.
    pub fn sup_abs(&self) -> Option<f64> {
        let (lo, hi) = self.range;
        (lo.is_finite() && hi.is_finite()).then(|| lo.abs().max(hi.abs()))
    }

    /// Clip `y` into the closed range of the utility.
    pub fn clip_to_range(&self, y: f64) -> f64 {
        y.clamp(self.range.0, self.range.1)
    }
}

/// Growth exponents `(ell, m, m_lower)` and bound `kappa`, plus the numeric
/// stand-in `effort_constant` for the existential constant of the effort
/// growth envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthParams {
    pub ell: f64,
    pub m: f64,
    pub m_lower: f64,
    pub kappa: f64,
    pub effort_constant: f64,
}

impl GrowthParams {
    pub fn quadratic(kappa: f64) -> Self {
        Self {
            ell: 1.0,
            m: 1.0,
            m_lower: 1.0,
            kappa,
            effort_constant: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.ell >= 1.0
            && self.m >= self.ell
            && self.m_lower > 0.0
            && self.m_lower <= self.ell + self.m - 1.0
            && self.kappa > 0.0
            && self.effort_constant > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("growth parameters out of range: {self:?}")))
        }
    }

    /// Exponent of `|z|` in the effort envelope.
    pub fn effort_exponent(&self) -> f64 {
        1.0 / (self.m_lower + 1.0 - self.ell)
    }

    /// Exponent of `|z|` in the generator envelope.
    pub fn generator_exponent(&self) -> f64 {
        (self.ell + self.m) / (self.m_lower + 1.0 - self.ell)
    }

    pub fn effort_envelope(&self, z: f64) -> f64 {
        self.effort_constant * (1.0 + z.abs().powf(self.effort_exponent()))
    }
}

/// Closed-form effort maximiser supplied by a preset. `exact` asserts that
/// the rule returns the maximiser of `F(., n)` over the whole effort set.
#[derive(Clone)]
pub struct EffortRule {
    pub rule: EffortFn,
    pub exact: bool,
}

/// Smooth cutoff equal to 1 on `|x| <= m` and 0 on `|x| >= m + 1`.
pub fn cutoff(m: f64, x: f64) -> f64 {
    fn h(s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            (-1.0 / s).exp()
        }
    }
    let s = x.abs() - m;
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let up = h(1.0 - s);
        up / (up + h(s))
    }
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub drift: DriftFn,
    pub vol: VolFn,
    pub cost: CostFn,
    pub discount: DiscountFn,
    pub utility_agent: Utility,
    pub utility_principal: Utility,
    pub liquidation: ScalarFn,
    pub effort_set: Interval,
    pub nature_set: Interval,
    pub growth: GrowthParams,
    pub truncation: f64,
    pub effort_rule: Option<EffortRule>,
    /// Both parties risk neutral and no discounting: the `(z, γ)` radius is
    /// known in closed form.
    pub risk_neutral: bool,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("effort_set", &self.effort_set)
            .field("nature_set", &self.nature_set)
            .field("growth", &self.growth)
            .field("truncation", &self.truncation)
            .field("risk_neutral", &self.risk_neutral)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// A driftless, costless model with unit volatility `σ(n) = n` and linear
    /// utilities; the `with_*` methods replace individual primitives.
    pub fn new(name: impl Into<String>, effort_set: Interval, nature_set: Interval) -> Self {
        Self {
            name: name.into(),
            drift: Arc::new(|_, _, _, _| 0.0),
            vol: Arc::new(|_, _, n| n),
            cost: Arc::new(|_, _, _| 0.0),
            discount: Arc::new(|_, _, _, _| 0.0),
            utility_agent: Utility::linear(),
            utility_principal: Utility::linear(),
            liquidation: Arc::new(|x| x),
            effort_set,
            nature_set,
            growth: GrowthParams::quadratic(1.0),
            truncation: 3.0,
            effort_rule: None,
            risk_neutral: false,
        }
    }

    pub fn with_drift(mut self, f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_vol(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.vol = Arc::new(f);
        self
    }

    pub fn with_cost(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.cost = Arc::new(f);
        self
    }

    pub fn with_discount(mut self, f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.discount = Arc::new(f);
        self
    }

    pub fn with_utilities(mut self, agent: Utility, principal: Utility) -> Self {
        self.utility_agent = agent;
        self.utility_principal = principal;
        self
    }

    pub fn with_liquidation(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.liquidation = Arc::new(f);
        self
    }

    pub fn with_effort_rule(
        mut self,
        exact: bool,
        f: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.effort_rule = Some(EffortRule { rule: Arc::new(f), exact });
        self
    }

    pub fn with_growth(mut self, growth: GrowthParams) -> Self {
        self.growth = growth;
        self
    }

    pub fn with_truncation(mut self, m: f64) -> Self {
        self.truncation = m;
        self
    }

    pub fn with_nature_set(mut self, nature: Interval) -> Self {
        self.nature_set = nature;
        self
    }

    pub fn with_effort_set(mut self, effort: Interval) -> Self {
        self.effort_set = effort;
        self
    }

    pub fn risk_neutral_flag(mut self, flag: bool) -> Self {
        self.risk_neutral = flag;
        self
    }

    #[inline]
    pub fn b(&self, t: f64, x: f64, a: f64, n: f64) -> f64 {
        (self.drift)(t, x, a, n)
    }

    #[inline]
    pub fn sigma(&self, t: f64, x: f64, n: f64) -> f64 {
        (self.vol)(t, x, n)
    }

    #[inline]
    pub fn c(&self, t: f64, x: f64, a: f64) -> f64 {
        (self.cost)(t, x, a)
    }

    #[inline]
    pub fn k(&self, t: f64, x: f64, a: f64, n: f64) -> f64 {
        (self.discount)(t, x, a, n)
    }

    #[inline]
    pub fn liquidate(&self, x: f64) -> f64 {
        (self.liquidation)(x)
    }

    /// Check the model invariants on the nodes of `grid`.
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        self.growth.validate()?;
        if self.effort_set.lo < 0.0 {
            return Err(Error::InvalidModel("effort set must lie in [0, a_bar]".into()));
        }
        if !(self.truncation > 0.0) {
            return Err(Error::InvalidModel("truncation level must be positive".into()));
        }
        let a_grid = uniform_axis(self.effort_set.lo, self.effort_set.hi, grid.a_nodes);
        let n_grid = uniform_axis(self.nature_set.lo, self.nature_set.hi, grid.n_nodes);
        let xs = grid.x_axis();
        let support = self.truncation + 1.0;
        let times: Vec<f64> = if grid.t_steps == 0 {
            vec![0.0]
        } else {
            let stride = (grid.t_steps / 8).max(1);
            (0..=grid.t_steps).step_by(stride).map(|i| grid.time(i)).collect()
        };
        for &t in &times {
            for &x in &xs {
                for &n in &n_grid {
                    let s = self.sigma(t, x, n);
                    let inside = x.abs() < support - 1e-12;
                    if !s.is_finite() || s < 0.0 || (inside && s <= 0.0) {
                        return Err(Error::InvalidModel(format!(
                            "volatility must be positive on |x| < M+1: sigma({t}, {x}, {n}) = {s}"
                        )));
                    }
                    for &a in &a_grid {
                        let k = self.k(t, x, a, n);
                        if !(k.abs() <= self.growth.kappa + 1e-12) {
                            return Err(Error::InvalidModel(format!(
                                "|k({t}, {x}, {a}, {n})| = {} exceeds kappa = {}",
                                k.abs(),
                                self.growth.kappa
                            )));
                        }
                    }
                }
                let costs: Vec<f64> = a_grid.iter().map(|&a| self.c(t, x, a)).collect();
                if costs.iter().any(|c| !c.is_finite() || *c < -1e-12) {
                    return Err(Error::InvalidModel(format!("cost must be nonnegative at t={t}, x={x}")));
                }
                for w in costs.windows(2) {
                    if w[1] < w[0] - 1e-12 {
                        return Err(Error::InvalidModel(format!("cost must be increasing in a at x={x}")));
                    }
                }
                for w in costs.windows(3) {
                    if w[2] - 2.0 * w[1] + w[0] < -1e-12 {
                        return Err(Error::InvalidModel(format!("cost must be convex in a at x={x}")));
                    }
                }
            }
        }
        self.check_agent_inverse()
    }

    /// `U_A(U_A^{-1}(y)) = y` to 1e-12 on a probe set inside the range.
    pub fn check_agent_inverse(&self) -> Result<()> {
        let ua = &self.utility_agent;
        if !ua.has_inverse() {
            return Err(Error::InvalidModel("agent utility needs an inverse".into()));
        }
        let (lo, hi) = ua.range();
        let lo = if lo.is_finite() { lo } else { -10.0 };
        let hi = if hi.is_finite() { hi } else { 10.0 };
        for i in 0..=32 {
            let y = lo + (hi - lo) * (0.01 + 0.98 * i as f64 / 32.0);
            let back = ua
                .inverse(y)
                .map(|x| ua.eval(x))
                .ok_or_else(|| Error::InvalidModel(format!("agent utility inverse undefined at {y}")))?;
            if (back - y).abs() > 1e-12 * (1.0 + y.abs()) {
                return Err(Error::InvalidModel(format!(
                    "agent utility inverse mismatch at {y}: {back}"
                )));
            }
        }
        Ok(())
    }
}

/// Named model constructors selected by the configuration layer.
pub mod presets {
    use super::*;

    /// `b = a`, `σ = n`, `c = a²/2`, `k = 0`, `U_A = U_P = L = id`.
    pub fn risk_neutral(effort_max: f64, nature: Interval, truncation: f64) -> ModelSpec {
        let effort = Interval { lo: 0.0, hi: effort_max };
        let a_hi = effort_max;
        ModelSpec::new("risk_neutral", effort, nature)
            .with_drift(|_, _, a, _| a)
            .with_vol(|_, _, n| n)
            .with_cost(|_, _, a| 0.5 * a * a)
            .with_truncation(truncation)
            .with_effort_rule(true, move |_, _, _, z, _| z.clamp(0.0, a_hi))
            .risk_neutral_flag(true)
    }

    /// Bounded-domain quadratic-cost model: `b = a φ(x)`, `σ = n φ(x)` with
    /// the smooth cutoff φ at level `truncation`, `c = a²/2`, `k = 0`, a
    /// saturating agent utility bounded by `utility_bound` and an exponential
    /// principal utility with risk aversion `risk_aversion`.
    pub fn quadratic_bounded(
        effort_max: f64,
        nature: Interval,
        truncation: f64,
        utility_bound: f64,
        risk_aversion: f64,
    ) -> ModelSpec {
        let effort = Interval { lo: 0.0, hi: effort_max };
        let m = truncation;
        ModelSpec::new("quadratic_bounded", effort, nature)
            .with_drift(move |_, x, a, _| a * cutoff(m, x))
            .with_vol(move |_, x, n| n * cutoff(m, x))
            .with_cost(|_, _, a| 0.5 * a * a)
            .with_utilities(Utility::saturating(utility_bound), Utility::cara(risk_aversion))
            .with_truncation(truncation)
            .with_effort_rule(true, move |_, x, _, z, _| (z * cutoff(m, x)).clamp(0.0, effort_max))
    }

    /// Driftless and costless model with constant discount rate.
    pub fn martingale(nature: Interval, discount: f64, truncation: f64) -> ModelSpec {
        let kappa = discount.abs().max(1e-12);
        ModelSpec::new("martingale", Interval::point(0.0), nature)
            .with_discount(move |_, _, _, _| discount)
            .with_truncation(truncation)
            .with_growth(GrowthParams::quadratic(kappa))
            .with_effort_rule(true, |_, _, _, _, _| 0.0)
    }

    /// Piecewise-linear table `(x_i, y_i)` with flat extension.
    #[derive(Debug, Clone, PartialEq)]
    pub struct Table {
        xs: Vec<f64>,
        ys: Vec<f64>,
    }

    impl Table {
        pub fn new(points: &[(f64, f64)]) -> Result<Self> {
            if points.len() < 2 {
                return Err(Error::InvalidModel("table needs at least two points".into()));
            }
            if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return Err(Error::InvalidModel("table abscissae must increase".into()));
            }
            Ok(Self {
                xs: points.iter().map(|p| p.0).collect(),
                ys: points.iter().map(|p| p.1).collect(),
            })
        }

        pub fn eval(&self, x: f64) -> f64 {
            let n = self.xs.len();
            if x <= self.xs[0] {
                return self.ys[0];
            }
            if x >= self.xs[n - 1] {
                return self.ys[n - 1];
            }
            let i = self.xs.partition_point(|&v| v <= x) - 1;
            let w = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
            self.ys[i] + w * (self.ys[i + 1] - self.ys[i])
        }

        pub fn domain(&self) -> (f64, f64) {
            (self.xs[0], self.xs[self.xs.len() - 1])
        }
    }

    #[derive(Debug, Clone)]
    pub struct TabulatedParams {
        /// `(a, b)` effort-to-drift table; the drift is cut off outside `|x| <= M+1`.
        pub drift: Table,
        /// `(n, σ)` nature-to-volatility table.
        pub vol: Table,
        /// `(a, c)` effort cost table.
        pub cost: Table,
        pub discount: f64,
        pub utility_agent: Utility,
        pub utility_principal: Utility,
        pub liquidation_slope: f64,
        pub truncation: f64,
    }

    pub fn custom_tabulated(p: TabulatedParams) -> ModelSpec {
        let (a_lo, a_hi) = p.cost.domain();
        let (n_lo, n_hi) = p.vol.domain();
        let m = p.truncation;
        let (drift, vol, cost) = (p.drift, p.vol, p.cost);
        let k = p.discount;
        let slope = p.liquidation_slope;
        ModelSpec::new("custom_tabulated", Interval { lo: a_lo, hi: a_hi }, Interval { lo: n_lo, hi: n_hi })
            .with_drift(move |_, x, a, _| drift.eval(a) * cutoff(m, x))
            .with_vol(move |_, x, n| vol.eval(n) * cutoff(m, x))
            .with_cost(move |_, _, a| cost.eval(a))
            .with_discount(move |_, _, _, _| k)
            .with_utilities(p.utility_agent, p.utility_principal)
            .with_liquidation(move |x| slope * x)
            .with_truncation(m)
            .with_growth(GrowthParams::quadratic(k.abs().max(1e-12)))
    }
}
