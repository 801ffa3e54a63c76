//! Closed-form predictions: conditional birth-process tails, quasi-limiting
//! distributions, loser-wealth tails and correlation constants, sub-linear
//! tail bands, and monopoly-time exponents.
//!
//! Expectations over the minimum explosion time are deterministic trapezoid
//! quadratures over a uniform grid; grid evaluation is chunked across
//! threads with a fixed reduction order, so results do not depend on the
//! worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::density::{ExplosionModel, DEFAULT_TRUNCATION};
use crate::error::{Error, Result};
use crate::numeric::Accumulator;
use crate::rates::{RateFunction, SumPower};

/// One agent of an urn system: a feedback function and an initial count.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub rate: RateFunction,
    pub x0: u64,
}

/// A full model configuration of at least two agents. The discrete sampler
/// runs on any system; the exponential embedding and every monopoly-regime
/// prediction additionally require at least one explosive agent
/// ([`UrnSystem::require_strong_monopoly`]).
#[derive(Debug, Clone, PartialEq)]
pub struct UrnSystem {
    agents: Vec<Agent>,
}

impl UrnSystem {
    pub fn new(agents: Vec<Agent>) -> Result<Self> {
        if agents.len() < 2 {
            return Err(Error::Domain(format!(
                "an urn system needs at least 2 agents, got {}",
                agents.len()
            )));
        }
        for (i, a) in agents.iter().enumerate() {
            if a.x0 < 1 {
                return Err(Error::Domain(format!(
                    "agent {} initial count must be >= 1",
                    i + 1
                )));
            }
            // explosiveness must be decidable for every agent
            a.rate.is_explosive()?;
        }
        Ok(UrnSystem { agents })
    }

    /// At least one agent explosive: the regime where all results on losers
    /// and monopoly times apply.
    pub fn require_strong_monopoly(&self) -> Result<()> {
        if self
            .agents
            .iter()
            .any(|a| a.rate.is_explosive().unwrap_or(false))
        {
            Ok(())
        } else {
            Err(Error::Domain(
                "no agent satisfies the explosion criterion; the system has no strong monopoly"
                    .into(),
            ))
        }
    }

    /// `count` identical agents.
    pub fn symmetric(rate: RateFunction, x0: u64, count: usize) -> Result<Self> {
        Self::new(vec![Agent { rate, x0 }; count])
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn explosive_indices(&self) -> Vec<usize> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.rate.is_explosive().unwrap_or(false))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.agents.iter().all(|a| *a == self.agents[0])
    }
}

/// Deterministic quadrature settings for expectations against the minimum
/// explosion time. Defaults mirror the reference numerics: bandwidth 1e-4 on
/// [0, 50] with the explosion-time series truncated after 100 summands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureParams {
    pub step: f64,
    pub s_max: f64,
    /// Mass allowed beyond `s_max`; the grid extends until the minimum's
    /// survival at `s_max` drops below this.
    pub tail_mass_bound: f64,
    pub auto_extend: bool,
    /// Truncation depth of each agent's explosion-time series.
    pub truncation: usize,
}

impl Default for QuadratureParams {
    fn default() -> Self {
        QuadratureParams {
            step: 1e-4,
            s_max: 50.0,
            tail_mass_bound: 1e-8,
            auto_extend: true,
            truncation: DEFAULT_TRUNCATION,
        }
    }
}

impl QuadratureParams {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.s_max > self.step) || self.truncation < 1 {
            return Err(Error::Domain(format!(
                "bad quadrature parameters: step {}, s_max {}, truncation {}",
                self.step, self.s_max, self.truncation
            )));
        }
        Ok(())
    }

    /// Resolves the grid end, extending while `P(min > s_max)` exceeds the
    /// tail mass bound.
    fn resolve_s_max(&self, models: &[&ExplosionModel]) -> Result<f64> {
        let mut s_max = self.s_max;
        if !self.auto_extend {
            return Ok(s_max);
        }
        loop {
            let mut tail = 1.0f64;
            for m in models {
                tail *= m.survival(s_max)?;
            }
            if tail <= self.tail_mass_bound || s_max >= 400.0 {
                return Ok(s_max);
            }
            s_max *= 1.5;
        }
    }
}

/// Density and survival of one model tabulated on the s-grid.
struct ModelGrid {
    g: Vec<f64>,
    surv: Vec<f64>,
}

fn build_grid(model: &ExplosionModel, n_points: usize, h: f64) -> ModelGrid {
    let pairs: Vec<(f64, f64)> = (0..n_points)
        .into_par_iter()
        .map(|i| model.zhu().density_survival(i as f64 * h))
        .collect();
    ModelGrid {
        g: pairs.iter().map(|p| p.0).collect(),
        surv: pairs.iter().map(|p| p.1).collect(),
    }
}

fn trapezoid_weights(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// Builds one `ExplosionModel` per distinct `(rate, x0)` among the selected
/// agents, returning per-agent indices into the unique models.
fn unique_models(
    agents: &[&Agent],
    truncation: usize,
) -> Result<(Vec<ExplosionModel>, Vec<usize>)> {
    let mut models: Vec<ExplosionModel> = Vec::new();
    let mut keys: Vec<&Agent> = Vec::new();
    let mut index = Vec::with_capacity(agents.len());
    for a in agents {
        match keys.iter().position(|k| *k == *a) {
            Some(i) => index.push(i),
            None => {
                keys.push(a);
                models.push(ExplosionModel::with_truncation(
                    a.rate.clone(),
                    a.x0,
                    truncation,
                )?);
                index.push(models.len() - 1);
            }
        }
    }
    Ok((models, index))
}

// ---------------------------------------------------------------------------
// Tail predictions
// ---------------------------------------------------------------------------

/// Asymptotic shape of a survival function, with the evaluated constant when
/// one is available (`None` means the statement pins the exponent only).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailKind {
    /// `constant * x^exponent`
    Power { exponent: f64, constant: Option<f64> },
    /// `constant * exp(-rate * x)`
    ExponentialRate { rate: f64, constant: Option<f64> },
    /// `constant * ln(x)^exponent`
    LogPower { exponent: f64, constant: Option<f64> },
    /// `constant * x^exponent * ln(x)^log_exponent`
    PowerLog {
        exponent: f64,
        log_exponent: f64,
        constant: Option<f64>,
    },
    /// `exp(-scale * x^exponent)` with the scale known up to a band
    Stretched {
        exponent: f64,
        scale_lower: f64,
        scale_upper: f64,
    },
    /// Pointwise band `[lower, upper]` for `-log P(X > x)` at a given x
    Band { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailPrediction {
    #[serde(flatten)]
    pub kind: TailKind,
    pub conditioning: String,
    pub flags: Vec<String>,
}

impl TailPrediction {
    pub fn new(kind: TailKind, conditioning: impl Into<String>) -> Self {
        TailPrediction {
            kind,
            conditioning: conditioning.into(),
            flags: Vec::new(),
        }
    }

    pub fn with_flag(mut self, flag: &str) -> Self {
        self.flags.push(flag.to_string());
        self
    }

    /// JSON-lines record.
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("prediction serializes")
    }

    /// Predicted survival at `x`, when the kind and constant define one.
    pub fn survival_at(&self, x: f64) -> Option<f64> {
        match &self.kind {
            TailKind::Power { exponent, constant } => {
                constant.map(|c| c * x.powf(*exponent))
            }
            TailKind::ExponentialRate { rate, constant } => {
                constant.map(|c| c * (-rate * x).exp())
            }
            TailKind::LogPower { exponent, constant } => {
                constant.map(|c| c * x.ln().powf(*exponent))
            }
            TailKind::PowerLog {
                exponent,
                log_exponent,
                constant,
            } => constant.map(|c| c * x.powf(*exponent) * x.ln().powf(*log_exponent)),
            TailKind::Stretched { .. } | TailKind::Band { .. } => None,
        }
    }
}

/// Maps a rate family to the asymptotic class of `C * sum_{k>x} 1/F(k)`.
fn conditional_tail_kind(rate: &RateFunction, c: f64) -> TailKind {
    match rate {
        RateFunction::Polynomial { alpha, beta } => TailKind::Power {
            exponent: 1.0 - beta,
            constant: Some(c / (alpha * (beta - 1.0))),
        },
        RateFunction::Exponential { beta } => TailKind::ExponentialRate {
            rate: *beta,
            constant: Some(c / (1.0 - (-beta).exp())),
        },
        RateFunction::PolyLog { beta } => TailKind::LogPower {
            exponent: 1.0 - beta,
            constant: Some(c / (beta - 1.0)),
        },
        RateFunction::Constant { .. } => TailKind::Power {
            exponent: f64::NEG_INFINITY,
            constant: None,
        },
        RateFunction::Tabulated { tail, .. } => match tail {
            Some(t) => conditional_tail_kind(t, c),
            None => TailKind::Power {
                exponent: f64::NAN,
                constant: None,
            },
        },
    }
}

// ---------------------------------------------------------------------------
// Birth-process predictions
// ---------------------------------------------------------------------------

/// Predicted `P(Xi(t) > x | T > t)`: the hazard prefactor times the
/// reciprocal tail sum.
pub fn birth_tail(model: &ExplosionModel, t: f64, x: u64) -> Result<f64> {
    if x < model.x0() {
        return Err(Error::Domain(format!(
            "x = {x} is below the initial state {}",
            model.x0()
        )));
    }
    let prefactor = model.hazard_prefactor(t)?;
    let tail = model.rate_function().tail_sum(x, SumPower::One)?;
    Ok(prefactor * tail.value)
}

/// Whether `E[Xi(t)^r | T > t]` is finite, i.e. whether `sum k^r / F(k)`
/// converges.
pub fn moment_exists(rate: &RateFunction, r: f64) -> Result<bool> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("moment order must be > 0, got {r}")));
    }
    if !rate.is_explosive()? {
        return Err(Error::Domain(
            "conditional moments require an explosive rate function".into(),
        ));
    }
    rate.reciprocal_moment_finite(r)
}

/// Quasi-limiting tail `lim_{t->inf} P(Xi(t) > x | T > t)
/// = 1 - prod_{k>x} (1 - F(x0)/F(k))`, with the log-product truncated under
/// a remainder bound of 1e-10.
pub fn quasi_limit_tail(rate: &RateFunction, x0: u64, x: u64) -> Result<f64> {
    if x0 < 1 || x < x0 {
        return Err(Error::Domain(format!(
            "need x >= x0 >= 1, got x0 = {x0}, x = {x}"
        )));
    }
    if !rate.is_explosive()? {
        return Err(Error::Domain(
            "the quasi-limiting distribution requires an explosive rate function".into(),
        ));
    }
    if !rate.strictly_increasing() {
        return Err(Error::Domain(
            "the quasi-limiting tail formula requires strictly monotone feedback".into(),
        ));
    }
    let lam = rate.evaluate(x0)?;
    let cut = x + 2048;
    let mut log_sum = Accumulator::new();
    for k in x + 1..=cut {
        let q = lam / rate.evaluate(k)?;
        log_sum.add((-q).ln_1p());
    }
    // remaining log terms: -lam T1 - lam^2/2 T2 - O(q^3) with explicit bound
    let t1 = rate.tail_sum_with_tolerance(cut, SumPower::One, 1e-13)?;
    let t2 = rate.tail_sum_with_tolerance(cut, SumPower::Two, 1e-13)?;
    log_sum.add(-lam * t1.value);
    log_sum.add(-0.5 * lam * lam * t2.value);
    let q_max = lam / rate.evaluate(cut + 1)?;
    let third_order = q_max * q_max * lam * t1.value / (3.0 * (1.0 - q_max));
    debug_assert!(third_order < 1e-10);
    Ok(-log_sum.total().exp_m1())
}

/// The exponential-envelope constant `C` in `P(T > s) <= C exp(-F(x0) s)`:
/// `C = prod_{l>x0} F(l) / (F(l) - F(x0))`.
pub(crate) fn ttail_constant(rate: &RateFunction, x0: u64) -> Result<f64> {
    let stay = 1.0 - quasi_limit_tail(rate, x0, x0)?;
    Ok(1.0 / stay)
}

// ---------------------------------------------------------------------------
// Loser tails
// ---------------------------------------------------------------------------

/// Tail of a losing explosive agent's final wealth, with the constants
/// evaluated by quadrature.
#[derive(Debug, Clone)]
pub struct LoserTail {
    pub agent: usize,
    /// `E[g_i(S)]`, the mass-function prefactor.
    pub mass_constant: f64,
    /// `P(T_i > S)`, the probability that agent i loses.
    pub lose_probability: f64,
    /// `E[g_i(S)] / P(T_i > S)`, the conditional-tail prefactor.
    pub conditional_constant: f64,
    pub prediction: TailPrediction,
    rate: RateFunction,
}

impl LoserTail {
    /// Predicted `P(X_i(inf) = x)`.
    pub fn mass_at(&self, x: u64) -> Result<f64> {
        Ok(self.mass_constant / self.rate.evaluate(x)?)
    }

    /// Predicted `P(X_i(inf) > x | agent i loses)`.
    pub fn conditional_tail_at(&self, x: u64) -> Result<f64> {
        Ok(self.conditional_constant * self.rate.tail_sum(x, SumPower::One)?.value)
    }
}

/// Computes the loser-wealth tail of explosive agent `i`:
/// `P(X_i(inf) = x) ~ E[g_i(S)] / F_i(x)` with `S = min_{j != i} T_j`.
pub fn loser_tail(system: &UrnSystem, agent: usize, quad: &QuadratureParams) -> Result<LoserTail> {
    quad.validate()?;
    let agents = system.agents();
    if agent >= agents.len() {
        return Err(Error::Domain(format!("no agent #{}", agent + 1)));
    }
    if !agents[agent].rate.is_explosive()? {
        return Err(Error::Domain(
            "agent is not explosive; use the sub-linear band instead".into(),
        ));
    }
    let others: Vec<&Agent> = agents
        .iter()
        .enumerate()
        .filter(|(j, a)| *j != agent && a.rate.is_explosive().unwrap_or(false))
        .map(|(_, a)| a)
        .collect();
    if others.is_empty() {
        return Err(Error::Domain(
            "the loser tail needs at least one other explosive agent \
             (otherwise this agent wins almost surely)"
                .into(),
        ));
    }
    let own = ExplosionModel::with_truncation(
        agents[agent].rate.clone(),
        agents[agent].x0,
        quad.truncation,
    )?;
    let (models, idx) = unique_models(&others, quad.truncation)?;
    let mut all_refs: Vec<&ExplosionModel> = models.iter().collect();
    all_refs.push(&own);
    let s_max = quad.resolve_s_max(&all_refs)?;
    let n = (s_max / quad.step).ceil() as usize + 1;
    let grids: Vec<ModelGrid> = models.iter().map(|m| build_grid(m, n, quad.step)).collect();
    let own_grid = build_grid(&own, n, quad.step);

    let mut e_g = Accumulator::new();
    let mut p_lose = Accumulator::new();
    for i in 0..n {
        let w = trapezoid_weights(i, n);
        // density of the minimum of the other agents' explosion times
        let mut f_s = 0.0;
        for j in 0..others.len() {
            let mut term = grids[idx[j]].g[i];
            for (k, other_idx) in idx.iter().enumerate() {
                if k != j {
                    term *= grids[*other_idx].surv[i];
                }
            }
            f_s += term;
        }
        e_g.add(w * own_grid.g[i] * f_s);
        p_lose.add(w * own_grid.surv[i] * f_s);
    }
    let mass_constant = e_g.total() * quad.step;
    let lose_probability = p_lose.total() * quad.step;
    let conditional_constant = mass_constant / lose_probability;
    let kind = conditional_tail_kind(&agents[agent].rate, conditional_constant);
    let prediction = TailPrediction::new(
        kind,
        format!(
            "P(X_{}(inf) > x | agent {} loses)",
            agent + 1,
            agent + 1
        ),
    );
    Ok(LoserTail {
        agent,
        mass_constant,
        lose_probability,
        conditional_constant,
        prediction,
        rate: agents[agent].rate.clone(),
    })
}

// ---------------------------------------------------------------------------
// Correlation constants
// ---------------------------------------------------------------------------

/// The residual tail-dependence constant `c(A, a)` among the first `a`
/// losers, all expectations taken against `S = min{T_i : i > a}`:
///
/// `c = E[prod g_i(S)] * P(all of 1..a lose)^(a-1)
///      / prod_i E[(prod_{j != i} G_j(S)) g_i(S)]`.
pub fn correlation_constant(
    system: &UrnSystem,
    a: usize,
    quad: &QuadratureParams,
) -> Result<f64> {
    let total = system.len();
    if a < 1 || a >= total {
        return Err(Error::Domain(format!(
            "a must lie in [1, A-1] = [1, {}], got {a}",
            total - 1
        )));
    }
    for i in 0..a {
        if !system.agents()[i].rate.is_explosive()? {
            return Err(Error::Domain(format!(
                "agent {} must be explosive for the correlation constant",
                i + 1
            )));
        }
    }
    if !system.agents()[a..]
        .iter()
        .any(|ag| ag.rate.is_explosive().unwrap_or(false))
    {
        return Err(Error::Domain(
            "at least a+1 agents must be explosive (none found beyond the first a)".into(),
        ));
    }
    if a == 1 {
        return Ok(1.0);
    }
    if system.is_symmetric() {
        let ag = &system.agents()[0];
        return symmetric_correlation_constant(&ag.rate, ag.x0, total as u64, a as u32, quad);
    }
    correlation_constant_general(system, a, quad)
}

/// Shared quadrature core: with `S = min` over the explosive agents beyond
/// the first `a`, returns `E[prod_i g_i(S)]`, `P(all of 1..a lose)` and the
/// per-agent `E[(prod_{j != i} G_j(S)) g_i(S)]`.
struct FrontTailExpectations {
    joint: f64,
    p_lose_all: f64,
    per_agent: Vec<f64>,
}

fn front_tail_expectations(
    system: &UrnSystem,
    a: usize,
    quad: &QuadratureParams,
) -> Result<FrontTailExpectations> {
    quad.validate()?;
    let agents = system.agents();
    let front: Vec<&Agent> = agents[..a].iter().collect();
    let tail_explosive: Vec<&Agent> = agents[a..]
        .iter()
        .filter(|ag| ag.rate.is_explosive().unwrap_or(false))
        .collect();
    if tail_explosive.is_empty() {
        return Err(Error::Domain(
            "at least a+1 agents must be explosive (none found beyond the first a)".into(),
        ));
    }
    let (front_models, front_idx) = unique_models(&front, quad.truncation)?;
    let (tail_models, tail_idx) = unique_models(&tail_explosive, quad.truncation)?;
    let all_refs: Vec<&ExplosionModel> = front_models.iter().chain(tail_models.iter()).collect();
    let s_max = quad.resolve_s_max(&all_refs)?;
    let n = (s_max / quad.step).ceil() as usize + 1;
    let front_grids: Vec<ModelGrid> = front_models
        .iter()
        .map(|m| build_grid(m, n, quad.step))
        .collect();
    let tail_grids: Vec<ModelGrid> = tail_models
        .iter()
        .map(|m| build_grid(m, n, quad.step))
        .collect();

    let mut joint = Accumulator::new();
    let mut p_cap = Accumulator::new();
    let mut dens = vec![Accumulator::new(); a];
    for i in 0..n {
        let w = trapezoid_weights(i, n);
        let mut f_s = 0.0;
        for j in 0..tail_explosive.len() {
            let mut term = tail_grids[tail_idx[j]].g[i];
            for (k, t_idx) in tail_idx.iter().enumerate() {
                if k != j {
                    term *= tail_grids[*t_idx].surv[i];
                }
            }
            f_s += term;
        }
        if f_s == 0.0 {
            continue;
        }
        let mut g_prod = 1.0;
        let mut surv_prod = 1.0;
        for fi in &front_idx {
            g_prod *= front_grids[*fi].g[i];
            surv_prod *= front_grids[*fi].surv[i];
        }
        joint.add(w * g_prod * f_s);
        p_cap.add(w * surv_prod * f_s);
        for (pos, fi) in front_idx.iter().enumerate() {
            let mut term = front_grids[*fi].g[i];
            for (other, fj) in front_idx.iter().enumerate() {
                if other != pos {
                    term *= front_grids[*fj].surv[i];
                }
            }
            dens[pos].add(w * term * f_s);
        }
    }
    let h = quad.step;
    Ok(FrontTailExpectations {
        joint: joint.total() * h,
        p_lose_all: p_cap.total() * h,
        per_agent: dens.into_iter().map(|d| d.total() * h).collect(),
    })
}

pub(crate) fn correlation_constant_general(
    system: &UrnSystem,
    a: usize,
    quad: &QuadratureParams,
) -> Result<f64> {
    let e = front_tail_expectations(system, a, quad)?;
    let mut ln_c = e.joint.ln() + (a as f64 - 1.0) * e.p_lose_all.ln();
    for d in &e.per_agent {
        ln_c -= d.ln();
    }
    Ok(ln_c.exp())
}

/// `c(A, a)` for `big_a` identical agents. In the symmetric case the
/// minimum's density is `(A-a) G^(A-a-1) g` and the losing probability is
/// `(A-a)/A`, which reduces the constant to
/// `c = int g^(a+1) G^(A-a-1) / (int g^2 G^(A-2))^a / A^(a-1)`.
pub fn symmetric_correlation_constant(
    rate: &RateFunction,
    x0: u64,
    big_a: u64,
    a: u32,
    quad: &QuadratureParams,
) -> Result<f64> {
    Ok(symmetric_correlation_constants(rate, x0, &[(big_a, a)], quad)?[0])
}

/// Batch variant of [`symmetric_correlation_constant`]: the density grid is
/// built once and reused for every `(A, a)` pair.
pub fn symmetric_correlation_constants(
    rate: &RateFunction,
    x0: u64,
    pairs: &[(u64, u32)],
    quad: &QuadratureParams,
) -> Result<Vec<f64>> {
    quad.validate()?;
    for (big_a, a) in pairs {
        if *a < 1 || (*a as u64) >= *big_a {
            return Err(Error::Domain(format!(
                "a must lie in [1, A-1], got a = {a}, A = {big_a}"
            )));
        }
    }
    let model = ExplosionModel::with_truncation(rate.clone(), x0, quad.truncation)?;
    let s_max = quad.resolve_s_max(&[&model])?;
    let n = (s_max / quad.step).ceil() as usize + 1;
    let grid = build_grid(&model, n, quad.step);
    let h = quad.step;
    let mut out = Vec::with_capacity(pairs.len());
    for (big_a, a) in pairs {
        if *a == 1 {
            out.push(1.0);
            continue;
        }
        let af = *a as f64;
        let big = *big_a as f64;
        let mut num = Accumulator::new();
        let mut den = Accumulator::new();
        for i in 0..n {
            let w = trapezoid_weights(i, n);
            let g = grid.g[i];
            let surv = grid.surv[i];
            if g == 0.0 || surv == 0.0 {
                continue;
            }
            let ln_surv = surv.ln();
            num.add(w * g.powi(*a as i32 + 1) * ((big - af - 1.0) * ln_surv).exp());
            den.add(w * g * g * ((big - 2.0) * ln_surv).exp());
        }
        let ln_c = (num.total() * h).ln() - af * (den.total() * h).ln() - (af - 1.0) * big.ln();
        out.push(ln_c.exp());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Joint tails of several losers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailTarget {
    Min,
    Max,
    Sum,
}

/// Joint tail of the first `a` losers for min, max or sum, conditioned on
/// all of them losing.
#[derive(Debug, Clone)]
pub struct JointTail {
    pub target: TailTarget,
    /// For `Min`: the single product constant `E[prod g_i(S)] / P(all lose)`.
    pub min_constant: Option<f64>,
    /// For `Max`/`Sum`: per-agent constants
    /// `E[(prod_{j != i} G_j(S)) g_i(S)] / P(all lose)`.
    pub per_agent_constants: Vec<f64>,
    pub prediction: TailPrediction,
    rates: Vec<RateFunction>,
}

impl JointTail {
    /// Predicted conditional tail value at `x`.
    pub fn value_at(&self, x: u64) -> Result<f64> {
        match self.target {
            TailTarget::Min => {
                let mut v = self.min_constant.unwrap();
                for r in &self.rates {
                    v *= r.tail_sum(x, SumPower::One)?.value;
                }
                Ok(v)
            }
            TailTarget::Max | TailTarget::Sum => {
                let mut v = 0.0;
                for (c, r) in self.per_agent_constants.iter().zip(&self.rates) {
                    v += c * r.tail_sum(x, SumPower::One)?.value;
                }
                Ok(v)
            }
        }
    }
}

fn regularly_varying(rate: &RateFunction) -> bool {
    match rate {
        RateFunction::Polynomial { .. } | RateFunction::PolyLog { .. } => true,
        RateFunction::Exponential { .. } | RateFunction::Constant { .. } => false,
        RateFunction::Tabulated { tail, .. } => {
            tail.as_ref().map(|t| regularly_varying(t)).unwrap_or(false)
        }
    }
}

/// Tail constants for the minimum, maximum or sum of the first `a` losers.
pub fn tailcor_constants(
    system: &UrnSystem,
    a: usize,
    target: TailTarget,
    quad: &QuadratureParams,
) -> Result<JointTail> {
    quad.validate()?;
    let total = system.len();
    if a < 1 || a >= total {
        return Err(Error::Domain(format!(
            "a must lie in [1, A-1] = [1, {}], got {a}",
            total - 1
        )));
    }
    let agents = system.agents();
    for i in 0..a {
        if !agents[i].rate.is_explosive()? {
            return Err(Error::Domain(format!(
                "agent {} must be explosive for joint loser tails",
                i + 1
            )));
        }
        if target == TailTarget::Sum && !regularly_varying(&agents[i].rate) {
            return Err(Error::RegularVariation(format!(
                "sum tails need regularly varying feedback; agent {} has {}",
                i + 1,
                agents[i].rate
            )));
        }
    }
    let e = front_tail_expectations(system, a, quad)?;
    let min_constant = e.joint / e.p_lose_all;
    let per_agent_constants: Vec<f64> =
        e.per_agent.iter().map(|d| d / e.p_lose_all).collect();
    let rates: Vec<RateFunction> = agents[..a].iter().map(|ag| ag.rate.clone()).collect();

    let all_poly = rates
        .iter()
        .all(|r| matches!(r, RateFunction::Polynomial { .. }));
    let conditioning = format!(
        "joint {:?}-tail of agents 1..={a} given all of them lose",
        target
    );
    let prediction = match target {
        TailTarget::Min => {
            let kind = if all_poly {
                let sum_beta: f64 = rates
                    .iter()
                    .map(|r| match r {
                        RateFunction::Polynomial { beta, .. } => *beta,
                        _ => unreachable!(),
                    })
                    .sum();
                let const_prod: f64 = rates
                    .iter()
                    .map(|r| match r {
                        RateFunction::Polynomial { alpha, beta } => 1.0 / (alpha * (beta - 1.0)),
                        _ => unreachable!(),
                    })
                    .product();
                TailKind::Power {
                    exponent: a as f64 - sum_beta,
                    constant: Some(min_constant * const_prod),
                }
            } else {
                TailKind::Power {
                    exponent: f64::NAN,
                    constant: None,
                }
            };
            TailPrediction::new(kind, conditioning)
        }
        TailTarget::Max | TailTarget::Sum => {
            // the heaviest (smallest beta) agent dominates asymptotically
            let kind = if all_poly {
                let mut best = 0usize;
                let mut best_beta = f64::INFINITY;
                for (i, r) in rates.iter().enumerate() {
                    if let RateFunction::Polynomial { beta, .. } = r {
                        if *beta < best_beta {
                            best_beta = *beta;
                            best = i;
                        }
                    }
                }
                conditional_tail_kind(&rates[best], per_agent_constants[best])
            } else {
                TailKind::Power {
                    exponent: f64::NAN,
                    constant: None,
                }
            };
            TailPrediction::new(kind, conditioning)
        }
    };
    Ok(JointTail {
        target,
        min_constant: Some(min_constant),
        per_agent_constants,
        prediction,
        rates,
    })
}

// ---------------------------------------------------------------------------
// Sub-linear losers
// ---------------------------------------------------------------------------

/// Parameters of the sub-linear band
/// `-log P(X_i(inf) > x) in [d h1(x) - d^2 h2(x) - C, d h1(x)]` with
/// `h_p(x) = sum_{k=x0}^x F_i(k)^-p` and `d = sum_{j explosive} F_j(x0_j)`.
#[derive(Debug, Clone)]
pub struct SublinearBandParams {
    pub agent: usize,
    pub d: f64,
    /// `C = sum_j log` of the exponential-envelope constants of the
    /// explosive agents.
    pub correction_constant: f64,
    rate: RateFunction,
    x0: u64,
}

impl SublinearBandParams {
    /// `(lower, upper)` band for `-log P(X_i(inf) > x)`.
    pub fn band_at(&self, x: u64) -> Result<(f64, f64)> {
        let h1 = self.rate.head_sum(self.x0, x, SumPower::One)?.value;
        let h2 = self.rate.head_sum(self.x0, x, SumPower::Two)?.value;
        let upper = self.d * h1;
        let lower = upper - self.d * self.d * h2 - self.correction_constant;
        Ok((lower, upper))
    }
}

pub fn sublinear_band_params(system: &UrnSystem, agent: usize) -> Result<SublinearBandParams> {
    system.require_strong_monopoly()?;
    let agents = system.agents();
    if agent >= agents.len() {
        return Err(Error::Domain(format!("no agent #{}", agent + 1)));
    }
    let target = &agents[agent];
    if target.rate.is_explosive()? {
        return Err(Error::Domain(
            "agent is explosive; use loser_tail instead of the sub-linear band".into(),
        ));
    }
    if !target.rate.diverges() {
        return Err(Error::Domain(
            "the sub-linear band does not hold for non-diverging feedback \
             (a constant-rate loser is Poisson distributed)"
                .into(),
        ));
    }
    let mut d = 0.0;
    let mut c = 0.0;
    for (j, a) in agents.iter().enumerate() {
        if j == agent || !a.rate.is_explosive()? {
            continue;
        }
        if !a.rate.strictly_increasing() {
            return Err(Error::Domain(format!(
                "explosive agent {} must be strictly monotone for the band",
                j + 1
            )));
        }
        d += a.rate.evaluate(a.x0)?;
        c += ttail_constant(&a.rate, a.x0)?.ln();
    }
    Ok(SublinearBandParams {
        agent,
        d,
        correction_constant: c,
        rate: target.rate.clone(),
        x0: target.x0,
    })
}

/// Band prediction for `-log P(X_i(inf) > x)` at one x.
pub fn sublinear_band(system: &UrnSystem, agent: usize, x: u64) -> Result<TailPrediction> {
    let params = sublinear_band_params(system, agent)?;
    let (lower, upper) = params.band_at(x)?;
    Ok(TailPrediction::new(
        TailKind::Band { lower, upper },
        format!(
            "-log P(X_{}(inf) > {x}); d = {}, C = {}",
            agent + 1,
            params.d,
            params.correction_constant
        ),
    ))
}

/// Asymptotic class of a sub-linear loser's tail (feeds the exponent phase
/// diagram): power for linear feedback, stretched-exponential below it.
pub fn sublinear_shape(system: &UrnSystem, agent: usize) -> Result<TailPrediction> {
    let params = sublinear_band_params(system, agent)?;
    let rate = &system.agents()[agent].rate;
    let d = params.d;
    let kind = match rate {
        RateFunction::Polynomial { beta, .. } if *beta == 1.0 => TailKind::Power {
            exponent: -d,
            constant: None,
        },
        RateFunction::Polynomial { beta, .. } if *beta < 1.0 => {
            let scale = d / (1.0 - beta);
            TailKind::Stretched {
                exponent: 1.0 - beta,
                scale_lower: scale,
                scale_upper: scale,
            }
        }
        RateFunction::PolyLog { beta } if *beta == 1.0 => TailKind::LogPower {
            exponent: -d,
            constant: None,
        },
        RateFunction::PolyLog { beta } if *beta < 1.0 => {
            let scale = d / (1.0 - beta);
            TailKind::Stretched {
                exponent: 1.0 - beta,
                scale_lower: scale,
                scale_upper: scale,
            }
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "no closed asymptotic class for sub-linear feedback {rate}"
            )))
        }
    };
    Ok(TailPrediction::new(
        kind,
        format!("P(X_{}(inf) > x), sub-linear loser", agent + 1),
    ))
}

// ---------------------------------------------------------------------------
// Monopoly time
// ---------------------------------------------------------------------------

/// Monte Carlo settings for the one estimated constant in the sub-linear
/// monopoly-time law.
#[derive(Debug, Clone, Copy)]
pub struct MonopolyMc {
    pub replicates: u64,
    pub master_seed: u64,
    pub workers: usize,
    pub eps: f64,
}

impl Default for MonopolyMc {
    fn default() -> Self {
        MonopolyMc {
            replicates: 100_000,
            master_seed: 0x1715_0b25,
            workers: 0,
            eps: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonopolyTail {
    pub prediction: TailPrediction,
    /// Predicted `P(N_mon > n)` when the case admits an evaluated constant
    /// (the sub-linear case).
    pub survival_at_n: Option<f64>,
    /// Exponent of the survival tail `P(N_mon > n) ~ n^(-b)` (log factors
    /// aside).
    pub survival_exponent: Option<f64>,
    /// Standard error of the Monte Carlo constant, when one was estimated.
    pub mc_standard_error: Option<f64>,
}

/// Survival decay exponent `b` with `P(N_mon > n) ~ n^(-b)` for a polynomial
/// winner with exponent `beta1 > 1` against a weakest loser `beta2`.
pub fn monopoly_survival_exponent(beta1: f64, beta2: f64) -> f64 {
    if beta2 > 1.0 {
        if beta1 <= beta2 + 1.0 {
            (beta1 - 1.0) * (1.0 - 1.0 / beta2)
        } else {
            beta2 - 1.0
        }
    } else {
        beta1 - 1.0
    }
}

/// Decay exponent `a` of a loser's wealth `P(X > x) ~ x^(-a)` against
/// diverging feedback with monopoly weight `d`; `None` means lighter than
/// any power law.
pub fn loser_wealth_exponent(beta2: f64, d: f64) -> Option<f64> {
    if beta2 > 1.0 {
        Some(beta2 - 1.0)
    } else if beta2 == 1.0 {
        Some(d)
    } else {
        None
    }
}

fn poly_params(rate: &RateFunction) -> Option<(f64, f64)> {
    match rate {
        RateFunction::Polynomial { alpha, beta } => Some((*alpha, *beta)),
        _ => None,
    }
}

/// Case-resolved tail of the monopoly time conditioned on `winner` winning.
///
/// Polynomial winner and super-linear polynomial losers follow the
/// exponent dichotomy in `monopoly_survival_exponent` (flagged
/// `assumes-condMonTime`); a polynomial winner whose losers are all
/// exponential gets the `n^(-beta1) log n` mass law; sub-linear losers give
/// the evaluated law `P(N_mon > n) ~ E[sum_i F_i(X_i(inf))] * tail_sum(F_w,
/// n-1)` with the expectation estimated by simulation (flagged `estimated`).
pub fn monopoly_tail(
    system: &UrnSystem,
    winner: usize,
    n: u64,
    mc: &MonopolyMc,
) -> Result<MonopolyTail> {
    let agents = system.agents();
    if winner >= agents.len() {
        return Err(Error::Domain(format!("no agent #{}", winner + 1)));
    }
    if !agents[winner].rate.is_explosive()? {
        return Err(Error::Domain("the winner must be explosive".into()));
    }
    for a in agents {
        match a.rate {
            RateFunction::Polynomial { .. } | RateFunction::Exponential { .. } => {}
            _ => {
                return Err(Error::Unsupported(format!(
                    "monopoly-time analysis covers polynomial and exponential families only, \
                     got {}",
                    a.rate
                )))
            }
        }
    }
    let (w_alpha, w_beta) = match poly_params(&agents[winner].rate) {
        Some(p) => p,
        None => {
            return Err(Error::Unsupported(
                "exponential-feedback winners are outside the proved case analysis".into(),
            ))
        }
    };

    let losers: Vec<(usize, &Agent)> = agents
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != winner)
        .collect();
    let poly_losers: Vec<(f64, f64)> = losers
        .iter()
        .filter_map(|(_, a)| poly_params(&a.rate))
        .collect();
    let has_exp_loser = losers.len() != poly_losers.len();

    // sub-linear regime: every loser below the explosion threshold
    if !poly_losers.is_empty() && poly_losers.iter().all(|(_, b)| *b <= 1.0) && !has_exp_loser {
        for (_, beta) in &poly_losers {
            if *beta == 1.0 && (agents[winner].x0 as f64) <= w_beta {
                return Err(Error::Assumption(format!(
                    "a linear loser needs the winner's initial count to exceed its exponent \
                     (X(0) = {} vs beta = {w_beta})",
                    agents[winner].x0
                )));
            }
        }
        // E[sum_i F_i(X_i(inf))] by embedded simulation
        let embedding = crate::sim::UrnEmbedding::new(system, mc.eps)?;
        let loser_preps: Vec<(usize, crate::rates::PreparedRate)> = losers
            .iter()
            .map(|(i, a)| (*i, a.rate.prepared()))
            .collect();
        let sums = crate::sim::run_batch(mc.replicates, mc.master_seed, mc.workers, |stream| {
            let out = embedding.simulate(stream)?;
            if out.winner != winner {
                return Err(Error::Domain(
                    "a sub-linear loser won; the system is not in the sub-linear regime".into(),
                ));
            }
            let mut total = 0.0;
            for (i, prep) in &loser_preps {
                let count = out.loser_count(*i).unwrap();
                total += prep.rate(count);
            }
            Ok(total)
        })?;
        let m = sums.len() as f64;
        let mean: f64 = sums.iter().sum::<f64>() / m;
        let var: f64 = sums.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        let tail = agents[winner]
            .rate
            .tail_sum(n.saturating_sub(1).max(agents[winner].x0), SumPower::One)?;
        let prediction = TailPrediction::new(
            TailKind::Power {
                exponent: 1.0 - w_beta,
                constant: Some(mean / (w_alpha * (w_beta - 1.0))),
            },
            format!("P(N_mon > n), sub-linear losers vs agent {}", winner + 1),
        )
        .with_flag("estimated");
        return Ok(MonopolyTail {
            prediction,
            survival_at_n: Some(mean * tail.value),
            survival_exponent: Some(w_beta - 1.0),
            mc_standard_error: Some(se * tail.value),
        });
    }

    // mixed: polynomial winner, all losers exponential
    if poly_losers.is_empty() && has_exp_loser {
        let prediction = TailPrediction::new(
            TailKind::PowerLog {
                exponent: 1.0 - w_beta,
                log_exponent: 1.0,
                constant: None,
            },
            format!(
                "P(N_mon > n | agent {} wins), exponential losers",
                winner + 1
            ),
        )
        .with_flag("assumes-condMonTime");
        return Ok(MonopolyTail {
            prediction,
            survival_at_n: None,
            survival_exponent: Some(w_beta - 1.0),
            mc_standard_error: None,
        });
    }

    // super-linear polynomial losers (exponential losers, being stronger,
    // cannot be the weakest and drop out of the case analysis)
    let weakest = poly_losers
        .iter()
        .map(|(_, b)| *b)
        .fold(f64::INFINITY, f64::min);
    if weakest <= 1.0 {
        return Err(Error::Unsupported(
            "mixed sub-linear and super-linear losers are outside the proved case analysis"
                .into(),
        ));
    }
    let b = monopoly_survival_exponent(w_beta, weakest);
    let prediction = TailPrediction::new(
        TailKind::Power {
            exponent: -b,
            constant: None,
        },
        format!(
            "P(N_mon > n | agent {} wins), weakest loser exponent {weakest}",
            winner + 1
        ),
    )
    .with_flag("assumes-condMonTime");
    Ok(MonopolyTail {
        prediction,
        survival_at_n: None,
        survival_exponent: Some(b),
        mc_standard_error: None,
    })
}

/// Late-monopoly share regimes for a two-agent polynomial system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShareRegime {
    /// `beta_w < beta_l + 1`: the loser's share at the monopoly time
    /// vanishes.
    LoserShareVanishes,
    /// `beta_w = beta_l + 1`: balanced start, then sudden monopoly.
    Intermediate,
    /// `beta_w > beta_l + 1`: the loser's share approaches one before the
    /// monopoly sets in.
    LoserShareDominates,
}

pub fn share_regime(system: &UrnSystem, winner: usize) -> Result<ShareRegime> {
    let agents = system.agents();
    if agents.len() != 2 {
        return Err(Error::Unsupported(
            "share regimes are resolved for two-agent systems only".into(),
        ));
    }
    if winner >= 2 {
        return Err(Error::Domain(format!("no agent #{}", winner + 1)));
    }
    let (w, l) = (&agents[winner], &agents[1 - winner]);
    let (_, bw) = poly_params(&w.rate).ok_or_else(|| {
        Error::Unsupported("share regimes require polynomial feedback".into())
    })?;
    let (_, bl) = poly_params(&l.rate).ok_or_else(|| {
        Error::Unsupported("share regimes require polynomial feedback".into())
    })?;
    if bw <= 1.0 || bl <= 1.0 {
        return Err(Error::Unsupported(
            "share regimes require both exponents > 1".into(),
        ));
    }
    Ok(if bw < bl + 1.0 {
        ShareRegime::LoserShareVanishes
    } else if bw == bl + 1.0 {
        ShareRegime::Intermediate
    } else {
        ShareRegime::LoserShareDominates
    })
}
