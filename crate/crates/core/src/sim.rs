//! Deterministic, parallel Monte Carlo engine: birth-process sampling,
//! explosion-time sampling, the exponential embedding of urns, discrete urn
//! stepping, and batch execution.
//!
//! Reproducibility contract: every sampler is a pure function of its inputs
//! and an [`RngStream`]. The substream for `(master_seed, replicate_index)`
//! is a counter-based generator (`splitmix64-counter/v1` below), so results
//! are identical across runs and worker counts. Floating transforms
//! (`ln`/`exp`) go through the platform libm; the test suite pins
//! within-platform determinism.

use std::io::Write;

use rayon::prelude::*;

use crate::asymptotics::UrnSystem;
use crate::error::{Error, Result};
use crate::rates::{PreparedRate, RateFunction, SumPower};

/// Identifier of the stream algorithm: output `n` of substream `(m, r)` is
/// `mix64(key(m, r) + n * GOLDEN_GAMMA)` with the splitmix64 finalizer for
/// `mix64` and `key(m, r) = mix64(mix64(m) ^ (r * GOLDEN_GAMMA + 1))`.
pub const STREAM_ALGORITHM: &str = "splitmix64-counter/v1";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A counter-based uniform stream addressed by `(master_seed,
/// replicate_index)`. Cloning forks the full state; fresh streams for new
/// replicates come from [`RngStream::new`].
#[derive(Debug, Clone)]
pub struct RngStream {
    key: u64,
    counter: u64,
    master_seed: u64,
    replicate_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, replicate_index: u64) -> Self {
        let key = mix64(mix64(master_seed) ^ replicate_index.wrapping_mul(GOLDEN_GAMMA).wrapping_add(1));
        RngStream {
            key,
            counter: 0,
            master_seed,
            replicate_index,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn replicate_index(&self) -> u64 {
        self.replicate_index
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        mix64(self.key.wrapping_add(c.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in the open interval (0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Exponential with the given rate by inverse CDF.
    #[inline]
    pub fn next_exp(&mut self, rate: f64) -> f64 {
        -self.next_f64().ln() / rate
    }
}

/// State of a birth process at the observation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BirthState {
    Finite(u64),
    Exploded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ReachedT,
    MaxJumps,
    ExplosionDetected,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::ReachedT => "reached_t",
            StopReason::MaxJumps => "max_jumps",
            StopReason::ExplosionDetected => "explosion_detected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthOutcome {
    pub state_at_t: BirthState,
    pub exploded: bool,
    pub jumps_taken: u64,
    pub stop_reason: StopReason,
}

/// Samples the birth process state at `t_obs` by drawing sojourn times
/// sequentially. Censoring (the jump cap or the tail-expectation guard) is
/// reported through `stop_reason`, never silently.
pub fn simulate_birth(
    rate: &RateFunction,
    x0: u64,
    t_obs: f64,
    max_jumps: u64,
    stream: &mut RngStream,
) -> Result<BirthOutcome> {
    if x0 < 1 {
        return Err(Error::Domain(format!("x0 must be >= 1, got {x0}")));
    }
    if max_jumps < 1 {
        return Err(Error::Domain("max_jumps must be >= 1".into()));
    }
    if !(t_obs >= 0.0) {
        return Err(Error::Domain(format!("t_obs must be >= 0, got {t_obs}")));
    }
    let prep = rate.prepared();
    let mut elapsed = 0.0f64;
    let mut k = x0;
    loop {
        let r = prep.rate(k);
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::Domain(format!(
                "rate function undefined or non-positive at k = {k}"
            )));
        }
        elapsed += stream.next_exp(r);
        if elapsed > t_obs {
            return Ok(BirthOutcome {
                state_at_t: BirthState::Finite(k),
                exploded: false,
                jumps_taken: k - x0,
                stop_reason: StopReason::ReachedT,
            });
        }
        k += 1;
        let jumps = k - x0;
        if jumps >= max_jumps {
            return Ok(BirthOutcome {
                state_at_t: BirthState::Exploded,
                exploded: true,
                jumps_taken: jumps,
                stop_reason: StopReason::MaxJumps,
            });
        }
        // cheap guard: once the expected remaining time is vanishing on the
        // scale of what is left, the path has exploded before t_obs
        if jumps % 256 == 0 {
            if let Some(bound) = rate.tail_mean_upper_bound(k) {
                if bound < 1e-12 * (t_obs - elapsed) {
                    return Ok(BirthOutcome {
                        state_at_t: BirthState::Exploded,
                        exploded: true,
                        jumps_taken: jumps,
                        stop_reason: StopReason::ExplosionDetected,
                    });
                }
            }
        }
    }
}

/// Explosion-time sampler with a precomputed truncation cutoff: sojourns are
/// drawn up to the first state where the remaining mean `sum 1/F(k)` falls
/// below `eps`, so `T_hat` underestimates `T` by at most `eps` in mean.
#[derive(Debug, Clone)]
pub struct ExplosionSampler {
    rates: Vec<f64>,
    eps: f64,
}

impl ExplosionSampler {
    pub fn new(rate: &RateFunction, x0: u64, eps: f64) -> Result<Self> {
        if x0 < 1 {
            return Err(Error::Domain(format!("x0 must be >= 1, got {x0}")));
        }
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("eps must be > 0, got {eps}")));
        }
        if !rate.is_explosive()? {
            return Err(Error::Domain(format!(
                "rate function {rate} is not explosive; explosion times are infinite"
            )));
        }
        // smallest cutoff with tail_sum(cutoff) < eps, located by doubling
        // then bisecting on the monotone tail sum
        let tol = (eps * 1e-3).min(1e-12);
        let tail_below = |k: u64| -> Result<bool> {
            let s = rate.tail_sum_with_tolerance(k, SumPower::One, tol)?;
            Ok(s.value + s.remainder_bound < eps)
        };
        let mut hi = x0;
        let mut doublings = 0;
        while !tail_below(hi)? {
            hi = hi.saturating_mul(2).max(hi + 1);
            doublings += 1;
            if doublings > 40 {
                return Err(Error::Domain(format!(
                    "eps = {eps} needs more than 2^40 sojourns per draw for {rate}"
                )));
            }
        }
        let mut lo = if hi == x0 { x0 } else { hi / 2 };
        while lo + 1 < hi {
            let mid = lo + (hi - lo) / 2;
            if mid < x0 || !tail_below(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let cutoff = hi.max(x0);
        let prep = rate.prepared();
        let rates = (x0..=cutoff).map(|k| prep.rate(k)).collect();
        Ok(ExplosionSampler { rates, eps })
    }

    /// Mean downward bias of the sampled time.
    pub fn bias_bound(&self) -> f64 {
        self.eps
    }

    /// Number of sojourns per draw.
    pub fn draws(&self) -> usize {
        self.rates.len()
    }

    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        let mut t = 0.0f64;
        for r in &self.rates {
            t += stream.next_exp(*r);
        }
        t
    }

    /// Sample, recording the cumulative jump times. `path[j]` is the time of
    /// the (j+1)-th jump, so the state right after `path[j]` is `x0 + j + 1`.
    pub fn sample_path(&self, stream: &mut RngStream, path: &mut Vec<f64>) -> f64 {
        path.clear();
        path.reserve(self.rates.len());
        let mut t = 0.0f64;
        for r in &self.rates {
            t += stream.next_exp(*r);
            path.push(t);
        }
        t
    }
}

/// Draws one truncated explosion time; returns `(T_hat, bias_bound)`.
pub fn sample_explosion_time(
    rate: &RateFunction,
    x0: u64,
    eps: f64,
    stream: &mut RngStream,
) -> Result<(f64, f64)> {
    let sampler = ExplosionSampler::new(rate, x0, eps)?;
    Ok((sampler.sample(stream), sampler.bias_bound()))
}

/// One embedded-simulation result.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnOutcome {
    /// Index of the monopolist agent (0-based).
    pub winner: usize,
    /// Final counts `X_i(inf)` of the losing agents, as `(agent, count)`.
    pub loser_counts: Vec<(usize, u64)>,
    /// Index of the last step won by a loser, plus one.
    pub n_mon: u64,
    /// Mean truncation bias of the sampled explosion times.
    pub bias_bound: f64,
    pub master_seed: u64,
    pub replicate_index: u64,
}

impl UrnOutcome {
    pub fn loser_count(&self, agent: usize) -> Option<u64> {
        self.loser_counts
            .iter()
            .find(|(a, _)| *a == agent)
            .map(|(_, c)| *c)
    }
}

/// Reusable embedding of an urn system: per-agent explosion samplers are
/// built once and shared across replicates.
#[derive(Debug, Clone)]
pub struct UrnEmbedding {
    agents: Vec<EmbeddedAgent>,
    eps: f64,
}

#[derive(Debug, Clone)]
struct EmbeddedAgent {
    prep: PreparedRate,
    x0: u64,
    sampler: Option<ExplosionSampler>,
}

/// Guard on loser-trajectory length; hitting it means the system is outside
/// any sane configuration rather than unlucky.
const LOSER_JUMP_GUARD: u64 = 1_000_000_000;

impl UrnEmbedding {
    pub fn new(system: &UrnSystem, eps: f64) -> Result<Self> {
        system.require_strong_monopoly()?;
        let mut agents = Vec::with_capacity(system.agents().len());
        for a in system.agents() {
            let sampler = if a.rate.is_explosive()? {
                Some(ExplosionSampler::new(&a.rate, a.x0, eps)?)
            } else {
                None
            };
            agents.push(EmbeddedAgent {
                prep: a.rate.prepared(),
                x0: a.x0,
                sampler,
            });
        }
        Ok(UrnEmbedding { agents, eps })
    }

    /// Runs one embedded replicate: samples explosion times of the explosive
    /// agents, declares the argmin the winner, replays every loser on
    /// `[0, T_win)` and reconstructs the monopoly time.
    pub fn simulate(&self, stream: &mut RngStream) -> Result<UrnOutcome> {
        let n = self.agents.len();
        // Explosion paths must be drawn in agent order for reproducibility.
        let mut paths: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut t_hat: Vec<f64> = vec![f64::INFINITY; n];
        for (i, agent) in self.agents.iter().enumerate() {
            if let Some(sampler) = &agent.sampler {
                let mut path = Vec::new();
                t_hat[i] = sampler.sample_path(stream, &mut path);
                paths[i] = Some(path);
            }
        }
        let winner = t_hat
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let t_win = t_hat[winner];
        for (i, t) in t_hat.iter().enumerate() {
            if i != winner && (t - t_win).abs() < 1e-15 {
                return Err(Error::DegenerateTie(format!(
                    "explosion times of agents {} and {} coincide within 1e-15",
                    winner + 1,
                    i + 1
                )));
            }
        }

        let mut loser_counts = Vec::with_capacity(n - 1);
        let mut total_loser_wins = 0u64;
        let mut last_loser_jump = 0.0f64;
        for (i, agent) in self.agents.iter().enumerate() {
            if i == winner {
                continue;
            }
            let (wins, last_jump) = match &paths[i] {
                Some(path) => {
                    // explosive loser: replay its own sampled path up to T_win
                    let wins = path.partition_point(|&t| t <= t_win) as u64;
                    let last = if wins > 0 { path[wins as usize - 1] } else { 0.0 };
                    (wins, last)
                }
                None => {
                    // non-explosive loser: draw its sojourns directly
                    let mut t = 0.0f64;
                    let mut k = agent.x0;
                    let mut last = 0.0f64;
                    loop {
                        t += stream.next_exp(agent.prep.rate(k));
                        if t > t_win {
                            break;
                        }
                        k += 1;
                        last = t;
                        if k - agent.x0 >= LOSER_JUMP_GUARD {
                            return Err(Error::Domain(
                                "loser trajectory exceeded the jump guard".into(),
                            ));
                        }
                    }
                    (k - agent.x0, last)
                }
            };
            loser_counts.push((i, agent.x0 + wins));
            total_loser_wins += wins;
            last_loser_jump = last_loser_jump.max(last_jump);
        }

        let winner_path = paths[winner].as_ref().unwrap();
        let winner_jumps = winner_path.partition_point(|&t| t <= last_loser_jump) as u64;
        let n_mon = winner_jumps + total_loser_wins + 1;

        Ok(UrnOutcome {
            winner,
            loser_counts,
            n_mon,
            bias_bound: self.eps,
            master_seed: stream.master_seed(),
            replicate_index: stream.replicate_index(),
        })
    }
}

/// One-shot embedded simulation (build + run); batches should construct the
/// [`UrnEmbedding`] once instead.
pub fn simulate_urn_embedded(
    system: &UrnSystem,
    eps: f64,
    stream: &mut RngStream,
) -> Result<UrnOutcome> {
    UrnEmbedding::new(system, eps)?.simulate(stream)
}

/// Stop rule of the discrete urn loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    MaxSteps(u64),
    /// Stop once some agent's share of the total count reaches the
    /// threshold (exclusive of initial state; checked after each step).
    ShareThreshold(f64),
}

/// Hard cap on share-threshold runs so misconfigured systems terminate.
const DISCRETE_STEP_CAP: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscreteStop {
    MaxSteps,
    ShareReached,
    StepCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShareSnapshot {
    pub step: u64,
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteUrnOutcome {
    pub final_counts: Vec<u64>,
    pub steps: u64,
    pub stop_reason: DiscreteStop,
    /// Share vectors at steps 1, 2, 4, 8, ... and at the final step.
    pub trajectory: Vec<ShareSnapshot>,
}

/// Fenwick tree over agent weights for O(log A) weighted selection.
struct WeightTree {
    tree: Vec<f64>,
    len: usize,
}

impl WeightTree {
    fn new(weights: &[f64]) -> Self {
        let len = weights.len();
        let mut tree = vec![0.0f64; len + 1];
        for (i, w) in weights.iter().enumerate() {
            let mut idx = i + 1;
            while idx <= len {
                tree[idx] += w;
                idx += idx & idx.wrapping_neg();
            }
        }
        WeightTree { tree, len }
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut idx = i + 1;
        while idx <= self.len {
            self.tree[idx] += delta;
            idx += idx & idx.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut idx = self.len;
        let mut sum = 0.0;
        while idx > 0 {
            sum += self.tree[idx];
            idx -= idx & idx.wrapping_neg();
        }
        sum
    }

    /// Largest index with prefix sum <= target, i.e. the selected agent for
    /// a uniform draw `target` in [0, total).
    fn select(&self, target: f64) -> usize {
        let mut pos = 0usize;
        let mut rem = target;
        let mut mask = self.len.next_power_of_two();
        while mask > 0 {
            let next = pos + mask;
            if next <= self.len && self.tree[next] <= rem {
                rem -= self.tree[next];
                pos = next;
            }
            mask >>= 1;
        }
        pos.min(self.len - 1)
    }
}

/// Iterates the discrete transition law: each step is won by agent `i` with
/// probability proportional to `F_i(X_i)`.
pub fn simulate_urn_discrete(
    system: &UrnSystem,
    stop: StopRule,
    stream: &mut RngStream,
) -> Result<DiscreteUrnOutcome> {
    if let StopRule::ShareThreshold(th) = stop {
        if !(0.0 < th && th < 1.0) {
            return Err(Error::Domain(format!(
                "share threshold must lie in (0, 1), got {th}"
            )));
        }
    }
    let agents = system.agents();
    let preps: Vec<PreparedRate> = agents.iter().map(|a| a.rate.prepared()).collect();
    let mut counts: Vec<u64> = agents.iter().map(|a| a.x0).collect();
    let mut total_balls: u64 = counts.iter().sum();
    let weights: Vec<f64> = preps
        .iter()
        .zip(&counts)
        .map(|(p, c)| p.rate(*c))
        .collect();
    for w in &weights {
        if !w.is_finite() || *w <= 0.0 {
            return Err(Error::Domain("initial weights must be positive".into()));
        }
    }
    let mut tree = WeightTree::new(&weights);
    let mut trajectory = Vec::new();
    let mut next_snapshot = 1u64;
    let mut step = 0u64;
    let snapshot = |counts: &[u64], total: u64, step: u64| ShareSnapshot {
        step,
        shares: counts.iter().map(|c| *c as f64 / total as f64).collect(),
    };

    let stop_reason = loop {
        match stop {
            StopRule::MaxSteps(m) if step >= m => break DiscreteStop::MaxSteps,
            StopRule::ShareThreshold(_) if step >= DISCRETE_STEP_CAP => break DiscreteStop::StepCap,
            _ => {}
        }
        let total_weight = tree.total();
        let u = stream.next_f64() * total_weight;
        let chosen = tree.select(u);
        let old = preps[chosen].rate(counts[chosen]);
        counts[chosen] += 1;
        total_balls += 1;
        let new = preps[chosen].rate(counts[chosen]);
        if !new.is_finite() || new <= 0.0 {
            return Err(Error::Domain(format!(
                "rate of agent {} undefined at count {}",
                chosen + 1,
                counts[chosen]
            )));
        }
        tree.add(chosen, new - old);
        step += 1;
        if step == next_snapshot {
            trajectory.push(snapshot(&counts, total_balls, step));
            next_snapshot *= 2;
        }
        if let StopRule::ShareThreshold(th) = stop {
            if counts[chosen] as f64 / total_balls as f64 >= th {
                break DiscreteStop::ShareReached;
            }
        }
    };
    if trajectory.last().map(|s| s.step != step).unwrap_or(true) && step > 0 {
        trajectory.push(snapshot(&counts, total_balls, step));
    }
    Ok(DiscreteUrnOutcome {
        final_counts: counts,
        steps: step,
        stop_reason,
        trajectory,
    })
}

/// Per-replicate count of agents that won at least one of `n_steps` discrete
/// steps.
pub fn winners_count(
    system: &UrnSystem,
    n_steps: u64,
    replicates: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<u64>> {
    if n_steps < 1 {
        return Err(Error::Domain("n_steps must be >= 1".into()));
    }
    let x0: Vec<u64> = system.agents().iter().map(|a| a.x0).collect();
    run_batch(replicates, master_seed, workers, |stream| {
        let out = simulate_urn_discrete(system, StopRule::MaxSteps(n_steps), stream)?;
        Ok(out
            .final_counts
            .iter()
            .zip(&x0)
            .filter(|(c, x)| **c > **x)
            .count() as u64)
    })
}

/// Normalized vector of unit-mean exponentials: the limiting share vector of
/// the linear urn with unit initial counts. Components sum to exactly one.
pub fn dirichlet_shares(count: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::Domain(format!("need at least 2 components, got {count}")));
    }
    let draws: Vec<f64> = (0..count).map(|_| stream.next_exp(1.0)).collect();
    let total: f64 = draws.iter().sum();
    let mut shares: Vec<f64> = draws.iter().map(|z| z / total).collect();
    let head: f64 = shares[..count - 1].iter().sum();
    shares[count - 1] = 1.0 - head;
    Ok(shares)
}

/// Runs `replicates` independent tasks, replicate `r` on substream
/// `(master_seed, r)`, on a pool of `workers` threads (0 = one per core).
/// Output order is by replicate index and byte-identical for any worker
/// count.
pub fn run_batch<T, F>(
    replicates: u64,
    master_seed: u64,
    workers: usize,
    task: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut RngStream) -> Result<T> + Sync,
{
    if replicates < 1 {
        return Err(Error::Domain("replicates must be >= 1".into()));
    }
    let run = || {
        (0..replicates)
            .into_par_iter()
            .map(|r| {
                let mut stream = RngStream::new(master_seed, r);
                task(&mut stream)
            })
            .collect::<Result<Vec<T>>>()
    };
    if workers == 0 {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Domain(format!("cannot build worker pool: {e}")))?;
        pool.install(run)
    }
}

/// CSV rows `replicate,state,exploded,jumps,stop_reason`.
pub fn write_birth_csv(outcomes: &[BirthOutcome], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "replicate,state,exploded,jumps,stop_reason")?;
    for (r, o) in outcomes.iter().enumerate() {
        let state = match o.state_at_t {
            BirthState::Finite(k) => k.to_string(),
            BirthState::Exploded => "EXPLODED".to_string(),
        };
        writeln!(
            w,
            "{},{},{},{},{}",
            r,
            state,
            o.exploded,
            o.jumps_taken,
            o.stop_reason.as_str()
        )?;
    }
    Ok(())
}

/// CSV rows `replicate,winner,n_mon,x_inf_1,...,x_inf_A,bias_bound`; the
/// winner's own column reads `inf` and agent indices are 1-based.
pub fn write_urn_csv(
    agent_count: usize,
    outcomes: &[UrnOutcome],
    w: &mut impl Write,
) -> std::io::Result<()> {
    write!(w, "replicate,winner,n_mon")?;
    for i in 1..=agent_count {
        write!(w, ",x_inf_{i}")?;
    }
    writeln!(w, ",bias_bound")?;
    for o in outcomes {
        write!(w, "{},{},{}", o.replicate_index, o.winner + 1, o.n_mon)?;
        for i in 0..agent_count {
            match o.loser_count(i) {
                Some(c) => write!(w, ",{c}")?,
                None => write!(w, ",inf")?,
            }
        }
        writeln!(w, ",{}", crate::fmt_sig12(o.bias_bound))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::Agent;
    use crate::rates::parse_rate;

    fn sys(specs: &[(&str, u64)]) -> UrnSystem {
        UrnSystem::new(
            specs
                .iter()
                .map(|(s, x0)| Agent {
                    rate: parse_rate(s).unwrap(),
                    x0: *x0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn stream_is_deterministic_and_replicates_differ() {
        let mut a = RngStream::new(7, 0);
        let mut b = RngStream::new(7, 0);
        let va: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_eq!(va, vb);
        let mut c = RngStream::new(7, 1);
        assert_ne!(va[0], c.next_u64());
        let mut d = RngStream::new(8, 0);
        assert_ne!(va[0], d.next_u64());
    }

    #[test]
    fn uniforms_lie_in_open_unit_interval() {
        let mut s = RngStream::new(1, 0);
        for _ in 0..10_000 {
            let u = s.next_f64();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn simulate_birth_constant_rate_is_poisson() {
        let f = parse_rate("const:lambda=2").unwrap();
        let (t, reps) = (1.5f64, 100_000u64);
        let out = run_batch(reps, 11, 0, |s| {
            simulate_birth(&f, 1, t, 1_000_000, s)
        })
        .unwrap();
        let mean: f64 = out
            .iter()
            .map(|o| match o.state_at_t {
                BirthState::Finite(k) => (k - 1) as f64,
                BirthState::Exploded => panic!("poisson exploded"),
            })
            .sum::<f64>()
            / reps as f64;
        // Poisson(lambda t): mean 3, sd sqrt(3); 3 standard errors
        let se = (2.0 * t / reps as f64).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn simulate_birth_is_reproducible() {
        let f = parse_rate("poly:alpha=1,beta=2").unwrap();
        let mut s1 = RngStream::new(42, 3);
        let mut s2 = RngStream::new(42, 3);
        let o1 = simulate_birth(&f, 1, 1.0, 100_000, &mut s1).unwrap();
        let o2 = simulate_birth(&f, 1, 1.0, 100_000, &mut s2).unwrap();
        assert_eq!(o1, o2);
    }

    #[test]
    fn explosion_fraction_matches_reported_counts() {
        // 10^4 quadratic-feedback runs: 3112 of 10^4 exploded by t = 1
        let f = parse_rate("poly:alpha=1,beta=2").unwrap();
        let sampler = ExplosionSampler::new(&f, 1, 1e-4).unwrap();
        let reps = 10_000u64;
        let times = run_batch(reps, 20260517, 0, |s| Ok(sampler.sample(s))).unwrap();
        let frac = times.iter().filter(|t| **t <= 1.0).count() as f64 / reps as f64;
        assert!((frac - 0.3112).abs() < 0.015, "frac = {frac}");
    }

    #[test]
    fn explosion_time_mean_matches_reciprocal_sum() {
        // E T = sum 1/k^2 = pi^2/6, Var T = sum 1/k^4 = pi^4/90
        let f = parse_rate("poly:alpha=1,beta=2").unwrap();
        let sampler = ExplosionSampler::new(&f, 1, 1e-3).unwrap();
        let reps = 50_000u64;
        let times = run_batch(reps, 5, 0, |s| Ok(sampler.sample(s))).unwrap();
        let mean: f64 = times.iter().sum::<f64>() / reps as f64;
        let target = std::f64::consts::PI.powi(2) / 6.0;
        let sd = (std::f64::consts::PI.powi(4) / 90.0f64).sqrt();
        let se = sd / (reps as f64).sqrt();
        // the sampled time undershoots by at most the bias bound in mean
        assert!(mean < target + 3.0 * se, "mean = {mean}");
        assert!(mean > target - 3.0 * se - 1e-3, "mean = {mean}");
        assert_eq!(sampler.bias_bound(), 1e-3);
    }

    #[test]
    fn exponential_family_explosion_fraction() {
        let f = parse_rate("exp:beta=1").unwrap();
        let sampler = ExplosionSampler::new(&f, 1, 1e-9).unwrap();
        let reps = 10_000u64;
        let times = run_batch(reps, 99, 0, |s| Ok(sampler.sample(s))).unwrap();
        let frac = times.iter().filter(|t| **t <= 1.0).count() as f64 / reps as f64;
        assert!((frac - 0.3424).abs() < 0.015, "frac = {frac}");
    }

    #[test]
    fn sample_explosion_time_rejects_non_explosive() {
        let f = parse_rate("poly:alpha=1,beta=1").unwrap();
        let mut s = RngStream::new(0, 0);
        assert!(sample_explosion_time(&f, 1, 1e-4, &mut s).is_err());
    }

    #[test]
    fn embedded_urn_symmetric_winner_frequency() {
        let system = sys(&[("poly:alpha=1,beta=2", 1), ("poly:alpha=1,beta=2", 1)]);
        let emb = UrnEmbedding::new(&system, 1e-3).unwrap();
        let reps = 10_000u64;
        let outs = run_batch(reps, 314159, 0, |s| emb.simulate(s)).unwrap();
        let w1 = outs.iter().filter(|o| o.winner == 0).count() as f64 / reps as f64;
        assert!((w1 - 0.5).abs() < 0.015, "w1 = {w1}");
        for o in &outs {
            let wins: u64 = o
                .loser_counts
                .iter()
                .map(|(a, c)| c - system.agents()[*a].x0)
                .sum();
            assert!(o.n_mon >= 1 + wins);
        }
    }

    #[test]
    fn single_explosive_agent_always_wins() {
        let system = sys(&[("poly:alpha=1,beta=2", 1), ("poly:alpha=1,beta=1", 1)]);
        let emb = UrnEmbedding::new(&system, 1e-3).unwrap();
        let outs = run_batch(1000, 2024, 0, |s| emb.simulate(s)).unwrap();
        assert!(outs.iter().all(|o| o.winner == 0));
    }

    #[test]
    fn discrete_urn_max_steps_zero_returns_initial_state() {
        let system = sys(&[("poly:alpha=1,beta=2", 3), ("poly:alpha=1,beta=2", 5)]);
        let mut s = RngStream::new(0, 0);
        let out = simulate_urn_discrete(&system, StopRule::MaxSteps(0), &mut s).unwrap();
        assert_eq!(out.final_counts, vec![3, 5]);
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn discrete_urn_share_threshold_terminates() {
        let system = sys(&[("poly:alpha=1,beta=2", 1), ("poly:alpha=1,beta=2", 1)]);
        let outs = run_batch(1000, 77, 0, |s| {
            simulate_urn_discrete(&system, StopRule::ShareThreshold(0.99), s)
        })
        .unwrap();
        for o in &outs {
            assert_eq!(o.stop_reason, DiscreteStop::ShareReached);
            let total: u64 = o.final_counts.iter().sum();
            let max = *o.final_counts.iter().max().unwrap();
            assert!(max as f64 / total as f64 >= 0.99);
            // trajectory snapshots are geometrically decimated plus the
            // final step
            for w in o.trajectory.windows(2) {
                assert!(
                    w[1].step == 2 * w[0].step || w[1].step == o.steps,
                    "steps {:?}",
                    o.trajectory.iter().map(|s| s.step).collect::<Vec<_>>()
                );
            }
            assert_eq!(o.trajectory.last().unwrap().step, o.steps);
        }
    }

    #[test]
    fn linear_urn_shares_are_uniform() {
        // classical two-colour urn: the limiting share is Uniform(0,1)
        let system = sys(&[("poly:alpha=1,beta=1", 1), ("poly:alpha=1,beta=1", 1)]);
        let reps = 1000u64;
        let shares = run_batch(reps, 4242, 0, |s| {
            let out = simulate_urn_discrete(&system, StopRule::MaxSteps(10_000), s)?;
            let total: u64 = out.final_counts.iter().sum();
            Ok(out.final_counts[0] as f64 / total as f64)
        })
        .unwrap();
        let mut sorted = shares.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len() as f64;
        let mut ks = 0.0f64;
        for (i, x) in sorted.iter().enumerate() {
            let cdf = x; // uniform CDF
            ks = ks.max((cdf - i as f64 / n).abs());
            ks = ks.max((cdf - (i as f64 + 1.0) / n).abs());
        }
        assert!(ks < 0.05, "KS = {ks}");
    }

    #[test]
    fn explosion_density_matches_sampled_window_probability() {
        // Monte Carlo oracle for the series density: the model mass of
        // [0.9, 1.1] against the sampled fraction, truncations aligned.
        let f = parse_rate("poly:alpha=1,beta=2").unwrap();
        let model = crate::density::ExplosionModel::with_truncation(f.clone(), 1, 1000).unwrap();
        let sampler = ExplosionSampler::new(&f, 1, 1e-3).unwrap();
        let reps = 200_000u64;
        let times = run_batch(reps, 0xD0_01, 0, |s| Ok(sampler.sample(s))).unwrap();
        let hits = times.iter().filter(|t| (0.9..1.1).contains(*t)).count() as f64;
        let frac = hits / reps as f64;
        let model_mass = model.cdf(1.1).unwrap() - model.cdf(0.9).unwrap();
        let se = (model_mass * (1.0 - model_mass) / reps as f64).sqrt();
        assert!(
            (frac - model_mass).abs() < 3.0 * se + 2e-4,
            "sampled {frac} vs series {model_mass} (se {se:.1e})"
        );
    }

    #[test]
    fn min_explosion_survival_matches_sampled_pairs() {
        let f1 = parse_rate("poly:alpha=1,beta=2").unwrap();
        let f2 = parse_rate("poly:alpha=1,beta=3").unwrap();
        let m1 = crate::density::ExplosionModel::with_truncation(f1.clone(), 1, 1000).unwrap();
        let m2 = crate::density::ExplosionModel::with_truncation(f2.clone(), 1, 1000).unwrap();
        let s1 = ExplosionSampler::new(&f1, 1, 1e-3).unwrap();
        let s2 = ExplosionSampler::new(&f2, 1, 1e-3).unwrap();
        let reps = 100_000u64;
        let mins = run_batch(reps, 0xD0_02, 0, |s| {
            Ok(s1.sample(s).min(s2.sample(s)))
        })
        .unwrap();
        let s = 0.8f64;
        let frac = mins.iter().filter(|t| **t > s).count() as f64 / reps as f64;
        let (_, survival) = crate::density::min_explosion(&[m1, m2], s).unwrap();
        let se = (survival * (1.0 - survival) / reps as f64).sqrt();
        assert!(
            (frac - survival).abs() < 3.0 * se + 2e-3,
            "sampled {frac} vs product {survival}"
        );
    }

    #[test]
    fn compare_prediction_on_simulated_conditional_tail() {
        // the hazard-prefactor power law against a simulated conditional
        // tail, through the comparison-report API
        use crate::analytics::{compare_prediction, EmpiricalSurvival, FitRange};
        use crate::asymptotics::{TailKind, TailPrediction};
        let f = parse_rate("poly:alpha=1,beta=2").unwrap();
        let model = crate::density::ExplosionModel::new(f.clone(), 1).unwrap();
        let outs = run_batch(20_000, 0xD0_03, 0, |s| {
            simulate_birth(&f, 1, 1.0, 20_000, s)
        })
        .unwrap();
        let survivors: Vec<u64> = outs
            .iter()
            .filter_map(|o| match o.state_at_t {
                BirthState::Finite(k) => Some(k),
                BirthState::Exploded => None,
            })
            .collect();
        let ecdf = EmpiricalSurvival::from_samples(&survivors, "T > 1").unwrap();
        let pred = TailPrediction::new(
            TailKind::Power {
                exponent: -1.0,
                constant: Some(model.hazard_prefactor(1.0).unwrap()),
            },
            "hazard prefactor times 1/x",
        );
        // the pure power law replaces the tail sum by 1/x, which only holds
        // past the head; compare on the upper quantile window
        let range = FitRange {
            quantile_lo: 0.9,
            quantile_hi: 0.98,
        };
        let report = compare_prediction(&ecdf, &pred, range, 0.5).unwrap();
        assert!(report.pass, "sup deviation {}", report.sup_deviation);
        // verdicts are monotone in the tolerance
        let tighter = compare_prediction(&ecdf, &pred, range, 1e-6).unwrap();
        assert!(!tighter.pass);
    }

    #[test]
    fn embedded_and_discrete_urns_agree_in_law() {
        // Rubin's construction: the loser wealth from the embedding matches
        // the discrete chain stopped at 99% dominance (two-sample KS at 1%)
        let system = sys(&[("poly:alpha=1,beta=2", 1), ("poly:alpha=1,beta=2", 1)]);
        let reps = 10_000u64;
        let emb = UrnEmbedding::new(&system, 1e-3).unwrap();
        let embedded: Vec<f64> = run_batch(reps, 600, 0, |s| {
            let o = emb.simulate(s)?;
            Ok(o.loser_counts[0].1 as f64)
        })
        .unwrap();
        let discrete: Vec<f64> = run_batch(reps, 601, 0, |s| {
            let o = simulate_urn_discrete(&system, StopRule::ShareThreshold(0.99), s)?;
            Ok(*o.final_counts.iter().min().unwrap() as f64)
        })
        .unwrap();
        let ks = crate::analytics::ks_two_sample(&embedded, &discrete).unwrap();
        let crit = 1.628 * (2.0 / reps as f64).sqrt();
        assert!(ks < crit, "ks = {ks}, critical = {crit}");
    }

    #[test]
    fn winners_count_two_agents() {
        let system = sys(&[("poly:alpha=1,beta=2", 1), ("poly:alpha=1,beta=2", 1)]);
        let counts = winners_count(&system, 50, 200, 9, 0).unwrap();
        assert!(counts.iter().all(|c| *c == 1 || *c == 2));
    }

    #[test]
    fn dirichlet_shares_sum_to_one_exactly() {
        let mut s = RngStream::new(123, 0);
        for count in [2usize, 5, 100] {
            let shares = dirichlet_shares(count, &mut s).unwrap();
            let total: f64 = shares.iter().sum();
            assert_eq!(total, 1.0);
            assert!(shares.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn run_batch_worker_count_does_not_change_output() {
        let f = parse_rate("poly:alpha=1,beta=2").unwrap();
        let sampler = ExplosionSampler::new(&f, 1, 1e-3).unwrap();
        let seq = run_batch(500, 31, 1, |s| Ok(sampler.sample(s))).unwrap();
        let par = run_batch(500, 31, 8, |s| Ok(sampler.sample(s))).unwrap();
        assert_eq!(seq, par);
        let single = run_batch(1, 31, 1, |s| Ok(sampler.sample(s))).unwrap();
        let mut direct = RngStream::new(31, 0);
        assert_eq!(single[0], sampler.sample(&mut direct));
    }

    #[test]
    fn distinct_master_seeds_pass_two_sample_ks() {
        let f = parse_rate("poly:alpha=1,beta=2").unwrap();
        let sampler = ExplosionSampler::new(&f, 1, 1e-3).unwrap();
        let a = run_batch(4000, 1, 0, |s| Ok(sampler.sample(s))).unwrap();
        let b = run_batch(4000, 2, 0, |s| Ok(sampler.sample(s))).unwrap();
        let ks = crate::analytics::ks_two_sample(&a, &b).unwrap();
        // level 0.001 critical value: 1.9495 sqrt(2/n)
        let crit = 1.9495 * (2.0 / 4000.0f64).sqrt();
        assert!(ks < crit, "ks = {ks}, crit = {crit}");
    }

    #[test]
    fn birth_csv_schema() {
        let f = parse_rate("exp:beta=1").unwrap();
        let outs = run_batch(3, 5, 0, |s| simulate_birth(&f, 1, 0.5, 100, s)).unwrap();
        let mut buf = Vec::new();
        write_birth_csv(&outs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("replicate,state,exploded,jumps,stop_reason\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn urn_csv_marks_winner_as_inf() {
        let system = sys(&[("poly:alpha=1,beta=2", 1), ("poly:alpha=1,beta=3", 1)]);
        let emb = UrnEmbedding::new(&system, 1e-3).unwrap();
        let outs = run_batch(2, 6, 0, |s| emb.simulate(s)).unwrap();
        let mut buf = Vec::new();
        write_urn_csv(2, &outs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("replicate,winner,n_mon,x_inf_1,x_inf_2,bias_bound\n"));
        for line in text.lines().skip(1) {
            assert_eq!(line.matches("inf").count(), 1, "line: {line}");
        }
    }
}
