//! Analytic task families and the latent test sequences.
//!
//! Three families are provided:
//!
//! * `Minigolf`: one-dimensional putting with an unknown ground friction.
//! * `Velocity1D`: a double integrator that must hold an unknown target
//!   velocity (stand-in for HalfCheetahVel).
//! * `GoalReacher2D`: a planar point mass that must reach an unknown goal
//!   (stand-in for AntGoal).
//!
//! In every family the latent is observable only through rewards and
//! dynamics, never through the state.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::latent::{normalize_from_task, GaussianBelief, HyperpriorSpec, LatentRange, LatentVector};

pub const MINIGOLF_MIN_ACTION: f64 = 1e-5;
pub const MINIGOLF_MAX_ACTION: f64 = 10.0;
pub const MINIGOLF_HOLE_REWARD: f64 = 0.0;
pub const MINIGOLF_MISS_REWARD: f64 = -1.0;
pub const MINIGOLF_OVERSHOOT_REWARD: f64 = -100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Minigolf,
    Velocity1d,
    Goalreacher2d,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Minigolf, Family::Velocity1d, Family::Goalreacher2d];

    pub fn name(self) -> &'static str {
        match self {
            Family::Minigolf => "minigolf",
            Family::Velocity1d => "velocity1d",
            Family::Goalreacher2d => "goalreacher2d",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownName(format!("environment '{s}'")))
    }
}

/// Physical constants of the putting game, in metres and seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinigolfConstants {
    pub gravity: f64,
    pub hole_diameter: f64,
    pub ball_radius: f64,
    pub putter_length: f64,
    pub shot_noise_std: f64,
    pub start_max: f64,
}

impl Default for MinigolfConstants {
    fn default() -> Self {
        MinigolfConstants {
            gravity: 9.81,
            hole_diameter: 0.10,
            ball_radius: 0.02135,
            putter_length: 1.0,
            shot_noise_std: 0.3,
            start_max: 20.0,
        }
    }
}

impl MinigolfConstants {
    pub fn deceleration(&self, friction: f64) -> f64 {
        5.0 / 7.0 * self.gravity * friction
    }

    pub fn min_speed(&self, friction: f64, distance: f64) -> f64 {
        (2.0 * self.deceleration(friction) * distance).sqrt()
    }

    pub fn max_speed(&self, friction: f64, distance: f64) -> f64 {
        let d = self.hole_diameter;
        let r = self.ball_radius;
        let v_min = self.min_speed(friction, distance);
        ((2.0 * d - r).powi(2) * self.gravity / (2.0 * r) + v_min * v_min).sqrt()
    }

    /// Initial ball speed for a given action and shot noise.
    pub fn ball_speed(&self, action: f64, noise: f64) -> f64 {
        let putter = action * self.putter_length * (1.0 + noise);
        putter * self.putter_length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub family: Family,
    pub latent_range: LatentRange,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_lo: Vec<f64>,
    pub action_hi: Vec<f64>,
    pub max_steps: usize,
    pub episodes_per_task: usize,
    pub distractors: usize,
    pub dt: f64,
    pub minigolf: MinigolfConstants,
}

impl EnvSpec {
    pub fn minigolf(distractors: usize) -> Self {
        EnvSpec {
            family: Family::Minigolf,
            latent_range: LatentRange { lo: vec![0.01], hi: vec![2.0] },
            state_dim: 1 + distractors,
            action_dim: 1,
            action_lo: vec![MINIGOLF_MIN_ACTION],
            action_hi: vec![MINIGOLF_MAX_ACTION],
            max_steps: 20,
            episodes_per_task: 4,
            distractors,
            dt: 0.2,
            minigolf: MinigolfConstants::default(),
        }
    }

    pub fn velocity1d() -> Self {
        EnvSpec {
            family: Family::Velocity1d,
            latent_range: LatentRange { lo: vec![0.0], hi: vec![1.5] },
            state_dim: 2,
            action_dim: 1,
            action_lo: vec![-1.0],
            action_hi: vec![1.0],
            max_steps: 100,
            episodes_per_task: 1,
            distractors: 0,
            dt: 0.2,
            minigolf: MinigolfConstants::default(),
        }
    }

    pub fn goalreacher2d() -> Self {
        EnvSpec {
            family: Family::Goalreacher2d,
            latent_range: LatentRange { lo: vec![-3.0, -3.0], hi: vec![3.0, 3.0] },
            state_dim: 4,
            action_dim: 2,
            action_lo: vec![-1.0, -1.0],
            action_hi: vec![1.0, 1.0],
            max_steps: 100,
            episodes_per_task: 1,
            distractors: 0,
            dt: 0.2,
            minigolf: MinigolfConstants::default(),
        }
    }

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Minigolf => EnvSpec::minigolf(0),
            Family::Velocity1d => EnvSpec::velocity1d(),
            Family::Goalreacher2d => EnvSpec::goalreacher2d(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_range.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        if self.episodes_per_task == 0 {
            return Err(Error::invalid("episodes_per_task must be at least 1"));
        }
        check_dim(self.action_dim, self.action_lo.len())?;
        check_dim(self.action_dim, self.action_hi.len())?;
        if self.action_lo.iter().zip(&self.action_hi).any(|(l, h)| !(l < h)) {
            return Err(Error::invalid("action bounds require lo < hi"));
        }
        if self.family != Family::Minigolf && self.distractors != 0 {
            return Err(Error::invalid("distractors are only defined for minigolf"));
        }
        let expected_state = match self.family {
            Family::Minigolf => 1 + self.distractors,
            Family::Velocity1d => 2,
            Family::Goalreacher2d => 4,
        };
        check_dim(expected_state, self.state_dim)?;
        LatentRange::new(self.latent_range.lo.clone(), self.latent_range.hi.clone())?;
        Ok(())
    }

    /// Training hyperprior for this family.
    pub fn default_hyperprior(&self) -> HyperpriorSpec {
        let var = match self.family {
            Family::Minigolf => (0.01, 0.2),
            Family::Velocity1d => (0.01, 0.3),
            Family::Goalreacher2d => (0.1, 0.4),
        };
        HyperpriorSpec::uniform(self.latent_dim(), (-1.0, 1.0), var).expect("static hyperprior is valid")
    }

    /// State rescaled to O(1) magnitudes for network inputs.
    pub fn observation_features(&self, state: &[f64]) -> Vec<f64> {
        match self.family {
            Family::Minigolf => state.iter().map(|x| x / 10.0).collect(),
            Family::Velocity1d => vec![state[0] / 20.0, state[1]],
            Family::Goalreacher2d => vec![state[0] / 3.0, state[1] / 3.0, state[2], state[3]],
        }
    }

    pub fn reward_feature(&self, reward: f64) -> f64 {
        match self.family {
            Family::Minigolf => reward / 10.0,
            Family::Velocity1d => reward / 2.0,
            Family::Goalreacher2d => reward / 5.0,
        }
    }

    /// Map a normalised action in `[-1, 1]` affinely onto the bounds,
    /// clipping first. Symmetric bounds give `u * hi`; for Minigolf `u = 0`
    /// is the mid-strength stroke.
    pub fn action_from_unit(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .enumerate()
            .map(|(k, u)| {
                let (lo, hi) = (self.action_lo[k], self.action_hi[k]);
                lo + (u.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    /// The task itself ended the episode. `done && !terminal` means the
    /// step limit cut it short.
    pub terminal: bool,
}

/// One episode together with the prior it was collected under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub prior_used: GaussianBelief,
    pub true_latent: Option<LatentVector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::invalid("trajectory must contain at least one transition"));
        }
        let last = self.transitions.len() - 1;
        for (i, t) in self.transitions.iter().enumerate() {
            if t.done != (i == last) {
                return Err(Error::invalid("done must be set exactly on the final transition"));
            }
        }
        Ok(())
    }
}

/// Outcome of a single dynamics step; `terminal` excludes the step limit.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

fn distractor_features<R: Rng + ?Sized>(x: f64, alphas: &[f64], rng: &mut R) -> Vec<f64> {
    alphas
        .iter()
        .map(|a| {
            let e: f64 = StandardNormal.sample(rng);
            (x - a).abs() + e
        })
        .collect()
}

/// Start a putting episode. Returns the initial state and the distractor
/// offsets drawn for this episode.
pub fn minigolf_reset<R: Rng + ?Sized>(friction: f64, spec: &EnvSpec, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(friction > 0.0) {
        return Err(Error::invalid(format!("minigolf friction must be positive, got {friction}")));
    }
    let max = spec.minigolf.start_max;
    let x0 = max * rng.random::<f64>();
    let alphas: Vec<f64> = (0..spec.distractors).map(|_| max * rng.random::<f64>()).collect();
    let mut state = vec![x0];
    state.extend(distractor_features(x0, &alphas, rng));
    Ok((state, alphas))
}

/// One stroke. The action is the putter's angular speed, clipped to
/// `[1e-5, 10]`.
pub fn minigolf_step<R: Rng + ?Sized>(
    state: &[f64],
    action: f64,
    friction: f64,
    alphas: &[f64],
    spec: &EnvSpec,
    rng: &mut R,
) -> StepResult {
    let c = &spec.minigolf;
    let a = action.clamp(MINIGOLF_MIN_ACTION, MINIGOLF_MAX_ACTION);
    let noise = Normal::new(0.0, c.shot_noise_std).expect("noise std is non-negative").sample(rng);
    let x0 = state[0];
    let v0 = c.ball_speed(a, noise);
    let v_min = c.min_speed(friction, x0);
    let v_max = c.max_speed(friction, x0);
    let (x, reward, terminal) = if v0 >= v_min && v0 <= v_max {
        (0.0, MINIGOLF_HOLE_REWARD, true)
    } else {
        let x = x0 - v0 * v0 / (2.0 * c.deceleration(friction));
        if v0 > v_max {
            (x, MINIGOLF_OVERSHOOT_REWARD, true)
        } else {
            (x, MINIGOLF_MISS_REWARD, false)
        }
    };
    let mut next_state = vec![x];
    next_state.extend(distractor_features(x, alphas, rng));
    StepResult { next_state, reward, terminal }
}

pub fn velocity1d_step(state: &[f64], action: f64, target: f64, spec: &EnvSpec) -> StepResult {
    let a = action.clamp(-1.0, 1.0);
    let vel = state[1] + a * spec.dt;
    let pos = state[0] + vel * spec.dt;
    let err = (vel - target).abs();
    let penalty = if err > 0.5 { 10.0 } else { 0.0 };
    StepResult { next_state: vec![pos, vel], reward: -err - 0.05 * a * a - penalty, terminal: false }
}

pub fn goalreacher2d_step(state: &[f64], action: &[f64], goal: &[f64], spec: &EnvSpec) -> StepResult {
    let ax = action[0].clamp(-1.0, 1.0);
    let ay = action[1].clamp(-1.0, 1.0);
    let vx = state[2] + ax * spec.dt;
    let vy = state[3] + ay * spec.dt;
    let px = state[0] + vx * spec.dt;
    let py = state[1] + vy * spec.dt;
    let dist = ((px - goal[0]).powi(2) + (py - goal[1]).powi(2)).sqrt();
    StepResult { next_state: vec![px, py, vx, vy], reward: -dist - 0.01 * (ax * ax + ay * ay), terminal: false }
}

/// A running episode of one task instance.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvSpec,
    latent: Vec<f64>,
    state: Vec<f64>,
    alphas: Vec<f64>,
    steps: usize,
    finished: bool,
}

impl Environment {
    /// `latent` is in task units.
    pub fn new(spec: EnvSpec, latent: &LatentVector) -> Result<Self> {
        spec.validate()?;
        check_dim(spec.latent_dim(), latent.dim())?;
        if spec.family == Family::Minigolf && !(latent.0[0] > 0.0) {
            return Err(Error::invalid(format!("minigolf friction must be positive, got {}", latent.0[0])));
        }
        Ok(Environment { state: vec![0.0; spec.state_dim], spec, latent: latent.0.clone(), alphas: Vec::new(), steps: 0, finished: true })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        let (state, alphas) = match self.spec.family {
            Family::Minigolf => minigolf_reset(self.latent[0], &self.spec, rng)?,
            Family::Velocity1d => (vec![0.0, 0.0], Vec::new()),
            Family::Goalreacher2d => (vec![0.0; 4], Vec::new()),
        };
        self.state = state;
        self.alphas = alphas;
        self.steps = 0;
        self.finished = false;
        Ok(self.state.clone())
    }

    /// Advance one step with an action in environment units.
    pub fn step<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> Result<Transition> {
        if self.finished {
            return Err(Error::invalid("step called on a finished episode; call reset first"));
        }
        check_dim(self.spec.action_dim, action.len())?;
        let result = match self.spec.family {
            Family::Minigolf => minigolf_step(&self.state, action[0], self.latent[0], &self.alphas, &self.spec, rng),
            Family::Velocity1d => velocity1d_step(&self.state, action[0], self.latent[0], &self.spec),
            Family::Goalreacher2d => goalreacher2d_step(&self.state, action, &self.latent, &self.spec),
        };
        self.steps += 1;
        let done = result.terminal || self.steps >= self.spec.max_steps;
        let clipped: Vec<f64> =
            action.iter().enumerate().map(|(k, a)| a.clamp(self.spec.action_lo[k], self.spec.action_hi[k])).collect();
        let transition = Transition {
            state: std::mem::replace(&mut self.state, result.next_state.clone()),
            action: clipped,
            reward: result.reward,
            next_state: result.next_state,
            done,
            terminal: result.terminal,
        };
        self.finished = done;
        Ok(transition)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SequenceName {
    #[serde(rename = "minigolf_A")]
    MinigolfA,
    #[serde(rename = "minigolf_B")]
    MinigolfB,
    #[serde(rename = "minigolf_C")]
    MinigolfC,
    #[serde(rename = "cheetah_A")]
    CheetahA,
    #[serde(rename = "cheetah_B")]
    CheetahB,
    #[serde(rename = "ant_A")]
    AntA,
    #[serde(rename = "ant_B")]
    AntB,
}

impl SequenceName {
    pub const ALL: [SequenceName; 7] = [
        SequenceName::MinigolfA,
        SequenceName::MinigolfB,
        SequenceName::MinigolfC,
        SequenceName::CheetahA,
        SequenceName::CheetahB,
        SequenceName::AntA,
        SequenceName::AntB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SequenceName::MinigolfA => "minigolf_A",
            SequenceName::MinigolfB => "minigolf_B",
            SequenceName::MinigolfC => "minigolf_C",
            SequenceName::CheetahA => "cheetah_A",
            SequenceName::CheetahB => "cheetah_B",
            SequenceName::AntA => "ant_A",
            SequenceName::AntB => "ant_B",
        }
    }

    pub fn family(self) -> Family {
        match self {
            SequenceName::MinigolfA | SequenceName::MinigolfB | SequenceName::MinigolfC => Family::Minigolf,
            SequenceName::CheetahA | SequenceName::CheetahB => Family::Velocity1d,
            SequenceName::AntA | SequenceName::AntB => Family::Goalreacher2d,
        }
    }

    /// Closed-form latent value at task index `t`, in task units.
    pub fn value(self, t: usize) -> Vec<f64> {
        let tf = t as f64;
        match self {
            SequenceName::MinigolfA => vec![-0.199 * (0.1 * tf).sin() + 0.30845],
            SequenceName::MinigolfB => vec![0.5075 + 0.398 * (tf / 50.0 - (0.5 + tf / 50.0).floor())],
            SequenceName::MinigolfC => vec![0.995 * (tf - 5.0).tanh() + 1.204],
            SequenceName::CheetahA => {
                let s = tf + 5.0;
                vec![3.0 / 16.0 * (-(s / 16.0).tanh() + (s / 2.0).sin() * 16.0 / s) + 0.75]
            }
            SequenceName::CheetahB => {
                let v = if t <= 30 {
                    0.15
                } else if t <= 60 {
                    1.125
                } else {
                    0.75
                };
                vec![v]
            }
            SequenceName::AntA => {
                let phase = 2.0 * std::f64::consts::PI / 15.0 * (16.0 * tf + 5.0).sqrt();
                vec![3.0 * phase.sin(), 3.0 * phase.cos()]
            }
            SequenceName::AntB => {
                let angle = if t <= 20 { std::f64::consts::FRAC_PI_4 } else { 5.0 * std::f64::consts::FRAC_PI_4 };
                vec![3.0 * angle.sin(), 3.0 * angle.cos()]
            }
        }
    }
}

impl fmt::Display for SequenceName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SequenceName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SequenceName::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| Error::UnknownName(format!("sequence '{s}'")))
    }
}

/// A named test-time sequence with its sampling noise and initial prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub name: SequenceName,
    /// Per-dimension variance of test tasks around the sequence, normalised units.
    pub noise_variance: Vec<f64>,
    pub initial_prior: GaussianBelief,
    pub range: LatentRange,
}

impl SequenceSpec {
    pub fn named(name: SequenceName) -> Self {
        let range = EnvSpec::for_family(name.family()).latent_range;
        let norm = |task: Vec<f64>| normalize_from_task(&LatentVector(task), &range).expect("matching dims").0;
        let (noise, prior_task_mean, prior_std): (f64, Vec<f64>, f64) = match name {
            SequenceName::MinigolfA | SequenceName::MinigolfB => (0.001, vec![1.0], 0.2),
            SequenceName::MinigolfC => (0.001, name.value(0), 0.2),
            SequenceName::CheetahA => (1e-5, vec![1.5], 0.01f64.sqrt()),
            SequenceName::CheetahB => (1e-5, name.value(0), 1e-5f64.sqrt()),
            SequenceName::AntA => (0.01, vec![0.0, 3.0], 0.01f64.sqrt()),
            SequenceName::AntB => (0.01, name.value(0), 0.01f64.sqrt()),
        };
        let d = range.dim();
        SequenceSpec {
            name,
            noise_variance: vec![noise; d],
            initial_prior: GaussianBelief::new(norm(prior_task_mean), vec![prior_std; d]).expect("static prior is valid"),
            range,
        }
    }

    pub fn dim(&self) -> usize {
        self.range.dim()
    }

    /// Noiseless sequence value mapped to normalised units.
    pub fn normalized_mean(&self, t: usize) -> LatentVector {
        normalize_from_task(&eval_sequence(self, t), &self.range).expect("matching dims")
    }
}

impl FromStr for SequenceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(SequenceSpec::named(s.parse()?))
    }
}

/// Task-unit latent of the named sequence at index `t`.
pub fn eval_sequence(seq: &SequenceSpec, t: usize) -> LatentVector {
    LatentVector(seq.name.value(t))
}

/// Draw the normalised latent of test task `t`.
pub fn sample_test_task<R: Rng + ?Sized>(seq: &SequenceSpec, t: usize, rng: &mut R) -> LatentVector {
    let mean = seq.normalized_mean(t);
    LatentVector(
        mean.0
            .iter()
            .zip(&seq.noise_variance)
            .map(|(m, v)| {
                let e: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * e
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn minigolf_reset_shapes() {
        let spec = EnvSpec::minigolf(0);
        let (s, a) = minigolf_reset(1.0, &spec, &mut SeedStream::new(1).rng()).unwrap();
        assert_eq!(s.len(), 1);
        assert!(a.is_empty());
        assert!((0.0..=20.0).contains(&s[0]));
        let spec3 = EnvSpec::minigolf(3);
        let (s3, a3) = minigolf_reset(1.0, &spec3, &mut SeedStream::new(1).rng()).unwrap();
        assert_eq!(s3.len(), 4);
        assert_eq!(a3.len(), 3);
        // First draw is x0 in both cases.
        assert_eq!(s[0], s3[0]);
        assert!(minigolf_reset(0.0, &spec, &mut SeedStream::new(1).rng()).is_err());
        assert!(minigolf_reset(-0.5, &spec, &mut SeedStream::new(1).rng()).is_err());
    }

    #[test]
    fn minigolf_speed_formulas() {
        let c = MinigolfConstants::default();
        assert!((c.deceleration(1.0) - 7.0071).abs() < 1e-4);
        assert!((c.min_speed(1.0, 10.0) - 11.838).abs() < 1e-3);
        let x = 10.0 - 25.0 / (2.0 * c.deceleration(1.0));
        assert!((x - 8.216).abs() < 1e-3);
    }

    #[test]
    fn minigolf_rewards_are_discrete() {
        let spec = EnvSpec::minigolf(2);
        let mut rng = SeedStream::new(9).rng();
        for i in 0..5000 {
            let friction = 0.01 + 1.99 * (i as f64 / 5000.0);
            let (state, alphas) = minigolf_reset(friction, &spec, &mut rng).unwrap();
            let a = 10.0 * rng.random::<f64>();
            let r = minigolf_step(&state, a, friction, &alphas, &spec, &mut rng);
            assert!([0.0, -1.0, -100.0].contains(&r.reward));
            assert_eq!(r.terminal, r.reward != -1.0);
            assert!(r.next_state[0] <= state[0]);
            assert_eq!(r.next_state.len(), 3);
        }
    }

    #[test]
    fn velocity_rewards() {
        let spec = EnvSpec::velocity1d();
        let r = |vel: f64, target: f64| velocity1d_step(&[0.0, vel], 0.0, target, &spec).reward;
        assert!(r(0.8, 0.8).abs() < 1e-12);
        assert!((r(1.5, 0.75) + 10.75).abs() < 1e-12);
        assert!((r(1.0, 0.8) + 0.2).abs() < 1e-12);
        let s = velocity1d_step(&[1.0, 0.5], 5.0, 0.0, &spec);
        assert!((s.next_state[1] - 0.7).abs() < 1e-12);
        assert!((s.next_state[0] - 1.14).abs() < 1e-12);
    }

    #[test]
    fn goalreacher_rewards() {
        let spec = EnvSpec::goalreacher2d();
        let r = goalreacher2d_step(&[3.0, 3.0, 0.0, 0.0], &[0.0, 0.0], &[3.0, 3.0], &spec);
        assert!(r.reward.abs() < 1e-12);
        let r = goalreacher2d_step(&[0.0, 0.0, 0.0, 0.0], &[0.0, 0.0], &[3.0, 3.0], &spec);
        assert!((r.reward + 4.242_640_687).abs() < 1e-8);
        // v' = (0.2, 0.2), p' = (0.04, 0.04)
        let r = goalreacher2d_step(&[0.0, 0.0, 0.0, 0.0], &[1.0, 1.0], &[0.04, 0.04], &spec);
        assert!((r.reward + 0.02).abs() < 1e-12);
    }

    #[test]
    fn environment_enforces_step_limit_and_reset() {
        let spec = EnvSpec::velocity1d();
        let mut env = Environment::new(spec, &LatentVector(vec![0.5])).unwrap();
        let mut rng = SeedStream::new(2).rng();
        assert!(env.step(&[0.0], &mut rng).is_err());
        env.reset(&mut rng).unwrap();
        let mut n = 0;
        loop {
            let t = env.step(&[2.0], &mut rng).unwrap();
            assert_eq!(t.action, vec![1.0]);
            n += 1;
            if t.done {
                break;
            }
        }
        assert_eq!(n, 100);
        assert!(env.step(&[0.0], &mut rng).is_err());
        assert!(Environment::new(EnvSpec::minigolf(0), &LatentVector(vec![0.0])).is_err());
        assert!(Environment::new(EnvSpec::minigolf(0), &LatentVector(vec![0.5, 1.0])).is_err());
    }

    #[test]
    fn sequence_values() {
        let v = |n: SequenceName, t: usize| n.value(t);
        assert!((v(SequenceName::MinigolfA, 0)[0] - 0.30845).abs() < 1e-12);
        assert!((v(SequenceName::MinigolfB, 24)[0] - 0.69854).abs() < 1e-9);
        assert!((v(SequenceName::MinigolfB, 25)[0] - 0.30850).abs() < 1e-9);
        assert!((v(SequenceName::CheetahA, 0)[0] - 1.052_325_212).abs() < 1e-8);
        let ant = v(SequenceName::AntA, 0);
        assert!((ant[0] - 2.416_719_065).abs() < 1e-8);
        assert!((ant[1] - 1.777_489_511).abs() < 1e-8);
        assert_eq!(v(SequenceName::CheetahB, 30), vec![0.15]);
        assert_eq!(v(SequenceName::CheetahB, 31), vec![1.125]);
        assert_eq!(v(SequenceName::CheetahB, 61), vec![0.75]);
        assert!((v(SequenceName::AntB, 21)[0] + 2.121_320_344).abs() < 1e-8);
        assert!("minigolf_D".parse::<SequenceName>().is_err());
        for n in SequenceName::ALL {
            assert_eq!(n.name().parse::<SequenceName>().unwrap(), n);
        }
    }

    #[test]
    fn minigolf_b_is_periodic() {
        for t in 0..=200 {
            let a = SequenceName::MinigolfB.value(t)[0];
            let b = SequenceName::MinigolfB.value(t + 50)[0];
            assert!((a - b).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn sequences_are_pure() {
        for n in SequenceName::ALL {
            for t in [0, 7, 25, 80] {
                let a = n.value(t);
                let b = n.value(t);
                assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn initial_priors() {
        let a = SequenceSpec::named(SequenceName::MinigolfA);
        assert!((a.initial_prior.mean()[0] - (2.0 * 0.99 / 1.99 - 1.0)).abs() < 1e-12);
        assert_eq!(a.initial_prior.std(), &[0.2]);
        let ant = SequenceSpec::named(SequenceName::AntA);
        assert_eq!(ant.initial_prior.mean(), &[0.0, 1.0]);
    }

    #[test]
    fn test_task_sampling() {
        let seq = SequenceSpec::named(SequenceName::MinigolfA);
        let mean = seq.normalized_mean(0).0[0];
        let mut rng = SeedStream::new(4).rng();
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_test_task(&seq, 0, &mut rng).0[0]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((m - mean).abs() < 0.002);
        assert!((sd - 0.001f64.sqrt()).abs() < 0.001, "sd {sd}");

        let mut quiet = seq.clone();
        quiet.noise_variance = vec![0.0];
        assert_eq!(sample_test_task(&quiet, 5, &mut rng), quiet.normalized_mean(5));

        let a = sample_test_task(&seq, 3, &mut SeedStream::new(8).rng());
        let b = sample_test_task(&seq, 3, &mut SeedStream::new(8).rng());
        assert_eq!(a, b);
    }
}
