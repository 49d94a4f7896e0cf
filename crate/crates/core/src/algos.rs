//! Loss functions and action selection for the five offline learners:
//! NFQ, DQN, Double DQN, discrete BCQ and discrete CQL.
//!
//! Every loss is split into two stages. `td_targets` computes the
//! bootstrapped targets in deterministic eval mode; they are constants for
//! differentiation. `surrogate` then evaluates the loss and its gradient at
//! the heads from an online forward pass over the batch states.

use ndarray::{Array2, ArrayView1, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dataset::Transition;
use crate::error::{Error, Result};
use crate::mdp::{Action, ObservationEncoding, State};
use crate::nn::{ForwardMode, Net, Objective, Outputs, QModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoKind {
    Nfq,
    Dqn,
    Ddqn,
    Bcq,
    Cql,
}

impl AlgoKind {
    pub const ALL: [AlgoKind; 5] = [
        AlgoKind::Nfq,
        AlgoKind::Dqn,
        AlgoKind::Ddqn,
        AlgoKind::Bcq,
        AlgoKind::Cql,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgoKind::Nfq => "nfq",
            AlgoKind::Dqn => "dqn",
            AlgoKind::Ddqn => "ddqn",
            AlgoKind::Bcq => "bcq",
            AlgoKind::Cql => "cql",
        }
    }

    /// Display label for tables.
    pub fn label(self) -> &'static str {
        match self {
            AlgoKind::Nfq => "NFQ",
            AlgoKind::Dqn => "DQN",
            AlgoKind::Ddqn => "DDQN",
            AlgoKind::Bcq => "BCQ",
            AlgoKind::Cql => "CQL",
        }
    }

    /// NFQ fits the whole dataset at every step and bootstraps from the
    /// online network, so it never uses the target network.
    pub fn uses_target_network(self) -> bool {
        self != AlgoKind::Nfq
    }
}

impl std::fmt::Display for AlgoKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AlgoKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AlgoKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown algorithm {s:?}; valid: nfq, dqn, ddqn, bcq, cql"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    pub kind: AlgoKind,
    pub gamma: f64,
    /// Eligibility threshold on `p(a) / max p`.
    pub bcq_tau: f64,
    /// Weight of the behavior-cloning cross-entropy.
    pub bcq_gen_weight: f64,
    /// Weight of the conservative penalty.
    pub cql_alpha: f64,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            kind: AlgoKind::Dqn,
            gamma: 0.99,
            bcq_tau: 0.3,
            bcq_gen_weight: 1.0,
            cql_alpha: 1.0,
        }
    }
}

impl AlgoConfig {
    pub fn new(kind: AlgoKind) -> Self {
        AlgoConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.bcq_tau) {
            return Err(Error::InvalidConfig(format!("bcq_tau {} outside [0, 1]", self.bcq_tau)));
        }
        if !(self.cql_alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("cql_alpha {} must be > 0", self.cql_alpha)));
        }
        if !(self.bcq_gen_weight >= 0.0) {
            return Err(Error::InvalidConfig("bcq_gen_weight must be >= 0".into()));
        }
        Ok(())
    }

    pub fn needs_gen_head(&self) -> bool {
        self.kind == AlgoKind::Bcq
    }
}

/// Transitions laid out as network inputs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub terminal: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(transitions: &[Transition], enc: ObservationEncoding) -> Self {
        let n = transitions.len();
        let dim = enc.dim();
        let mut states = Array2::zeros((n, dim));
        let mut next_states = Array2::zeros((n, dim));
        for (i, tr) in transitions.iter().enumerate() {
            enc.write(tr.state, states.row_mut(i).as_slice_mut().unwrap());
            enc.write(tr.next_state, next_states.row_mut(i).as_slice_mut().unwrap());
        }
        Batch {
            states,
            actions: transitions.iter().map(|t| t.action.index()).collect(),
            rewards: transitions.iter().map(|t| t.reward).collect(),
            next_states,
            terminal: transitions.iter().map(|t| t.terminal).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: ArrayView1<f64>) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log sum exp` with max subtraction.
pub fn logsumexp(values: ArrayView1<f64>) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Actions whose probability relative to the most likely action exceeds
/// `tau`. At `tau = 1` the comparison is `>=`, keeping the modal set.
pub fn bcq_eligible(probs: &[f64], tau: f64) -> Vec<bool> {
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    probs
        .iter()
        .map(|&p| {
            let ratio = p / max;
            if tau >= 1.0 {
                ratio >= 1.0
            } else {
                ratio > tau
            }
        })
        .collect()
}

/// Highest-Q eligible action (lowest index on ties).
pub fn bcq_select(q: &[f64], probs: &[f64], tau: f64) -> usize {
    let eligible = bcq_eligible(probs, tau);
    let mut best: Option<usize> = None;
    for (a, &ok) in eligible.iter().enumerate() {
        if ok && best.is_none_or(|b| q[a] > q[b]) {
            best = Some(a);
        }
    }
    // max p always qualifies; only an all-NaN row leaves the set empty
    best.unwrap_or_else(|| argmax(probs))
}

/// Action whose target-network value is used as the bootstrap, given the
/// online Q-values and generative logits at the next state.
pub fn bootstrap_action(
    cfg: &AlgoConfig,
    q_online_next: ArrayView1<f64>,
    q_target_next: ArrayView1<f64>,
    gen_next: Option<ArrayView1<f64>>,
) -> usize {
    match cfg.kind {
        AlgoKind::Nfq => argmax(&q_online_next.to_vec()),
        AlgoKind::Dqn => argmax(&q_target_next.to_vec()),
        AlgoKind::Ddqn | AlgoKind::Cql => argmax(&q_online_next.to_vec()),
        AlgoKind::Bcq => {
            let probs = softmax(gen_next.expect("BCQ requires a generative head"));
            bcq_select(&q_online_next.to_vec(), &probs, cfg.bcq_tau)
        }
    }
}

/// `max_a Q(s', a)` for NFQ (online) and DQN (target); the target value at
/// the selected action for DDQN, CQL and BCQ.
pub fn bootstrap_value(
    cfg: &AlgoConfig,
    q_online_next: ArrayView1<f64>,
    q_target_next: ArrayView1<f64>,
    gen_next: Option<ArrayView1<f64>>,
) -> f64 {
    let a = bootstrap_action(cfg, q_online_next, q_target_next, gen_next);
    match cfg.kind {
        AlgoKind::Nfq => q_online_next[a],
        _ => q_target_next[a],
    }
}

fn check_heads(model: &QModel, cfg: &AlgoConfig) -> Result<()> {
    if cfg.needs_gen_head() && !model.spec().gen_head {
        return Err(Error::InvalidConfig(
            "BCQ needs a network with a generative head".into(),
        ));
    }
    Ok(())
}

/// Bootstrapped targets `r + gamma * bootstrap`, with the bootstrap dropped
/// for terminal transitions. Computed in eval mode.
pub fn td_targets(model: &QModel, batch: &Batch, cfg: &AlgoConfig) -> Result<Vec<f64>> {
    check_heads(model, cfg)?;
    if cfg.gamma == 0.0 {
        return Ok(batch.rewards.clone());
    }
    let online = model.eval(batch.next_states.view(), Net::Online)?;
    let target = if cfg.kind.uses_target_network() {
        model.eval(batch.next_states.view(), Net::Target)?
    } else {
        online.clone()
    };
    Ok((0..batch.len())
        .map(|i| {
            let r = batch.rewards[i];
            if batch.terminal[i] {
                return r;
            }
            let boot = bootstrap_value(
                cfg,
                online.q.row(i),
                target.q.row(i),
                online.gen.as_ref().map(|g| g.row(i)),
            );
            r + cfg.gamma * boot
        })
        .collect())
}

/// Components of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    /// Mean squared TD error.
    pub td: f64,
    /// Mean `logsumexp_a Q(s, a) - Q(s, a_data)` (CQL only).
    pub penalty: f64,
    /// Mean cross-entropy of the generative head (BCQ only).
    pub gen_ce: f64,
    pub total: f64,
}

/// Loss and head gradients given online outputs at the batch states and
/// frozen targets.
pub fn surrogate(
    outputs: &Outputs,
    batch: &Batch,
    targets: &[f64],
    cfg: &AlgoConfig,
) -> (LossParts, Array2<f64>, Option<Array2<f64>>) {
    let n = batch.len() as f64;
    let mut dq = Array2::zeros(outputs.q.raw_dim());
    let mut parts = LossParts::default();

    for i in 0..batch.len() {
        let a = batch.actions[i];
        let diff = outputs.q[[i, a]] - targets[i];
        parts.td += diff * diff / n;
        dq[[i, a]] += 2.0 * diff / n;
    }
    parts.total = parts.td;

    if cfg.kind == AlgoKind::Cql {
        for i in 0..batch.len() {
            let row = outputs.q.row(i);
            let a = batch.actions[i];
            parts.penalty += (logsumexp(row) - row[a]) / n;
            let probs = softmax(row);
            for (j, p) in probs.into_iter().enumerate() {
                let indicator = if j == a { 1.0 } else { 0.0 };
                dq[[i, j]] += cfg.cql_alpha * (p - indicator) / n;
            }
        }
        parts.total += cfg.cql_alpha * parts.penalty;
    }

    let mut dgen = None;
    if cfg.kind == AlgoKind::Bcq {
        let logits = outputs.gen.as_ref().expect("BCQ requires a generative head");
        let mut d = Array2::zeros(logits.raw_dim());
        for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
            let a = batch.actions[i];
            parts.gen_ce += (logsumexp(row) - row[a]) / n;
            for (j, p) in softmax(row).into_iter().enumerate() {
                let indicator = if j == a { 1.0 } else { 0.0 };
                d[[i, j]] = cfg.bcq_gen_weight * (p - indicator) / n;
            }
        }
        parts.total += cfg.bcq_gen_weight * parts.gen_ce;
        dgen = Some(d);
    }
    (parts, dq, dgen)
}

/// Deterministic (eval-mode) loss of the configured algorithm.
pub fn loss(model: &QModel, batch: &Batch, cfg: &AlgoConfig) -> Result<LossParts> {
    let targets = td_targets(model, batch, cfg)?;
    let outputs = model.eval(batch.states.view(), Net::Online)?;
    Ok(surrogate(&outputs, batch, &targets, cfg).0)
}

fn loss_as(kind: AlgoKind, model: &QModel, batch: &Batch, cfg: &AlgoConfig) -> Result<f64> {
    let cfg = AlgoConfig { kind, ..cfg.clone() };
    loss(model, batch, &cfg).map(|p| p.total)
}

pub fn nfq_loss(model: &QModel, batch: &Batch, cfg: &AlgoConfig) -> Result<f64> {
    loss_as(AlgoKind::Nfq, model, batch, cfg)
}

pub fn dqn_loss(model: &QModel, batch: &Batch, cfg: &AlgoConfig) -> Result<f64> {
    loss_as(AlgoKind::Dqn, model, batch, cfg)
}

pub fn ddqn_loss(model: &QModel, batch: &Batch, cfg: &AlgoConfig) -> Result<f64> {
    loss_as(AlgoKind::Ddqn, model, batch, cfg)
}

pub fn bcq_loss(model: &QModel, batch: &Batch, cfg: &AlgoConfig) -> Result<f64> {
    loss_as(AlgoKind::Bcq, model, batch, cfg)
}

pub fn cql_loss(model: &QModel, batch: &Batch, cfg: &AlgoConfig) -> Result<f64> {
    loss_as(AlgoKind::Cql, model, batch, cfg)
}

/// One training evaluation: targets in eval mode, online pass in `mode`.
/// Returns the loss, the parameter gradient and the tape (for running
/// statistics).
pub fn loss_and_grad(
    model: &QModel,
    batch: &Batch,
    cfg: &AlgoConfig,
    mode: ForwardMode,
    rng: Option<&mut dyn RngCore>,
) -> Result<(LossParts, Vec<f64>, crate::nn::Tape)> {
    let targets = td_targets(model, batch, cfg)?;
    let (outputs, tape) = model.forward_with_tape(batch.states.view(), mode, rng)?;
    let (parts, dq, dgen) = surrogate(&outputs, batch, &targets, cfg);
    let grads = model.backward(&tape, dq.view(), dgen.as_ref().map(|d| d.view()));
    Ok((parts, grads, tape))
}

/// The loss with its targets frozen at construction, for gradient checks.
pub struct FrozenLoss {
    batch: Batch,
    cfg: AlgoConfig,
    targets: Vec<f64>,
    /// Multiplies the analytic gradient; 1.0 except in sensitivity tests.
    pub grad_scale: f64,
}

impl FrozenLoss {
    pub fn new(model: &QModel, batch: Batch, cfg: AlgoConfig) -> Result<Self> {
        let targets = td_targets(model, &batch, &cfg)?;
        Ok(FrozenLoss {
            batch,
            cfg,
            targets,
            grad_scale: 1.0,
        })
    }
}

impl Objective for FrozenLoss {
    fn loss(&self, model: &QModel) -> f64 {
        let outputs = model.eval(self.batch.states.view(), Net::Online).unwrap();
        surrogate(&outputs, &self.batch, &self.targets, &self.cfg).0.total
    }

    fn loss_and_grad(&self, model: &QModel) -> (f64, Vec<f64>) {
        let (outputs, tape) = model
            .forward_with_tape(self.batch.states.view(), ForwardMode::Eval, None)
            .unwrap();
        let (parts, dq, dgen) = surrogate(&outputs, &self.batch, &self.targets, &self.cfg);
        let mut grads = model.backward(&tape, dq.view(), dgen.as_ref().map(|d| d.view()));
        if self.grad_scale != 1.0 {
            grads.iter_mut().for_each(|g| *g *= self.grad_scale);
        }
        (parts.total, grads)
    }

    fn smooth_piece(&self, model: &QModel) -> Vec<bool> {
        if model.spec().activation != crate::nn::Activation::Relu {
            return Vec::new();
        }
        let (_, tape) = model
            .forward_with_tape(self.batch.states.view(), ForwardMode::Eval, None)
            .unwrap();
        tape.sign_pattern()
    }
}

/// Greedy actions for a set of states: plain argmax of the online Q, or
/// the constrained BCQ rule. Ties go to the lowest action index.
pub fn greedy_actions(
    model: &QModel,
    states: &[State],
    cfg: &AlgoConfig,
    enc: ObservationEncoding,
) -> Result<Vec<Action>> {
    check_heads(model, cfg)?;
    let mut x = Array2::zeros((states.len(), enc.dim()));
    for (i, s) in states.iter().enumerate() {
        enc.write(*s, x.row_mut(i).as_slice_mut().unwrap());
    }
    let out = model.eval(x.view(), Net::Online)?;
    Ok((0..states.len())
        .map(|i| {
            let q = out.q.row(i).to_vec();
            let a = match cfg.kind {
                AlgoKind::Bcq => {
                    let probs = softmax(out.gen.as_ref().unwrap().row(i));
                    bcq_select(&q, &probs, cfg.bcq_tau)
                }
                _ => argmax(&q),
            };
            Action::from_index(a).unwrap()
        })
        .collect())
}

pub fn greedy_action(
    model: &QModel,
    s: State,
    cfg: &AlgoConfig,
    enc: ObservationEncoding,
) -> Result<Action> {
    greedy_actions(model, &[s], cfg, enc).map(|v| v[0])
}

pub fn bcq_policy_action(
    model: &QModel,
    s: State,
    tau: f64,
    enc: ObservationEncoding,
) -> Result<Action> {
    let cfg = AlgoConfig {
        kind: AlgoKind::Bcq,
        bcq_tau: tau,
        ..AlgoConfig::default()
    };
    greedy_action(model, s, &cfg, enc)
}

/// Behavior-policy probabilities from the generative head at `s`.
pub fn behavior_probs(model: &QModel, s: State, enc: ObservationEncoding) -> Result<Vec<f64>> {
    let x = Array2::from_shape_vec((1, enc.dim()), crate::mdp::encode_observation(s, enc)).unwrap();
    let out = model.eval(x.view(), Net::Online)?;
    let gen = out
        .gen
        .ok_or_else(|| Error::InvalidConfig("network has no generative head".into()))?;
    Ok(softmax(gen.row(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, Activation, NetworkSpec};
    use crate::rng::{stream, Stream};
    use ndarray::{arr1, array};
    use rand::Rng;

    fn model(gen_head: bool, seed: u64) -> QModel {
        let spec = NetworkSpec {
            input_dim: 8,
            hidden_layers: 2,
            hidden_units: 16,
            activation: Activation::Tanh,
            dropout_rate: 0.0,
            batch_norm: true,
            gen_head,
        };
        QModel::init(spec, &mut stream(seed, Stream::Init)).unwrap()
    }

    fn random_transitions(n: usize, seed: u64) -> Vec<Transition> {
        let mut rng = stream(seed, Stream::Batch);
        (0..n)
            .map(|t| {
                let next = State::from_index(rng.random_range(0..18)).unwrap();
                Transition {
                    episode: 0,
                    t,
                    state: State::from_index(rng.random_range(0..18)).unwrap(),
                    action: Action::from_index(rng.random_range(0..9)).unwrap(),
                    reward: crate::mdp::reward(next),
                    next_state: next,
                    terminal: false,
                }
            })
            .collect()
    }

    fn batch(n: usize, seed: u64) -> Batch {
        Batch::from_transitions(&random_transitions(n, seed), ObservationEncoding::FactoredOnehot)
    }

    #[test]
    fn nfq_scalar_example() {
        // gamma = 0, Q(s, a) = 0.2, r = 1 -> (1 - 0.2)^2
        let outputs = Outputs {
            q: Array2::from_elem((1, 9), 0.2),
            gen: None,
        };
        let mut b = batch(1, 0);
        b.rewards = vec![1.0];
        let cfg = AlgoConfig {
            kind: AlgoKind::Nfq,
            gamma: 0.0,
            ..Default::default()
        };
        let (parts, _, _) = surrogate(&outputs, &b, &[1.0], &cfg);
        assert!((parts.total - 0.64).abs() < 1e-12);
    }

    #[test]
    fn exact_targets_give_zero_loss() {
        let outputs = Outputs {
            q: Array2::from_elem((2, 9), 0.7),
            gen: None,
        };
        let b = batch(2, 1);
        let (parts, dq, _) = surrogate(&outputs, &b, &[0.7, 0.7], &AlgoConfig::new(AlgoKind::Dqn));
        assert_eq!(parts.total, 0.0);
        assert!(dq.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dqn_and_ddqn_targets_discriminate() {
        let online = arr1(&[1.0, 2.0]);
        let target = arr1(&[3.0, 0.5]);
        let dqn = AlgoConfig { kind: AlgoKind::Dqn, gamma: 1.0, ..Default::default() };
        let ddqn = AlgoConfig { kind: AlgoKind::Ddqn, gamma: 1.0, ..Default::default() };
        assert_eq!(bootstrap_value(&dqn, online.view(), target.view(), None), 3.0);
        assert_eq!(bootstrap_value(&ddqn, online.view(), target.view(), None), 0.5);
        // with the same network they agree
        assert_eq!(
            bootstrap_value(&ddqn, target.view(), target.view(), None),
            bootstrap_value(&dqn, target.view(), target.view(), None)
        );
    }

    #[test]
    fn terminal_transitions_do_not_bootstrap() {
        let m = model(true, 3);
        let mut trs = random_transitions(4, 3);
        for t in &mut trs {
            t.terminal = true;
        }
        let b = Batch::from_transitions(&trs, ObservationEncoding::FactoredOnehot);
        for kind in AlgoKind::ALL {
            let y = td_targets(&m, &b, &AlgoConfig::new(kind)).unwrap();
            assert_eq!(y, b.rewards, "{kind}");
        }
    }

    #[test]
    fn bcq_ratio_test_examples() {
        assert_eq!(bcq_eligible(&[0.7, 0.2, 0.1], 0.5), vec![true, false, false]);
        assert_eq!(bcq_select(&[0.0, 10.0, 20.0], &[0.7, 0.2, 0.1], 0.5), 0);
        assert_eq!(bcq_eligible(&[0.4, 0.4, 0.2], 0.9), vec![true, true, false]);
        assert_eq!(bcq_select(&[1.0, 2.0, 9.0], &[0.4, 0.4, 0.2], 0.9), 1);
        assert_eq!(bcq_select(&[3.0, 2.0, 9.0], &[0.4, 0.4, 0.2], 0.9), 0);
        // tau = 0 is plain argmax, tau = 1 keeps the modal set
        assert_eq!(bcq_select(&[1.0, 2.0, 9.0], &[0.7, 0.2, 0.1], 0.0), 2);
        assert_eq!(bcq_eligible(&[0.4, 0.4, 0.2], 1.0), vec![true, true, false]);
    }

    #[test]
    fn bcq_forced_eligible_set_uses_that_action() {
        let logits = arr1(&[10.0, -10.0, -10.0, -10.0, -10.0, -10.0, -10.0, -10.0, -10.0]);
        let online = arr1(&[0.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0]);
        let target = arr1(&[1.25, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0]);
        let cfg = AlgoConfig { kind: AlgoKind::Bcq, bcq_tau: 0.3, ..Default::default() };
        assert_eq!(bootstrap_value(&cfg, online.view(), target.view(), Some(logits.view())), 1.25);
    }

    #[test]
    fn cql_uniform_penalty_is_ln9() {
        let outputs = Outputs {
            q: Array2::from_elem((3, 9), 0.4),
            gen: None,
        };
        let b = batch(3, 4);
        let (parts, _, _) = surrogate(&outputs, &b, &[0.4; 3], &AlgoConfig::new(AlgoKind::Cql));
        assert!((parts.penalty - 9f64.ln()).abs() < 1e-12);
        assert!((9f64.ln() - 2.1972).abs() < 1e-4);
    }

    #[test]
    fn perfect_generator_has_no_cross_entropy() {
        let mut gen = Array2::from_elem((2, 9), -800.0);
        let b = batch(2, 5);
        for i in 0..2 {
            gen[[i, b.actions[i]]] = 800.0;
        }
        let outputs = Outputs {
            q: Array2::zeros((2, 9)),
            gen: Some(gen),
        };
        let (parts, _, _) = surrogate(&outputs, &b, &[0.0, 0.0], &AlgoConfig::new(AlgoKind::Bcq));
        assert!(parts.gen_ce.abs() < 1e-300);
    }

    #[test]
    fn greedy_tie_rule_and_unique_max() {
        assert_eq!(argmax(&[0.0; 9]), 0);
        let mut row = [0.0; 9];
        row[5] = 1.0;
        assert_eq!(argmax(&row), 5);
    }

    #[test]
    fn reduction_chain_on_random_batches() {
        for seed in 0..5 {
            let m = model(true, seed);
            let b = batch(8, 100 + seed);
            let cfg = AlgoConfig { gamma: 0.0, ..Default::default() };
            let nfq = nfq_loss(&m, &b, &cfg).unwrap();
            let dqn = dqn_loss(&m, &b, &cfg).unwrap();
            let ddqn = ddqn_loss(&m, &b, &cfg).unwrap();
            assert_eq!(nfq, dqn);
            assert_eq!(dqn, ddqn);
            let bcq = bcq_loss(&m, &b, &AlgoConfig { bcq_tau: 0.0, bcq_gen_weight: 0.0, ..cfg.clone() }).unwrap();
            assert_eq!(bcq, ddqn);
            let cql = loss(&m, &b, &AlgoConfig { kind: AlgoKind::Cql, ..cfg.clone() }).unwrap();
            assert!(cql.penalty >= 0.0);
            assert!((cql.total - ddqn - cql.penalty).abs() < 1e-12);
            let tiny = cql_loss(&m, &b, &AlgoConfig { cql_alpha: 1e-12, ..cfg.clone() }).unwrap();
            assert!((tiny - ddqn).abs() < 1e-10);
        }
    }

    #[test]
    fn with_discount_and_synced_target_ddqn_matches_dqn_policy_eval() {
        // theta' = theta: DDQN evaluates the online argmax with the same network
        let m = model(false, 7);
        let b = batch(16, 7);
        let cfg = AlgoConfig::default();
        assert_eq!(
            dqn_loss(&m, &b, &cfg).unwrap(),
            ddqn_loss(&m, &b, &cfg).unwrap()
        );
    }

    #[test]
    fn every_loss_passes_gradient_check() {
        for kind in AlgoKind::ALL {
            let m = model(true, 9);
            let f = FrozenLoss::new(&m, batch(16, 9), AlgoConfig::new(kind)).unwrap();
            let err = finite_diff_check(&m, &f, 1e-4);
            assert!(err < 1e-4, "{kind}: {err}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let m = model(true, 10);
        let mut f = FrozenLoss::new(&m, batch(16, 10), AlgoConfig::new(AlgoKind::Cql)).unwrap();
        f.grad_scale = 1.1;
        assert!(finite_diff_check(&m, &f, 1e-4) > 1e-2);
    }

    #[test]
    fn bcq_without_gen_head_is_rejected() {
        let m = model(false, 1);
        let b = batch(2, 1);
        assert!(bcq_loss(&m, &b, &AlgoConfig::default()).is_err());
    }

    #[test]
    fn bcq_policy_respects_support() {
        let m = model(true, 12);
        let enc = ObservationEncoding::FactoredOnehot;
        for tau in [0.0, 0.3, 0.9, 1.0] {
            for s in State::all() {
                let a = bcq_policy_action(&m, s, tau, enc).unwrap();
                let p = behavior_probs(&m, s, enc).unwrap();
                assert!(bcq_eligible(&p, tau)[a.index()]);
            }
        }
        // tau = 0 equals plain argmax
        let dqn = AlgoConfig::new(AlgoKind::Dqn);
        for s in State::all() {
            assert_eq!(
                bcq_policy_action(&m, s, 0.0, enc).unwrap(),
                greedy_action(&m, s, &dqn, enc).unwrap()
            );
        }
    }

    #[test]
    fn scaling_q_preserves_greedy_policy() {
        let mut m = model(false, 13);
        let cfg = AlgoConfig::new(AlgoKind::Dqn);
        let enc = ObservationEncoding::FactoredOnehot;
        let states: Vec<State> = State::all().collect();
        let before = greedy_actions(&m, &states, &cfg, enc).unwrap();
        m.scale_q_head(3.7);
        assert_eq!(greedy_actions(&m, &states, &cfg, enc).unwrap(), before);
    }

    #[test]
    fn logsumexp_is_stable() {
        let v = array![1000.0, 1000.0];
        assert!((logsumexp(v.view()) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn algo_names_parse() {
        assert_eq!("ddqn".parse::<AlgoKind>().unwrap(), AlgoKind::Ddqn);
        let err = "sac".parse::<AlgoKind>().unwrap_err().to_string();
        assert!(err.contains("nfq, dqn, ddqn, bcq, cql"));
    }
}
