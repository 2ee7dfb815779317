//! Fine-tuning artifacts: agent-token losses, action-level advantages,
//! PPO objective values and rejection-sampled SFT data. No weights are
//! updated here; everything is a pure function over logged data.

pub mod data;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::{
    annotate_action_boundaries, build_sft_dataset, rejection_sample, Rejection, RejectionPolicy, ScoredTrajectory,
    SftMeta, SftSample, Tokenizer, WhitespaceTokenizer,
};

/// A tokenised trajectory with per-token credit-assignment metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenStream {
    pub token_ids: Vec<u32>,
    pub logprobs: Vec<f64>,
    /// True for tokens the agent generated.
    pub loss_mask: Vec<bool>,
    /// True at the last token of every action.
    pub action_last_token: Vec<bool>,
    /// Action index of each token.
    pub token_to_action: Vec<usize>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of actions, i.e. flagged last tokens.
    pub fn num_actions(&self) -> usize {
        self.action_last_token.iter().filter(|&&f| f).count()
    }

    /// Checks array alignment and that the action index steps up by one
    /// exactly after each flagged token. Tokens after the final action must
    /// not be agent tokens.
    pub fn validate(&self) -> Result<()> {
        let n = self.token_ids.len();
        for (name, len) in [
            ("logprobs", self.logprobs.len()),
            ("loss_mask", self.loss_mask.len()),
            ("action_last_token", self.action_last_token.len()),
            ("token_to_action", self.token_to_action.len()),
        ] {
            if len != n {
                return Err(Error::Invariant(format!("{name} has {len} entries for {n} tokens")));
            }
        }
        let mut expected = 0;
        for t in 0..n {
            if self.token_to_action[t] != expected {
                return Err(Error::Invariant(format!(
                    "token {t} maps to action {} but {expected} was expected",
                    self.token_to_action[t]
                )));
            }
            if self.action_last_token[t] {
                expected += 1;
            }
        }
        let actions = expected;
        if let Some(t) = (0..n).find(|&t| self.token_to_action[t] == actions && self.loss_mask[t]) {
            return Err(Error::Invariant(format!("agent token {t} lies after the final action")));
        }
        Ok(())
    }
}

/// Mean negative log-likelihood over agent tokens.
pub fn masked_nll(stream: &TokenStream) -> Result<f64> {
    stream.validate()?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (lp, &m) in stream.logprobs.iter().zip(&stream.loss_mask) {
        if m {
            total += lp;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedLoss("no agent tokens in the stream".into()));
    }
    Ok(-total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaeParams {
    pub gamma: f64,
    pub lambda: f64,
}

impl GaeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidInput(format!("gamma {} outside [0,1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidInput(format!("lambda {} outside [0,1]", self.lambda)));
        }
        Ok(())
    }
}

/// Per-action values and rewards for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSeries {
    /// `V(s_j)` for the state each action was taken in.
    pub values: Vec<f64>,
    /// Reward received after action `j`.
    pub rewards: Vec<f64>,
    /// Value of the state after the last action.
    pub final_value: f64,
    /// A terminated episode bootstraps from 0, a truncated one from
    /// `final_value`.
    pub terminated: bool,
}

impl ValueSeries {
    pub fn bootstrap(&self) -> f64 {
        if self.terminated {
            0.0
        } else {
            self.final_value
        }
    }

    /// TD errors `r_{j+1} + gamma V(s_{j+1}) - V(s_j)` per action.
    pub fn td_errors(&self, gamma: f64) -> Result<Vec<f64>> {
        if self.values.len() != self.rewards.len() {
            return Err(Error::Invariant(format!(
                "{} values for {} rewards",
                self.values.len(),
                self.rewards.len()
            )));
        }
        let k = self.values.len();
        let deltas: Vec<f64> = (0..k)
            .map(|j| {
                let next = if j + 1 < k { self.values[j + 1] } else { self.bootstrap() };
                self.rewards[j] + gamma * next - self.values[j]
            })
            .collect();
        if let Some(j) = deltas.iter().position(|d| !d.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite TD error at action {j}")));
        }
        Ok(deltas)
    }
}

/// Per-token advantages where every token of an action shares the
/// action's generalised advantage estimate. Tokens after the final action
/// get 0.
pub fn action_gae(stream: &TokenStream, series: &ValueSeries, params: &GaeParams) -> Result<Vec<f64>> {
    params.validate()?;
    stream.validate()?;
    let k = stream.num_actions();
    if series.values.len() != k {
        return Err(Error::Invariant(format!(
            "stream has {k} actions but the value series has {}",
            series.values.len()
        )));
    }
    let deltas = series.td_errors(params.gamma)?;
    let decay = params.lambda * params.gamma;
    let mut per_action = vec![0.0; k + 1];
    for j in (0..k).rev() {
        per_action[j] = deltas[j] + decay * per_action[j + 1];
    }
    Ok(stream.token_to_action.iter().map(|&j| per_action[j]).collect())
}

/// Objective values for one PPO update, with no optimiser step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PpoLoss {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Share of agent tokens whose ratio left the clip interval.
    pub clip_fraction: f64,
}

/// Clipped surrogate loss over agent tokens and the mean squared TD error
/// over actions.
pub fn ppo_objective(
    old: &TokenStream,
    new_logprobs: &[f64],
    advantages: &[f64],
    series: &ValueSeries,
    gamma: f64,
    clip_eps: f64,
) -> Result<PpoLoss> {
    old.validate()?;
    if !(clip_eps > 0.0 && clip_eps.is_finite()) {
        return Err(Error::InvalidInput(format!("clip_eps must be positive, got {clip_eps}")));
    }
    let n = old.len();
    if new_logprobs.len() != n || advantages.len() != n {
        return Err(Error::Invariant(format!(
            "{n} tokens but {} new logprobs and {} advantages",
            new_logprobs.len(),
            advantages.len()
        )));
    }
    let mut surrogate = 0.0;
    let mut count = 0usize;
    let mut clipped = 0usize;
    for t in (0..n).filter(|&t| old.loss_mask[t]) {
        let ratio = (new_logprobs[t] - old.logprobs[t]).exp();
        if !ratio.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite probability ratio at token {t}")));
        }
        let a = advantages[t];
        let bounded = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        surrogate += (ratio * a).min(bounded * a);
        if (ratio - 1.0).abs() > clip_eps {
            clipped += 1;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::UndefinedLoss("no agent tokens in the stream".into()));
    }
    let deltas = series.td_errors(gamma)?;
    let value_loss = if deltas.is_empty() {
        0.0
    } else {
        deltas.iter().map(|d| d * d).sum::<f64>() / deltas.len() as f64
    };
    Ok(PpoLoss {
        policy_loss: -surrogate / count as f64,
        value_loss,
        clip_fraction: clipped as f64 / count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(mask: &[bool], flags: &[bool], logprobs: &[f64]) -> TokenStream {
        let mut sigma = Vec::new();
        let mut j = 0;
        for &f in flags {
            sigma.push(j);
            if f {
                j += 1;
            }
        }
        TokenStream {
            token_ids: (0..mask.len() as u32).collect(),
            logprobs: logprobs.to_vec(),
            loss_mask: mask.to_vec(),
            action_last_token: flags.to_vec(),
            token_to_action: sigma,
        }
    }

    #[test]
    fn nll_fixture() {
        let s = stream(&[false, true, true], &[false, false, true], &[-0.5, -1.0, -2.0]);
        assert_eq!(masked_nll(&s).unwrap(), 1.5);
        let none = stream(&[false, false], &[false, true], &[-1.0, -1.0]);
        assert!(matches!(masked_nll(&none), Err(Error::UndefinedLoss(_))));
    }

    #[test]
    fn sigma_must_step_at_flags() {
        let mut s = stream(&[true, true], &[true, true], &[0.0, 0.0]);
        s.token_to_action = vec![0, 0];
        assert!(matches!(s.validate(), Err(Error::Invariant(_))));
        let trailing_agent = stream(&[true, true], &[true, false], &[0.0, 0.0]);
        assert!(trailing_agent.validate().is_err());
    }

    #[test]
    fn single_token_action() {
        let s = stream(&[true], &[true], &[0.0]);
        let series = ValueSeries {
            values: vec![0.3],
            rewards: vec![1.0],
            final_value: 0.7,
            terminated: false,
        };
        let p = GaeParams { gamma: 0.9, lambda: 0.5 };
        let a = action_gae(&s, &series, &p).unwrap();
        assert!((a[0] - (1.0 + 0.9 * 0.7 - 0.3)).abs() < 1e-15);
        let ended = ValueSeries {
            terminated: true,
            ..series
        };
        assert!((action_gae(&s, &ended, &p).unwrap()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn ppo_identity_ratio() {
        let s = stream(&[true, true, false], &[false, true, false], &[-1.0, -2.0, -3.0]);
        let series = ValueSeries {
            values: vec![0.0],
            rewards: vec![1.0],
            final_value: 0.0,
            terminated: true,
        };
        let adv = [0.5, 0.5, 9.0];
        let out = ppo_objective(&s, &s.logprobs, &adv, &series, 0.9, 0.2).unwrap();
        assert_eq!(out.policy_loss, -0.5);
        assert_eq!(out.clip_fraction, 0.0);
        assert_eq!(out.value_loss, 1.0);
        let zero = ppo_objective(&s, &[-0.5, -1.0, -3.0], &[0.0; 3], &series, 0.9, 0.2).unwrap();
        assert_eq!(zero.policy_loss, 0.0);
        assert_eq!(zero.clip_fraction, 1.0);
        let bad = ppo_objective(&s, &[f64::INFINITY, -2.0, -3.0], &adv, &series, 0.9, 0.2).unwrap_err();
        assert!(bad.to_string().contains("token 0"), "{bad}");
    }
}
