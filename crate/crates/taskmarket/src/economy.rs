//! Credit ledger, secondary-verification probability and model evaluation.
//!
//! Credit is zero-sum: every settlement moves exactly one credit from the
//! seller with the worse result to the one with the better result, so the
//! ledger total is an exact integer invariant.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::DeviceId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EconomyError {
    #[error("perplexity must be positive, got {0}")]
    NonPositivePerplexity(String),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("corpus has no tokens")]
    EmptyCorpus,
}

/// Per-device signed credit, including the server accounts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditLedger {
    credits: Vec<i64>,
}

impl CreditLedger {
    /// Every account starts at zero.
    pub fn new(accounts: usize) -> CreditLedger {
        CreditLedger {
            credits: vec![0; accounts],
        }
    }

    pub fn get(&self, id: DeviceId) -> i64 {
        self.credits[id.index()]
    }

    pub fn len(&self) -> usize {
        self.credits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.credits.is_empty()
    }

    /// Exact total over all accounts; zero at all times under settlement.
    pub fn sum(&self) -> i64 {
        self.credits.iter().sum()
    }

    pub fn transfer_one(&mut self, from: DeviceId, to: DeviceId) {
        self.credits[from.index()] -= 1;
        self.credits[to.index()] += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (DeviceId, i64)> + '_ {
        self.credits
            .iter()
            .enumerate()
            .map(|(i, &c)| (DeviceId(i as u32), c))
    }
}

/// One seller's result for a query: a perplexity score (lower is better)
/// and whether the submitted model passed validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultQuality {
    pub perplexity: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettleOutcome {
    Transfer { winner: DeviceId, loser: DeviceId },
    /// Equal quality: no basis to pick a winner, no transfer.
    Tie,
    /// Neither side produced a usable result; the query is flagged.
    BothInvalid,
}

/// Move one credit from the seller with the worse result to the one with
/// the better result. An invalid result always loses; two invalid results
/// flag the query and move nothing.
pub fn settle_query(
    ledger: &mut CreditLedger,
    seller1: DeviceId,
    q1: &ResultQuality,
    seller2: DeviceId,
    q2: &ResultQuality,
) -> SettleOutcome {
    let outcome = match (q1.valid, q2.valid) {
        (false, false) => return SettleOutcome::BothInvalid,
        (true, false) => SettleOutcome::Transfer {
            winner: seller1,
            loser: seller2,
        },
        (false, true) => SettleOutcome::Transfer {
            winner: seller2,
            loser: seller1,
        },
        (true, true) => {
            if q1.perplexity == q2.perplexity {
                return SettleOutcome::Tie;
            }
            // Both infinite compares equal above; a single infinity loses.
            if q1.perplexity < q2.perplexity {
                SettleOutcome::Transfer {
                    winner: seller1,
                    loser: seller2,
                }
            } else {
                SettleOutcome::Transfer {
                    winner: seller2,
                    loser: seller1,
                }
            }
        }
    };
    if let SettleOutcome::Transfer { winner, loser } = outcome {
        ledger.transfer_one(loser, winner);
    }
    outcome
}

/// Probability that a completed query is sent for secondary verification,
/// from the sellers' combined credit and how well their perplexities agree.
/// High credit and matching quality push it toward zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationProbability {
    pub value: f64,
    /// The raw expression left [0, 1] and was clamped.
    pub clamped: bool,
}

pub fn verification_probability(
    c1: i64,
    c2: i64,
    p1: f64,
    p2: f64,
) -> Result<VerificationProbability, EconomyError> {
    if p1.is_nan() || p2.is_nan() || p1 <= 0.0 || p2 <= 0.0 {
        return Err(EconomyError::NonPositivePerplexity(format!("({p1}, {p2})")));
    }
    let credit_term = 1.0 / (1.0 + (-((c1 + c2) as f64)).exp());
    let ratio = if p1.is_infinite() && p2.is_infinite() {
        1.0
    } else {
        p1.min(p2) / p1.max(p2)
    };
    let raw = 1.0 - (credit_term + 2.0 * ratio) / 3.0;
    let value = raw.clamp(0.0, 1.0);
    Ok(VerificationProbability {
        value,
        clamped: value != raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerificationOutcome {
    Verify,
    Accept,
}

/// Bernoulli draw on the verification probability. The re-check itself is
/// outside the simulator; only the server-load count matters here.
pub fn verification_draw(prob: f64, rng: &mut impl Rng) -> VerificationOutcome {
    debug_assert!((0.0..=1.0).contains(&prob));
    if prob > 0.0 && rng.random::<f64>() < prob {
        VerificationOutcome::Verify
    } else {
        VerificationOutcome::Accept
    }
}

/// Document-topic (`theta`, D x K) and topic-word (`phi`, K x V)
/// row-stochastic matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub theta: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
}

impl TopicModel {
    pub fn topics(&self) -> usize {
        self.phi.len()
    }

    pub fn vocab(&self) -> usize {
        self.phi.first().map_or(0, |row| row.len())
    }
}

/// True iff every row of `theta` and `phi` sums to 1 within `epsilon`
/// (strictly).
pub fn validate_model(model: &TopicModel, epsilon: f64) -> Result<bool, EconomyError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(EconomyError::BadEpsilon(epsilon.to_string()));
    }
    let k = model.topics();
    let v = model.vocab();
    if model.phi.iter().any(|row| row.len() != v) {
        return Err(EconomyError::DimensionMismatch(
            "phi rows have unequal vocabulary sizes".into(),
        ));
    }
    if model.theta.iter().any(|row| row.len() != k) {
        return Err(EconomyError::DimensionMismatch(format!(
            "theta rows must have {k} topic entries"
        )));
    }
    let row_ok = |row: &Vec<f64>| (1.0 - row.iter().sum::<f64>()).abs() < epsilon;
    Ok(model.phi.iter().all(row_ok) && model.theta.iter().all(row_ok))
}

/// Perplexity of a corpus under a topic model: the transformed inverse
/// geometric mean of per-token likelihood, computed in log space. A token
/// with zero probability yields the infinite-perplexity signal rather than
/// an error.
pub fn perplexity(docs: &[Vec<u32>], model: &TopicModel) -> Result<f64, EconomyError> {
    if docs.len() != model.theta.len() {
        return Err(EconomyError::DimensionMismatch(format!(
            "{} documents vs {} theta rows",
            docs.len(),
            model.theta.len()
        )));
    }
    let vocab = model.vocab();
    let total_tokens: usize = docs.iter().map(|d| d.len()).sum();
    if total_tokens == 0 {
        return Err(EconomyError::EmptyCorpus);
    }

    let mut log_likelihood = 0.0f64;
    for (doc, theta_row) in docs.iter().zip(&model.theta) {
        for &token in doc {
            let t = token as usize;
            if t >= vocab {
                return Err(EconomyError::DimensionMismatch(format!(
                    "token id {t} outside vocabulary of size {vocab}"
                )));
            }
            let p: f64 = model
                .phi
                .iter()
                .zip(theta_row)
                .map(|(phi_row, &th)| phi_row[t] * th)
                .sum();
            if p <= 0.0 {
                return Ok(f64::INFINITY);
            }
            log_likelihood += p.ln();
        }
    }
    Ok((-log_likelihood / total_tokens as f64).exp())
}

/// Parse the corpus file format: one document per line, whitespace-separated
/// integer token ids. Blank lines are empty documents.
pub fn parse_corpus(text: &str) -> Result<Vec<Vec<u32>>, EconomyError> {
    text.lines()
        .map(|line| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<u32>().map_err(|_| {
                        EconomyError::DimensionMismatch(format!("bad token id {tok:?}"))
                    })
                })
                .collect()
        })
        .collect()
}

/// How simulated result quality is produced: a common per-query base scaled
/// by non-negative per-seller noise, plus an additive penalty for bad-actor
/// devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityModel {
    pub base: f64,
    pub noise: f64,
    pub bad_actor_penalty: f64,
}

impl QualityModel {
    /// `u` is a uniform draw in [0, 1).
    pub fn draw(&self, bad_actor: bool, u: f64) -> ResultQuality {
        let mut perplexity = self.base * (1.0 + u * self.noise);
        if bad_actor {
            perplexity += self.bad_actor_penalty;
        }
        ResultQuality {
            perplexity,
            valid: true,
        }
    }
}
