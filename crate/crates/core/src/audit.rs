//! Privacy measurement and verification.
//!
//! [`estimate_privacy_stats`] runs the mechanism repeatedly on every token to
//! estimate `N_x` (self-substitution probability), `S_x` (distinct outputs of
//! `x`) and `S*_y` (distinct inputs that produced `y`). The `verify_*`
//! functions check the metric LDP inequalities directly on the model's
//! probability rows and report the worst violation found.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::mechanism::{stream_rng, ProbabilityModel};
use crate::par;
use crate::vocab::{SensitivityPartition, TokenId};

/// Slack on the log-ratio excess, absorbing floating-point error only.
pub const VERIFY_SLACK: f64 = 1e-9;

/// Largest vocabulary checked exhaustively by default.
pub const DEFAULT_EXHAUSTIVE_CAP: usize = 200;

/// Default Monte Carlo repetitions per token.
pub const DEFAULT_RUNS: usize = 1000;

const AUDIT_DOMAIN: u64 = 0x4155_4449_5453_5441;
const VERIFY_DOMAIN: u64 = 0x5645_5249_4659_4450;

/// Anything that can produce exact substitution rows indexed by vocabulary id.
pub trait RowSource: Sync {
    fn vocab_len(&self) -> usize;
    /// Probability of each output id for input `x`.
    fn dense_row(&self, x: TokenId) -> Vec<f64>;
}

impl RowSource for ProbabilityModel {
    fn vocab_len(&self) -> usize {
        ProbabilityModel::vocab_len(self)
    }

    fn dense_row(&self, x: TokenId) -> Vec<f64> {
        ProbabilityModel::dense_row(self, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenPrivacy {
    pub token: String,
    #[serde(rename = "N_x")]
    pub n_x: f64,
    #[serde(rename = "S_x")]
    pub s_x: u32,
    #[serde(rename = "S*_y")]
    pub s_star_y: u32,
    #[serde(rename = "H0")]
    pub h0: f64,
    /// `-ln N_x`; absent when `x` was never output for itself.
    #[serde(rename = "Hinf")]
    pub hinf: Option<f64>,
}

/// Five-number summary (linear interpolation between order statistics).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Quantiles {
            min: v[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAggregates {
    #[serde(rename = "N_x")]
    pub n_x: Quantiles,
    #[serde(rename = "S_x")]
    pub s_x: Quantiles,
    #[serde(rename = "S*_y")]
    pub s_star_y: Quantiles,
    #[serde(rename = "H0")]
    pub h0: Quantiles,
    #[serde(rename = "Hinf")]
    pub hinf: Option<Quantiles>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub runs: usize,
    pub tokens: Vec<TokenPrivacy>,
    pub aggregates: PrivacyAggregates,
}

/// Samples every row `runs` times and tallies `N_x`, `S_x` and `S*_y`.
///
/// Token `x` uses random stream `x` under `seed`, so the report is
/// independent of scheduling. `token_names` labels the records.
pub fn estimate_privacy_stats(
    model: &ProbabilityModel,
    runs: usize,
    seed: u64,
    token_names: impl Fn(TokenId) -> String,
) -> Result<PrivacyReport> {
    if runs == 0 {
        return Err(Error::config("runs must be at least 1"));
    }
    let n = model.vocab_len();
    let per_token = par::map_range(n, |x| {
        let x = x as TokenId;
        let mut rng = stream_rng(seed, AUDIT_DOMAIN, u64::from(x));
        let mut outputs: Vec<TokenId> = (0..runs).map(|_| model.sample(x, &mut rng)).collect();
        let selfs = outputs.iter().filter(|&&y| y == x).count();
        outputs.sort_unstable();
        outputs.dedup();
        (selfs, outputs)
    });

    let mut s_star = vec![0u32; n];
    for (_, distinct) in &per_token {
        for &y in distinct {
            s_star[y as usize] += 1;
        }
    }

    let tokens: Vec<TokenPrivacy> = per_token
        .iter()
        .enumerate()
        .map(|(x, (selfs, distinct))| {
            let n_x = *selfs as f64 / runs as f64;
            TokenPrivacy {
                token: token_names(x as TokenId),
                n_x,
                s_x: distinct.len() as u32,
                s_star_y: s_star[x],
                h0: (distinct.len() as f64).ln(),
                hinf: (n_x > 0.0).then(|| -n_x.ln()),
            }
        })
        .collect();

    let aggregates = PrivacyAggregates {
        n_x: Quantiles::of(tokens.iter().map(|t| t.n_x)).unwrap(),
        s_x: Quantiles::of(tokens.iter().map(|t| f64::from(t.s_x))).unwrap(),
        s_star_y: Quantiles::of(tokens.iter().map(|t| f64::from(t.s_star_y))).unwrap(),
        h0: Quantiles::of(tokens.iter().map(|t| t.h0)).unwrap(),
        hinf: Quantiles::of(tokens.iter().filter_map(|t| t.hinf)),
    };
    Ok(PrivacyReport {
        runs,
        tokens,
        aggregates,
    })
}

/// Rényi entropy of order `alpha` (natural log). `alpha = 0` gives the log of
/// the support size and `f64::INFINITY` gives the min-entropy
/// `-ln max_y p(y)`. `alpha = 1` (Shannon) is rejected.
pub fn renyi_entropy(row: &[f64], alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha < 0.0 || alpha == 1.0 {
        return Err(Error::InvalidAlpha(alpha));
    }
    let support = row.iter().filter(|&&p| p > 0.0);
    if alpha == 0.0 {
        return Ok((support.count() as f64).ln());
    }
    if alpha.is_infinite() {
        let max = support.copied().fold(0.0, f64::max);
        return Ok(-max.ln());
    }
    let sum: f64 = support.map(|p| p.powf(alpha)).sum();
    Ok(sum.ln() / (1.0 - alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Mldp,
    Umldp,
    Ldp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub x: TokenId,
    pub x_prime: TokenId,
    pub y: TokenId,
}

/// Outcome of the "exactly one input reaches each unprotected output" check.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvertibilityCheck {
    pub rows_checked: u64,
    pub violations: u64,
    /// `(x, y)`: input `x` puts mass on unprotected `y`, and it should not
    /// (or `x == y` has no self mass).
    pub first_violation: Option<(TokenId, TokenId)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpVerificationResult {
    pub bound_kind: BoundKind,
    pub epsilon: f64,
    pub epsilon0: Option<f64>,
    /// Max over checked `(x, x', y)` of
    /// `ln(P(y|x) / P(y|x')) - (epsilon * d(x, x') [+ epsilon0 if cross-partition])`.
    #[serde(
        serialize_with = "finite_or_string",
        deserialize_with = "number_or_string"
    )]
    pub max_log_ratio_excess: f64,
    pub witness: Option<Witness>,
    pub exhaustive: bool,
    pub triples_checked: u64,
    pub invertibility: Option<InvertibilityCheck>,
    pub passed: bool,
    pub notes: Vec<String>,
}

fn finite_or_string<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    }
}

fn number_or_string<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Number(v) => Ok(v),
        Repr::Text(s) if s == "inf" => Ok(f64::INFINITY),
        Repr::Text(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        Repr::Text(s) => Err(serde::de::Error::custom(format!(
            "expected a number, got `{s}`"
        ))),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    /// Vocabularies up to this size are checked over every triple.
    pub exhaustive_cap: usize,
    /// Above the cap: number of random `(x, x')` pairs, each checked over all `y`.
    pub sampled_pairs: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            exhaustive_cap: DEFAULT_EXHAUSTIVE_CAP,
            sampled_pairs: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Worst {
    excess: f64,
    witness: Option<Witness>,
    checked: u64,
}

impl Worst {
    fn none() -> Self {
        Worst {
            excess: f64::NEG_INFINITY,
            witness: None,
            checked: 0,
        }
    }

    fn merge(self, other: Worst) -> Worst {
        let checked = self.checked + other.checked;
        let best = if other.excess > self.excess {
            other
        } else {
            self
        };
        Worst { checked, ..best }
    }
}

/// Worst excess of `ln P(y|x) - ln P(y|x') - bound` over `ys`, for one pair.
fn scan_pair(
    x: TokenId,
    x_prime: TokenId,
    row_x: &[f64],
    row_xp: &[f64],
    ys: &[TokenId],
    bound: f64,
) -> Worst {
    let mut worst = Worst::none();
    for &y in ys {
        let (a, b) = (row_x[y as usize], row_xp[y as usize]);
        worst.checked += 1;
        if a <= 0.0 {
            // zero numerator: ratio 0 satisfies any bound
            continue;
        }
        let excess = if b <= 0.0 {
            f64::INFINITY
        } else {
            a.ln() - b.ln() - bound
        };
        if excess > worst.excess {
            worst.excess = excess;
            worst.witness = Some(Witness { x, x_prime, y });
        }
    }
    worst
}

/// Checks `P(y|x) <= exp(bound(x, x')) P(y|x')` for `y` in `ys` over all
/// ordered pairs `x != x'` (exhaustive) or over sampled pairs.
fn scan<R, B>(rows: &R, ys: &[TokenId], bound: B, opts: &VerifyOptions) -> (Worst, bool)
where
    R: RowSource + ?Sized,
    B: Fn(TokenId, TokenId) -> f64 + Sync,
{
    let n = rows.vocab_len();
    if n <= opts.exhaustive_cap {
        let dense: Vec<Vec<f64>> = par::map_range(n, |x| rows.dense_row(x as TokenId));
        let per_x = par::map_range(n, |x| {
            let mut worst = Worst::none();
            for xp in 0..n {
                if xp == x {
                    continue;
                }
                let (x, xp) = (x as TokenId, xp as TokenId);
                worst = worst.merge(scan_pair(
                    x,
                    xp,
                    &dense[x as usize],
                    &dense[xp as usize],
                    ys,
                    bound(x, xp),
                ));
            }
            worst
        });
        (per_x.into_iter().fold(Worst::none(), Worst::merge), true)
    } else {
        let mut rng = stream_rng(opts.seed, VERIFY_DOMAIN, 0);
        let pairs: Vec<(TokenId, TokenId)> = (0..opts.sampled_pairs)
            .map(|_| {
                let x = rng.gen_range(0..n) as TokenId;
                let mut xp = rng.gen_range(0..n - 1) as TokenId;
                if xp >= x {
                    xp += 1;
                }
                (x, xp)
            })
            .collect();
        let per_pair = par::map_slice(&pairs, |&(x, xp)| {
            scan_pair(
                x,
                xp,
                &rows.dense_row(x),
                &rows.dense_row(xp),
                ys,
                bound(x, xp),
            )
        });
        (
            per_pair.into_iter().fold(Worst::none(), Worst::merge),
            false,
        )
    }
}

fn finish(
    bound_kind: BoundKind,
    epsilon: f64,
    epsilon0: Option<f64>,
    (worst, exhaustive): (Worst, bool),
    invertibility: Option<InvertibilityCheck>,
    mut notes: Vec<String>,
) -> DpVerificationResult {
    // nothing comparable (e.g. a one-token vocabulary)
    let excess = if worst.excess == f64::NEG_INFINITY {
        0.0
    } else {
        worst.excess
    };
    let inv_ok = invertibility.as_ref().is_none_or(|c| c.violations == 0);
    if !exhaustive {
        notes.push(format!(
            "sampled verification: {} triples checked",
            worst.checked
        ));
    }
    DpVerificationResult {
        bound_kind,
        epsilon,
        epsilon0,
        max_log_ratio_excess: excess,
        witness: worst.witness,
        exhaustive,
        triples_checked: worst.checked,
        passed: excess <= VERIFY_SLACK && inv_ok,
        invertibility,
        notes,
    }
}

/// Metric LDP: `P(y|x) <= exp(epsilon * d(x, x')) P(y|x')` for all `x, x', y`.
pub fn verify_mldp<R: RowSource + ?Sized>(
    rows: &R,
    embeddings: &EmbeddingMatrix,
    epsilon: f64,
    opts: &VerifyOptions,
) -> DpVerificationResult {
    let ys: Vec<TokenId> = (0..rows.vocab_len() as TokenId).collect();
    let worst = scan(
        rows,
        &ys,
        |x, xp| epsilon * embeddings.distance(x, xp),
        opts,
    );
    finish(BoundKind::Mldp, epsilon, None, worst, None, Vec::new())
}

/// Pure LDP: `P(y|x) <= exp(epsilon) P(y|x')` for all `x, x', y`.
pub fn verify_ldp<R: RowSource + ?Sized>(
    rows: &R,
    epsilon: f64,
    opts: &VerifyOptions,
) -> DpVerificationResult {
    let ys: Vec<TokenId> = (0..rows.vocab_len() as TokenId).collect();
    let worst = scan(rows, &ys, |_, _| epsilon, opts);
    finish(BoundKind::Ldp, epsilon, None, worst, None, Vec::new())
}

/// Utility-optimized metric LDP with `V_P = V_S` and `V_U = V_N`.
///
/// Condition (i): for all `x, x'` and protected `y`,
/// `ln P(y|x) - ln P(y|x') <= epsilon * d(x, x') + epsilon0`, where
/// `epsilon0` is charged only when `x` and `x'` lie on different sides of the
/// partition. `epsilon0 = None` (p = 0) means cross-partition pairs have no
/// finite bound; they are skipped and the result says so.
///
/// Condition (ii): every unprotected output is reachable from exactly one
/// input, itself. Checked row-wise: row `x` may put mass on an unprotected
/// `y` only when `y == x`, and a non-sensitive `x` must keep positive self
/// mass unless `require_self_mass` is false (p = 1, where unprotected outputs
/// are unreachable altogether).
pub fn verify_umldp<R: RowSource + ?Sized>(
    rows: &R,
    partition: &SensitivityPartition,
    embeddings: &EmbeddingMatrix,
    epsilon: f64,
    epsilon0: Option<f64>,
    require_self_mass: bool,
    opts: &VerifyOptions,
) -> DpVerificationResult {
    let n = rows.vocab_len();
    let mut notes = Vec::new();
    let cross = |x: TokenId, xp: TokenId| partition.is_sensitive(x) != partition.is_sensitive(xp);
    let worst = scan(
        rows,
        partition.sensitive_ids(),
        |x, xp| {
            let metric = epsilon * embeddings.distance(x, xp);
            match (cross(x, xp), epsilon0) {
                (false, _) => metric,
                (true, Some(e0)) => metric + e0,
                (true, None) => f64::INFINITY,
            }
        },
        opts,
    );
    if epsilon0.is_none() {
        notes.push(
            "p = 0: no UMLDP bound for cross-partition pairs; only same-side pairs verified"
                .to_owned(),
        );
    }
    if !require_self_mass {
        notes.push("p = 1: unprotected outputs are unreachable".to_owned());
    }

    let inputs: Vec<TokenId> = if n <= opts.exhaustive_cap {
        (0..n as TokenId).collect()
    } else {
        let mut rng = stream_rng(opts.seed, VERIFY_DOMAIN, 1);
        (0..opts.sampled_pairs.min(n))
            .map(|_| rng.gen_range(0..n) as TokenId)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect()
    };
    let mut inputs = inputs;
    inputs.sort_unstable();
    let per_row = par::map_slice(&inputs, |&x| {
        let row = rows.dense_row(x);
        let mut bad: Option<(TokenId, TokenId)> = None;
        let mut count = 0u64;
        for &y in partition.nonsensitive_ids() {
            let mass = row[y as usize];
            let ok = if y == x {
                mass > 0.0 || !require_self_mass
            } else {
                mass == 0.0
            };
            if !ok {
                count += 1;
                bad.get_or_insert((x, y));
            }
        }
        (count, bad)
    });
    let mut check = InvertibilityCheck {
        rows_checked: inputs.len() as u64,
        ..Default::default()
    };
    for (count, bad) in per_row {
        check.violations += count;
        if check.first_violation.is_none() {
            check.first_violation = bad;
        }
    }
    finish(
        BoundKind::Umldp,
        epsilon,
        epsilon0,
        worst,
        Some(check),
        notes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{BuildOptions, MechanismConfig};
    use crate::vocab::{Token, Vocabulary};
    use std::sync::Arc;

    fn model_1d(points: &[f64], config: MechanismConfig) -> ProbabilityModel {
        let vocab = Vocabulary::from_tokens(
            (0..points.len()).map(|i| Token::new(format!("t{i}")).unwrap()),
        );
        let emb = Arc::new(EmbeddingMatrix::from_rows(1, points.to_vec()).unwrap());
        ProbabilityModel::build(&vocab, emb, None, &config, BuildOptions::default()).unwrap()
    }

    #[test]
    fn renyi_uniform_is_log_n_for_every_order() {
        let row = vec![0.125; 8];
        for alpha in [0.0, 0.5, 2.0, 3.0, f64::INFINITY] {
            assert!((renyi_entropy(&row, alpha).unwrap() - 8f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn renyi_point_mass_is_zero() {
        let row = [0.0, 1.0, 0.0];
        for alpha in [0.0, 0.5, 2.0, f64::INFINITY] {
            assert_eq!(renyi_entropy(&row, alpha).unwrap(), 0.0);
        }
    }

    #[test]
    fn renyi_order_two() {
        // 0.25 + 0.0625 + 0.0625 = 0.375
        let h = renyi_entropy(&[0.5, 0.25, 0.25], 2.0).unwrap();
        assert!((h - (-(0.375f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn renyi_rejects_shannon_and_negative() {
        assert!(matches!(
            renyi_entropy(&[1.0], 1.0),
            Err(Error::InvalidAlpha(_))
        ));
        assert!(renyi_entropy(&[1.0], -0.5).is_err());
        assert!(renyi_entropy(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let q = Quantiles::of([4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        let q = Quantiles::of([1.0, 2.0]).unwrap();
        assert_eq!(q.median, 1.5);
        assert!(Quantiles::of(std::iter::empty()).is_none());
    }

    #[test]
    fn deterministic_row_statistics() {
        let m = model_1d(&[0.0, 1000.0], MechanismConfig::santext(1.0, 0).unwrap());
        let report = estimate_privacy_stats(&m, 500, 1, |x| format!("t{x}")).unwrap();
        for t in &report.tokens {
            assert_eq!(t.n_x, 1.0);
            assert_eq!(t.s_x, 1);
            assert_eq!(t.s_star_y, 1);
            assert_eq!(t.hinf, Some(0.0));
            assert_eq!(t.h0, 0.0);
        }
    }

    #[test]
    fn runs_must_be_positive() {
        let m = model_1d(&[0.0, 1.0], MechanismConfig::uniform(0));
        assert!(estimate_privacy_stats(&m, 0, 1, |x| x.to_string()).is_err());
    }

    #[test]
    fn incidence_totals_agree() {
        let pts: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let m = model_1d(&pts, MechanismConfig::santext(3.0, 0).unwrap());
        let r = estimate_privacy_stats(&m, 50, 9, |x| x.to_string()).unwrap();
        let sx: u32 = r.tokens.iter().map(|t| t.s_x).sum();
        let sy: u32 = r.tokens.iter().map(|t| t.s_star_y).sum();
        assert_eq!(sx, sy);
        assert_eq!(r.tokens.len(), 30);
    }

    #[test]
    fn mldp_passes_at_epsilon_zero_with_zero_excess() {
        let m = model_1d(&[0.0, 2.0, 5.0], MechanismConfig::santext(0.0, 0).unwrap());
        let emb = m.embeddings().clone();
        let r = verify_mldp(&m, &emb, 0.0, &VerifyOptions::default());
        assert!(r.passed);
        assert_eq!(r.max_log_ratio_excess, 0.0);
        assert!(r.exhaustive);
        assert_eq!(r.triples_checked, 3 * 2 * 3);
    }

    #[test]
    fn ldp_fails_for_far_apart_tokens() {
        let m = model_1d(&[0.0, 10.0], MechanismConfig::santext(1.0, 0).unwrap());
        let r = verify_ldp(&m, 1.0, &VerifyOptions::default());
        assert!(!r.passed);
        assert!(r.max_log_ratio_excess > 1.0);
        assert!(r.witness.is_some());
        // bound chaining: eps * d_max = 10
        assert!(verify_ldp(&m, 10.0, &VerifyOptions::default()).passed);
    }

    #[test]
    fn sampled_mode_is_labelled() {
        let pts: Vec<f64> = (0..12).map(|i| i as f64 * 0.2).collect();
        let m = model_1d(&pts, MechanismConfig::santext(1.0, 0).unwrap());
        let emb = m.embeddings().clone();
        let opts = VerifyOptions {
            exhaustive_cap: 5,
            sampled_pairs: 40,
            seed: 3,
        };
        let r = verify_mldp(&m, &emb, 1.0, &opts);
        assert!(r.passed);
        assert!(!r.exhaustive);
        assert_eq!(r.triples_checked, 40 * 12);
        assert!(r.notes.iter().any(|n| n.contains("sampled")));
        assert_eq!(r, verify_mldp(&m, &emb, 1.0, &opts));
    }

    #[test]
    fn infinite_excess_serializes_as_string() {
        let m = model_1d(&[0.0, 1.0], MechanismConfig::uniform(0));
        let mut r = verify_ldp(&m, 0.0, &VerifyOptions::default());
        r.max_log_ratio_excess = f64::INFINITY;
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["max_log_ratio_excess"], "inf");
        let back: DpVerificationResult = serde_json::from_value(json).unwrap();
        assert_eq!(back.max_log_ratio_excess, f64::INFINITY);
    }
}
