//! Scoring predicted belief states against gold and aggregating reports.
//!
//! Each example is scored over `(slot id, value)` pairs. Macro F1 is the mean
//! of per-example F1; joint goal accuracy (JGA) is the fraction of examples
//! predicted without a single wrong or missing pair.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::CompletionBackend;
use crate::parse::{self, ExtractError, NormalizeOptions, ParseWarning};
use crate::prompt::{TokenBudget, TokenCounter};
use crate::state::{BeliefState, Category, GoldState, PromptRecord, SlotLibrary, StateError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no scores to aggregate")]
    EmptyScoreSet,
    #[error(transparent)]
    State(#[from] StateError),
    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: ExtractError,
    },
    #[error("cannot start {0} worker threads: {1}")]
    Pool(usize, String),
}

/// How a predicted value is compared with a gold alternative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMatcher {
    /// Equal after trimming surrounding whitespace.
    #[default]
    Exact,
    CaseInsensitive,
    /// Normalized Levenshtein similarity of the trimmed, case-folded values
    /// at or above the threshold.
    Fuzzy(f64),
}

impl ValueMatcher {
    pub fn accepts(&self, predicted: &str, gold: &str) -> bool {
        let (p, g) = (predicted.trim(), gold.trim());
        match *self {
            ValueMatcher::Exact => p == g,
            ValueMatcher::CaseInsensitive => p.to_lowercase() == g.to_lowercase(),
            ValueMatcher::Fuzzy(t) => parse::normalized_similarity(p, g) >= t,
        }
    }
}

impl FromStr for ValueMatcher {
    type Err = String;

    /// `exact`, `case-insensitive` or `fuzzy[:threshold]` (default 0.8).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "case-insensitive" | "ci" => Ok(Self::CaseInsensitive),
            "fuzzy" => Ok(Self::Fuzzy(parse::DEFAULT_FUZZY_THRESHOLD)),
            _ => match s.strip_prefix("fuzzy:") {
                Some(t) => t
                    .parse::<f64>()
                    .ok()
                    .filter(|t| (0.0..=1.0).contains(t))
                    .map(Self::Fuzzy)
                    .ok_or_else(|| format!("invalid fuzzy threshold {t:?}")),
                None => Err(format!("unknown matcher {s:?}")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// F1 over slot ids alone, ignoring values.
    pub key_f1: f64,
    pub joint_correct: bool,
    #[serde(default)]
    pub latency_s: Option<f64>,
}

/// `2tp / (2tp + fp + fn)`, with 0/0 read as 1.
fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// `num / denom`; 0/0 is 1 when `other_empty`, else 0.
fn ratio(num: usize, denom: usize, other_empty: bool) -> f64 {
    if denom == 0 {
        if other_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / denom as f64
    }
}

/// Scores one prediction. A predicted pair is a true positive when the gold
/// state has its id and the matcher accepts the value against any gold
/// alternative.
pub fn score_example(pred: &BeliefState, gold: &GoldState, library: &SlotLibrary, matcher: ValueMatcher) -> Result<ExampleScore, EvalError> {
    if pred.library_key().is_some_and(|k| k != library.key())
        || pred.iter().any(|(id, _)| !library.contains(id))
        || gold.iter().any(|(id, _)| !library.contains(id))
    {
        return Err(StateError::MixedLibrary.into());
    }
    let mut tp = 0;
    let mut key_tp = 0;
    for (id, value) in pred.iter() {
        if let Some(alts) = gold.get(id) {
            key_tp += 1;
            if alts.iter().any(|g| matcher.accepts(value, g)) {
                tp += 1;
            }
        }
    }
    let fp = pred.len() - tp;
    let fn_ = gold.len() - tp;
    Ok(ExampleScore {
        tp,
        fp,
        fn_,
        precision: ratio(tp, pred.len(), gold.is_empty()),
        recall: ratio(tp, gold.len(), pred.is_empty()),
        f1: f1(tp, fp, fn_),
        key_f1: f1(key_tp, pred.len() - key_tp, gold.len() - key_tp),
        joint_correct: fp == 0 && fn_ == 0,
        latency_s: None,
    })
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> Result<f64, EvalError> {
    let n = xs.len();
    if n == 0 {
        return Err(EvalError::EmptyScoreSet);
    }
    Ok(xs.sum::<f64>() / n as f64)
}

pub fn macro_f1(scores: &[ExampleScore]) -> Result<f64, EvalError> {
    mean(scores.iter().map(|s| s.f1))
}

pub fn jga(scores: &[ExampleScore]) -> Result<f64, EvalError> {
    mean(scores.iter().map(|s| if s.joint_correct { 1.0 } else { 0.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Mean and nearest-rank percentiles over the examples that carry a
/// latency.
pub fn latency_stats(scores: &[ExampleScore]) -> Result<LatencyStats, EvalError> {
    let mut xs: Vec<f64> = scores.iter().filter_map(|s| s.latency_s).collect();
    if xs.is_empty() {
        return Err(EvalError::EmptyScoreSet);
    }
    xs.sort_by(f64::total_cmp);
    let rank = |p: f64| xs[((p * xs.len() as f64).ceil() as usize).clamp(1, xs.len()) - 1];
    Ok(LatencyStats {
        mean: xs.iter().sum::<f64>() / xs.len() as f64,
        p50: rank(0.50),
        p95: rank(0.95),
    })
}

/// Unit over which the overall macro F1 and JGA are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AverageBy {
    #[default]
    Example,
    /// Unweighted mean of the per-category values.
    Category,
}

impl FromStr for AverageBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "example" => Ok(Self::Example),
            "category" => Ok(Self::Category),
            other => Err(format!("unknown averaging unit {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub jga: f64,
    pub n: usize,
    pub mean_latency_s: Option<f64>,
    pub p50_latency_s: Option<f64>,
    pub p95_latency_s: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub key_macro_f1: f64,
}

impl Metrics {
    pub fn from_scores(scores: &[ExampleScore]) -> Result<Self, EvalError> {
        let latency = latency_stats(scores).ok();
        Ok(Self {
            macro_f1: macro_f1(scores)?,
            jga: jga(scores)?,
            n: scores.len(),
            mean_latency_s: latency.map(|l| l.mean),
            p50_latency_s: latency.map(|l| l.p50),
            p95_latency_s: latency.map(|l| l.p95),
            precision: mean(scores.iter().map(|s| s.precision))?,
            recall: mean(scores.iter().map(|s| s.recall))?,
            key_macro_f1: mean(scores.iter().map(|s| s.key_f1))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_category: BTreeMap<Category, Metrics>,
    pub overall: Metrics,
    /// Parser warning counts by reason.
    pub warnings: BTreeMap<String, usize>,
    /// Records whose extraction failed; they are scored as empty
    /// predictions.
    pub errors: usize,
    #[serde(default)]
    pub average_by: AverageBy,
}

impl EvalReport {
    /// Aggregates `(category, score)` pairs.
    pub fn build(
        scored: &[(Category, ExampleScore)],
        warnings: BTreeMap<String, usize>,
        errors: usize,
        average_by: AverageBy,
    ) -> Result<Self, EvalError> {
        let mut groups: BTreeMap<Category, Vec<ExampleScore>> = BTreeMap::new();
        for (cat, s) in scored {
            groups.entry(*cat).or_default().push(s.clone());
        }
        let per_category = groups
            .iter()
            .map(|(c, s)| Ok((*c, Metrics::from_scores(s)?)))
            .collect::<Result<BTreeMap<_, _>, EvalError>>()?;
        let all: Vec<ExampleScore> = scored.iter().map(|(_, s)| s.clone()).collect();
        let mut overall = Metrics::from_scores(&all)?;
        if average_by == AverageBy::Category {
            overall.macro_f1 = mean(per_category.values().map(|m| m.macro_f1))?;
            overall.jga = mean(per_category.values().map(|m| m.jga))?;
            overall.precision = mean(per_category.values().map(|m| m.precision))?;
            overall.recall = mean(per_category.values().map(|m| m.recall))?;
            overall.key_macro_f1 = mean(per_category.values().map(|m| m.key_macro_f1))?;
        }
        Ok(Self {
            per_category,
            overall,
            warnings,
            errors,
            average_by,
        })
    }

    /// Plain-text table: one row per category, then `Overall`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let latency = |m: &Metrics| m.mean_latency_s.map_or("-".to_string(), |l| format!("{l:.3}"));
        let _ = writeln!(out, "{:<12} {:>7} {:>9} {:>7} {:>12}", "Category", "N", "Macro F1", "JGA", "Latency (s)");
        for (cat, m) in &self.per_category {
            let _ = writeln!(out, "{:<12} {:>7} {:>9.3} {:>7.3} {:>12}", cat.as_str(), m.n, m.macro_f1, m.jga, latency(m));
        }
        let o = &self.overall;
        let _ = writeln!(out, "{:<12} {:>7} {:>9.3} {:>7.3} {:>12}", "Overall", o.n, o.macro_f1, o.jga, latency(o));
        if self.errors > 0 {
            let _ = writeln!(out, "errors: {}", self.errors);
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

pub struct EvalOptions<'a> {
    pub budget: TokenBudget,
    pub counter: &'a dyn TokenCounter,
    pub normalize: NormalizeOptions,
    pub matcher: ValueMatcher,
    /// Maximum number of backend calls in flight.
    pub parallelism: usize,
    pub average_by: AverageBy,
    /// Abort on the first failed record instead of counting it.
    pub fail_fast: bool,
}

impl<'a> EvalOptions<'a> {
    /// Defaults: standard budget, exact matching, one call in flight,
    /// per-example averaging.
    pub fn new(counter: &'a dyn TokenCounter) -> Self {
        Self {
            budget: TokenBudget::default(),
            counter,
            normalize: NormalizeOptions::default(),
            matcher: ValueMatcher::default(),
            parallelism: 1,
            average_by: AverageBy::default(),
            fail_fast: false,
        }
    }
}

/// Outcome for one record, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordResult {
    pub predicted: BeliefState,
    pub score: ExampleScore,
    pub warnings: Vec<ParseWarning>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub report: EvalReport,
    pub results: Vec<RecordResult>,
}

/// Extracts and scores every record with at most `parallelism` concurrent
/// backend calls. Scores do not depend on the parallelism.
pub fn run_eval(records: &[PromptRecord], backend: &dyn CompletionBackend, options: &EvalOptions<'_>) -> Result<EvalRun, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyScoreSet);
    }
    let threads = options.parallelism.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EvalError::Pool(threads, e.to_string()))?;

    let one = |(index, rec): (usize, &PromptRecord)| -> Result<RecordResult, EvalError> {
        let extracted = parse::extract(&rec.library, &rec.conversation, backend, &options.budget, options.counter, &options.normalize);
        let (predicted, warnings, latency, error) = match extracted {
            Ok(x) => (x.outcome.state, x.outcome.warnings, Some(x.latency_s), None),
            Err(source) if options.fail_fast => return Err(EvalError::Record { index, source }),
            Err(e) => {
                log::warn!("record {index}: {e}");
                (BeliefState::for_library(&rec.library), Vec::new(), None, Some(e.to_string()))
            }
        };
        let mut score = score_example(&predicted, &rec.gold, &rec.library, options.matcher)?;
        score.latency_s = latency;
        Ok(RecordResult {
            predicted,
            score,
            warnings,
            error,
        })
    };
    let results: Vec<RecordResult> = pool.install(|| records.par_iter().enumerate().map(one).collect::<Result<_, _>>())?;

    let mut warnings: BTreeMap<String, usize> = BTreeMap::new();
    for w in results.iter().flat_map(|r| &r.warnings) {
        *warnings.entry(w.reason.as_str().to_string()).or_default() += 1;
    }
    let errors = results.iter().filter(|r| r.error.is_some()).count();
    let scored: Vec<(Category, ExampleScore)> = records
        .iter()
        .zip(&results)
        .map(|(rec, r)| (rec.category, r.score.clone()))
        .collect();
    let report = EvalReport::build(&scored, warnings, errors, options.average_by)?;
    Ok(EvalRun { report, results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{SlotId, SlotSpec};

    fn lib(n: u32) -> SlotLibrary {
        SlotLibrary::new((0..n).map(|i| SlotSpec::free_text(SlotId::new(i), "", "d")).collect()).unwrap()
    }

    fn gold(pairs: &[(u32, &str)]) -> GoldState {
        pairs.iter().map(|(i, v)| (SlotId::new(*i), v.to_string())).collect()
    }

    fn pred(pairs: &[(u32, &str)]) -> BeliefState {
        BeliefState::from_pairs(pairs.iter().map(|(i, v)| (SlotId::new(*i), *v)))
    }

    #[test]
    fn identity_and_empty() {
        let s = score_example(&pred(&[(0, "a")]), &gold(&[(0, "a")]), &lib(2), ValueMatcher::Exact).unwrap();
        assert_eq!((s.f1, s.joint_correct), (1.0, true));
        let e = score_example(&pred(&[]), &gold(&[]), &lib(2), ValueMatcher::Exact).unwrap();
        assert_eq!((e.f1, e.precision, e.recall, e.joint_correct), (1.0, 1.0, 1.0, true));
    }

    #[test]
    fn half_recall() {
        let s = score_example(&pred(&[(0, "a")]), &gold(&[(0, "a"), (1, "b")]), &lib(2), ValueMatcher::Exact).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_), (1, 0, 1));
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(!s.joint_correct);
    }

    #[test]
    fn wrong_value_counts_both_ways() {
        let s = score_example(&pred(&[(0, "x")]), &gold(&[(0, "a")]), &lib(1), ValueMatcher::Exact).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_, s.f1), (0, 1, 1, 0.0));
        assert_eq!(s.key_f1, 1.0);
        let none = score_example(&pred(&[]), &gold(&[(0, "a")]), &lib(1), ValueMatcher::Exact).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn any_of_alternatives_and_matchers() {
        let mut g = GoldState::new();
        g.insert(SlotId::new(0), vec!["New York".into(), "NYC".into()]);
        let s = score_example(&pred(&[(0, " NYC ")]), &g, &lib(1), ValueMatcher::Exact).unwrap();
        assert!(s.joint_correct);
        let ci = score_example(&pred(&[(0, "new york")]), &g, &lib(1), ValueMatcher::CaseInsensitive).unwrap();
        assert!(ci.joint_correct);
        let fz = score_example(&pred(&[(0, "New Yrok")]), &g, &lib(1), "fuzzy:0.7".parse().unwrap()).unwrap();
        assert!(fz.joint_correct);
    }

    #[test]
    fn mixed_library() {
        let err = score_example(&pred(&[(7, "a")]), &gold(&[]), &lib(2), ValueMatcher::Exact).unwrap_err();
        assert!(matches!(err, EvalError::State(StateError::MixedLibrary)));
        let other = pred(&[]).with_library(&lib(3));
        assert!(score_example(&other, &gold(&[]), &lib(2), ValueMatcher::Exact).is_err());
    }

    fn score(f1: f64, joint: bool, latency: Option<f64>) -> ExampleScore {
        ExampleScore {
            tp: 0,
            fp: 0,
            fn_: 0,
            precision: f1,
            recall: f1,
            f1,
            key_f1: f1,
            joint_correct: joint,
            latency_s: latency,
        }
    }

    #[test]
    fn aggregates() {
        let s = [score(1.0, true, Some(0.1)), score(0.0, false, None)];
        assert_eq!(macro_f1(&s).unwrap(), 0.5);
        assert_eq!(jga(&s).unwrap(), 0.5);
        assert_eq!(latency_stats(&s).unwrap().mean, 0.1);
        assert!(matches!(macro_f1(&[]), Err(EvalError::EmptyScoreSet)));
        assert!(matches!(latency_stats(&s[1..]), Err(EvalError::EmptyScoreSet)));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let s: Vec<ExampleScore> = (1..=20).map(|i| score(1.0, true, Some(i as f64))).collect();
        let l = latency_stats(&s).unwrap();
        assert_eq!((l.p50, l.p95), (10.0, 19.0));
    }

    #[test]
    fn report_roundtrip_and_averaging() {
        let scored = vec![
            (Category::Sgd, score(1.0, true, Some(0.5))),
            (Category::Sgd, score(1.0, true, Some(0.7))),
            (Category::Address, score(0.0, false, None)),
        ];
        let r = EvalReport::build(&scored, BTreeMap::new(), 0, AverageBy::Example).unwrap();
        assert!((r.overall.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["per_category"]["SGD"]["n"], 2);
        assert!(v["per_category"]["ADDRESS"]["mean_latency_s"].is_null());

        let c = EvalReport::build(&scored, BTreeMap::new(), 0, AverageBy::Category).unwrap();
        assert_eq!(c.overall.macro_f1, 0.5);
        assert!(c.to_table().lines().last().unwrap().starts_with("Overall"));
    }
}
