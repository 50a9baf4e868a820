//! Multinomial naive Bayes relevance filter with add-one smoothing, plus
//! precision/recall evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Relevant,
    Irrelevant,
}

impl Class {
    pub const ALL: [Class; 2] = [Class::Relevant, Class::Irrelevant];

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Relevant => "relevant",
            Class::Irrelevant => "irrelevant",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Class {
    type Err = RelevanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relevant" => Ok(Class::Relevant),
            "irrelevant" => Ok(Class::Irrelevant),
            other => Err(RelevanceError::UnknownClass(other.to_owned())),
        }
    }
}

#[derive(Debug, Error)]
pub enum RelevanceError {
    #[error("no training documents for class {0}")]
    MissingClass(Class),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("threshold {0} is outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("model file: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Splits text into lowercase alphanumeric runs, keeping those with at least
/// `min_len` characters that are not purely numeric.
pub fn tokenize_words(text: &str, min_len: usize) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= min_len.max(1))
        .filter(|t| !t.chars().all(|c| c.is_numeric()))
        .map(str::to_lowercase)
        .collect()
}

/// Multiset of normalized tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenBag {
    counts: BTreeMap<String, u64>,
}

impl TokenBag {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut bag = TokenBag::default();
        for t in tokens {
            *bag.counts.entry(t.into()).or_default() += 1;
        }
        bag
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(t, n)| (t.as_str(), *n))
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Lowercase; split on non-alphanumerics; drop tokens shorter than two
/// characters and pure numbers. No stopword removal.
pub fn tokenize(text: &str) -> TokenBag {
    TokenBag::from_tokens(tokenize_words(text, 2))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BayesModel {
    pub class_doc_counts: BTreeMap<Class, u64>,
    pub token_counts: BTreeMap<Class, BTreeMap<String, u64>>,
    pub class_token_totals: BTreeMap<Class, u64>,
    pub vocabulary_size: u64,
}

/// Posterior probabilities of both classes from one pair of log scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub relevant: f64,
    pub irrelevant: f64,
}

impl BayesModel {
    /// Counts tokens per class. Every class needs at least one document.
    pub fn train<'a, I>(labeled: I) -> Result<Self, RelevanceError>
    where
        I: IntoIterator<Item = (&'a str, Class)>,
    {
        let mut class_doc_counts: BTreeMap<Class, u64> =
            Class::ALL.iter().map(|c| (*c, 0)).collect();
        let mut token_counts: BTreeMap<Class, BTreeMap<String, u64>> =
            Class::ALL.iter().map(|c| (*c, BTreeMap::new())).collect();
        for (text, class) in labeled {
            *class_doc_counts.entry(class).or_default() += 1;
            let counts = token_counts.entry(class).or_default();
            for (tok, n) in tokenize(text).iter() {
                *counts.entry(tok.to_owned()).or_default() += n;
            }
        }
        for c in Class::ALL {
            if class_doc_counts[&c] == 0 {
                return Err(RelevanceError::MissingClass(c));
            }
        }
        let class_token_totals = token_counts
            .iter()
            .map(|(c, m)| (*c, m.values().sum()))
            .collect();
        let vocabulary: BTreeSet<&String> = token_counts.values().flat_map(|m| m.keys()).collect();
        let vocabulary_size = vocabulary.len() as u64;
        Ok(BayesModel {
            class_doc_counts,
            token_counts,
            class_token_totals,
            vocabulary_size,
        })
    }

    /// Checks the structural invariants of a (possibly deserialized) model.
    pub fn validate(&self) -> Result<(), RelevanceError> {
        let invalid = |m: String| Err(RelevanceError::InvalidModel(m));
        let mut vocabulary = BTreeSet::new();
        for c in Class::ALL {
            if self.class_doc_counts.get(&c).copied().unwrap_or(0) == 0 {
                return invalid(format!("class {c} has no documents"));
            }
            let counts = self.token_counts.get(&c).map(|m| m.values().sum::<u64>());
            if counts != self.class_token_totals.get(&c).copied() {
                return invalid(format!("token total for {c} does not match its counts"));
            }
            if let Some(m) = self.token_counts.get(&c) {
                vocabulary.extend(m.keys());
            }
        }
        if self.vocabulary_size < vocabulary.len() as u64 {
            return invalid(format!(
                "vocabulary_size {} below {} distinct tokens",
                self.vocabulary_size,
                vocabulary.len()
            ));
        }
        Ok(())
    }

    fn token_count(&self, class: Class, token: &str) -> u64 {
        self.token_counts
            .get(&class)
            .and_then(|m| m.get(token))
            .copied()
            .unwrap_or(0)
    }

    fn seen_anywhere(&self, token: &str) -> bool {
        Class::ALL.iter().any(|c| self.token_count(*c, token) > 0)
    }

    /// Unnormalized log score of `class` for `bag`.
    pub fn log_score(&self, class: Class, bag: &TokenBag) -> f64 {
        let docs: u64 = self.class_doc_counts.values().sum();
        let prior = self.class_doc_counts[&class] as f64 / docs as f64;
        let denom = (self.class_token_totals[&class] + self.vocabulary_size) as f64;
        let mut score = prior.ln();
        for (tok, n) in bag.iter() {
            if !self.seen_anywhere(tok) {
                continue;
            }
            let likelihood = (self.token_count(class, tok) + 1) as f64 / denom;
            score += n as f64 * likelihood.ln();
        }
        score
    }

    pub fn posterior(&self, bag: &TokenBag) -> Posterior {
        let rel = self.log_score(Class::Relevant, bag);
        let irr = self.log_score(Class::Irrelevant, bag);
        let top = rel.max(irr);
        let (er, ei) = ((rel - top).exp(), (irr - top).exp());
        let total = er + ei;
        Posterior {
            relevant: er / total,
            irrelevant: ei / total,
        }
    }

    pub fn posterior_relevant(&self, bag: &TokenBag) -> f64 {
        self.posterior(bag).relevant
    }

    /// Relevant iff the posterior reaches `threshold`.
    pub fn classify(&self, text: &str, threshold: f64) -> (Class, f64) {
        let p = self.posterior_relevant(&tokenize(text));
        let class = if p >= threshold {
            Class::Relevant
        } else {
            Class::Irrelevant
        };
        (class, p)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, RelevanceError> {
        let model: BayesModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn check_threshold(t: f64) -> Result<f64, RelevanceError> {
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(RelevanceError::InvalidThreshold(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl EvalReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        EvalReport {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.6}"));
        write!(
            f,
            "precision={} recall={} tp={} fp={} fn={} tn={}",
            show(self.precision),
            show(self.recall),
            self.true_positives,
            self.false_positives,
            self.false_negatives,
            self.true_negatives
        )
    }
}

/// Confusion counts of the model's verdicts against human labels.
pub fn evaluate<'a, I>(model: &BayesModel, labeled_test: I, threshold: f64) -> EvalReport
where
    I: IntoIterator<Item = (&'a str, Class)>,
{
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (text, truth) in labeled_test {
        match (model.classify(text, threshold).0, truth) {
            (Class::Relevant, Class::Relevant) => tp += 1,
            (Class::Relevant, Class::Irrelevant) => fp += 1,
            (Class::Irrelevant, Class::Relevant) => fn_ += 1,
            (Class::Irrelevant, Class::Irrelevant) => tn += 1,
        }
    }
    EvalReport::from_counts(tp, fp, fn_, tn)
}

#[derive(Debug, Clone, Copy)]
pub enum SplitOrder {
    /// Seeded shuffle before splitting.
    Random { seed: u64 },
    /// Keep the given order; the test set is the tail.
    AsGiven,
}

/// Splits `items` into (train, test) with `round(n * holdout)` test items.
pub fn holdout_split<T>(mut items: Vec<T>, holdout: f64, order: SplitOrder) -> (Vec<T>, Vec<T>) {
    if let SplitOrder::Random { seed } = order {
        items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let n_test = ((items.len() as f64) * holdout.clamp(0.0, 1.0)).round() as usize;
    let test = items.split_off(items.len() - n_test.min(items.len()));
    (items, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::{BigInt, BigRational, ToPrimitive};

    fn minicorpus() -> Vec<(&'static str, Class)> {
        vec![
            (
                "elephant ivory seizure poaching wildlife rangers",
                Class::Relevant,
            ),
            (
                "rhino horn trafficking conservation arrest",
                Class::Relevant,
            ),
            ("elephant mascot football team season", Class::Irrelevant),
            ("tiger golf major championship", Class::Irrelevant),
        ]
    }

    fn mini_model() -> BayesModel {
        BayesModel::train(minicorpus()).unwrap()
    }

    fn rat(n: u64, d: u64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    /// Exact-arithmetic posterior, written directly from the definition.
    fn oracle(corpus: &[(&str, Class)], doc: &[&str]) -> f64 {
        let mut counts: BTreeMap<(Class, String), u64> = BTreeMap::new();
        let mut totals: BTreeMap<Class, u64> = BTreeMap::new();
        let mut docs: BTreeMap<Class, u64> = BTreeMap::new();
        let mut vocab = BTreeSet::new();
        for (text, c) in corpus {
            *docs.entry(*c).or_default() += 1;
            for t in tokenize_words(text, 2) {
                *counts.entry((*c, t.clone())).or_default() += 1;
                *totals.entry(*c).or_default() += 1;
                vocab.insert(t);
            }
        }
        let v = vocab.len() as u64;
        let n_docs: u64 = docs.values().sum();
        let joint = |c: Class| {
            let mut p = rat(docs[&c], n_docs);
            for t in doc {
                if !vocab.contains(*t) {
                    continue;
                }
                let k = counts.get(&(c, t.to_string())).copied().unwrap_or(0);
                p *= rat(k + 1, totals.get(&c).copied().unwrap_or(0) + v);
            }
            p
        };
        let (r, i) = (joint(Class::Relevant), joint(Class::Irrelevant));
        (r.clone() / (r + i)).to_f64().unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Ivory, seized!"),
            TokenBag::from_tokens(["ivory", "seized"])
        );
        assert_eq!(tokenize("B2B 7 a"), TokenBag::from_tokens(["b2b"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("the THE the").count("the"), 3);
    }

    #[test]
    fn minicorpus_counts() {
        let m = mini_model();
        assert_eq!(m.class_token_totals[&Class::Relevant], 11);
        assert_eq!(m.class_token_totals[&Class::Irrelevant], 9);
        assert_eq!(m.vocabulary_size, 19);
        assert_eq!(m.class_doc_counts[&Class::Relevant], 2);
        m.validate().unwrap();
    }

    #[test]
    fn minicorpus_posterior() {
        let m = mini_model();
        let p = m.posterior_relevant(&tokenize("ivory trafficking arrest"));
        // (2/30)^3 / ((2/30)^3 + (1/28)^3) with equal priors
        let expected = oracle(&minicorpus(), &["ivory", "trafficking", "arrest"]);
        assert!((expected - 0.8667).abs() < 1e-4);
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.8667).abs() < 1e-4);
    }

    #[test]
    fn evidence_free_posteriors_equal_prior() {
        let m = mini_model();
        assert_eq!(m.posterior_relevant(&TokenBag::default()), 0.5);
        assert_eq!(m.posterior_relevant(&tokenize("zebra quokka narwhal")), 0.5);
    }

    #[test]
    fn identical_docs_are_symmetric() {
        let m = BayesModel::train([
            ("same words here", Class::Relevant),
            ("same words here", Class::Irrelevant),
        ])
        .unwrap();
        assert!((m.posterior_relevant(&tokenize("same words here")) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn missing_class() {
        let err = BayesModel::train([("a doc", Class::Relevant)]).unwrap_err();
        assert!(matches!(
            err,
            RelevanceError::MissingClass(Class::Irrelevant)
        ));
    }

    #[test]
    fn classify_examples() {
        let m = mini_model();
        let (c, p) = m.classify("ivory trafficking arrest", DEFAULT_THRESHOLD);
        assert_eq!(c, Class::Relevant);
        assert!((p - 0.8667).abs() < 1e-4);
        let (c, p) = m.classify("football team season", DEFAULT_THRESHOLD);
        assert_eq!(c, Class::Irrelevant);
        assert!(p < 0.5);
        // Posterior exactly at threshold counts as relevant.
        let (c, p) = m.classify("", 0.5);
        assert_eq!((c, p), (Class::Relevant, 0.5));
    }

    #[test]
    fn eval_arithmetic() {
        let r = EvalReport::from_counts(10, 3, 1, 20);
        assert!((r.precision.unwrap() - 0.7692).abs() < 1e-4);
        assert!((r.recall.unwrap() - 0.9091).abs() < 1e-4);
        assert_eq!(
            r.to_string(),
            "precision=0.769231 recall=0.909091 tp=10 fp=3 fn=1 tn=20"
        );
        let none = EvalReport::from_counts(0, 0, 4, 5);
        assert_eq!(none.precision, None);
        assert_eq!(none.recall, Some(0.0));
    }

    #[test]
    fn evaluate_on_training_set() {
        let m = mini_model();
        let r = evaluate(&m, minicorpus(), DEFAULT_THRESHOLD);
        assert_eq!((r.precision, r.recall), (Some(1.0), Some(1.0)));
        assert_eq!(r.true_positives + r.true_negatives, 4);
    }

    #[test]
    fn model_json_round_trip_and_validation() {
        let m = mini_model();
        let json = m.to_json();
        assert_eq!(BayesModel::from_json(&json).unwrap(), m);
        assert_eq!(BayesModel::from_json(&json).unwrap().to_json(), json);
        let keys: Vec<_> = m.token_counts[&Class::Relevant].keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);

        let mut broken = m.clone();
        broken.class_token_totals.insert(Class::Relevant, 99);
        assert!(BayesModel::from_json(&broken.to_json()).is_err());
        let mut broken = m;
        broken.vocabulary_size = 3;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn threshold_bounds() {
        assert!(check_threshold(0.5).is_ok());
        assert!(check_threshold(0.0).is_err());
        assert!(check_threshold(1.0).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<u32> = (0..1600).collect();
        let (train, test) = holdout_split(items.clone(), 0.25, SplitOrder::Random { seed: 7 });
        assert_eq!((train.len(), test.len()), (1200, 400));
        let again = holdout_split(items.clone(), 0.25, SplitOrder::Random { seed: 7 });
        assert_eq!(again, (train, test));
        let (train, test) = holdout_split(items, 0.25, SplitOrder::AsGiven);
        assert_eq!(test[0], 1200);
        assert_eq!(train.len(), 1200);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const VOCAB: &[&str] = &[
            "aa", "bb", "cc", "dd", "ee", "ff", "gg", "hh", "ii", "jj", "kk", "ll", "mm", "nn",
            "oo", "pp", "qq", "rr", "ss", "tt", "uu", "vv", "ww", "xx", "yy",
        ];

        fn doc(max: usize) -> impl Strategy<Value = Vec<&'static str>> {
            proptest::collection::vec(proptest::sample::select(VOCAB), 0..=max)
        }

        fn corpus() -> impl Strategy<Value = Vec<(String, Class)>> {
            (
                proptest::collection::vec(doc(10), 1..5),
                proptest::collection::vec(doc(10), 1..5),
            )
                .prop_map(|(rel, irr)| {
                    rel.into_iter()
                        .map(|d| (d.join(" "), Class::Relevant))
                        .chain(irr.into_iter().map(|d| (d.join(" "), Class::Irrelevant)))
                        .collect()
                })
        }

        proptest! {
            #[test]
            fn matches_rational_oracle(c in corpus(), d in doc(10)) {
                let refs: Vec<(&str, Class)> = c.iter().map(|(t, k)| (t.as_str(), *k)).collect();
                let m = BayesModel::train(refs.clone()).unwrap();
                let p = m.posterior_relevant(&TokenBag::from_tokens(d.iter().copied()));
                prop_assert!((p - oracle(&refs, &d)).abs() < 1e-9);
            }

            #[test]
            fn posteriors_sum_to_one(c in corpus(), d in doc(10)) {
                let refs: Vec<(&str, Class)> = c.iter().map(|(t, k)| (t.as_str(), *k)).collect();
                let m = BayesModel::train(refs).unwrap();
                let post = m.posterior(&TokenBag::from_tokens(d.iter().copied()));
                prop_assert!((post.relevant + post.irrelevant - 1.0).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&post.relevant));
            }

            #[test]
            fn order_invariant(c in corpus(), mut d in doc(10), seed in any::<u64>()) {
                let refs: Vec<(&str, Class)> = c.iter().map(|(t, k)| (t.as_str(), *k)).collect();
                let m = BayesModel::train(refs).unwrap();
                let a = m.classify(&d.join(" "), 0.5).1;
                d.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                prop_assert_eq!(a, m.classify(&d.join(" "), 0.5).1);
            }

            #[test]
            fn single_token_never_saturates(c in corpus(), t in proptest::sample::select(VOCAB)) {
                let refs: Vec<(&str, Class)> = c.iter().map(|(t, k)| (t.as_str(), *k)).collect();
                let m = BayesModel::train(refs).unwrap();
                let p = m.posterior_relevant(&TokenBag::from_tokens([t]));
                prop_assert!(p > 0.0 && p < 1.0);
            }

            #[test]
            fn relevant_leaning_token_never_lowers_posterior(
                shared in doc(6), extra_rel in doc(4), d in doc(6),
            ) {
                // Equal class totals: both classes share `shared`; the relevant
                // side swaps its last tokens for `extra_rel` of the same length.
                let mut irr = shared.clone();
                irr.extend(std::iter::repeat_n("zz", extra_rel.len()));
                let mut rel = shared;
                rel.extend(extra_rel.iter().copied());
                let rel_text = rel.join(" ");
                let irr_text = irr.join(" ");
                let m = BayesModel::train([(rel_text.as_str(), Class::Relevant), (irr_text.as_str(), Class::Irrelevant)]).unwrap();
                prop_assume!(m.class_token_totals[&Class::Relevant] == m.class_token_totals[&Class::Irrelevant]);
                let base = TokenBag::from_tokens(d.iter().copied());
                let before = m.posterior_relevant(&base);
                for t in VOCAB {
                    if m.token_count(Class::Relevant, t) > m.token_count(Class::Irrelevant, t) {
                        let more = TokenBag::from_tokens(d.iter().copied().chain([*t]));
                        prop_assert!(m.posterior_relevant(&more) >= before - 1e-15);
                    }
                }
            }
        }
    }
}
