//! Instruction sentence → task label.
//!
//! The reference recognizer is a multinomial naive Bayes classifier over a
//! bag of lowercase alphanumeric tokens. Anything implementing [`Recognizer`]
//! can stand in for it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::taskmodel::TaskLabel;
use crate::text::{quote, unquote};

#[derive(Debug, Clone, PartialEq)]
pub enum RecognitionError {
    EmptyCorpus,
    EmptySentence { index: usize },
    TooFewSentences { label: TaskLabel, count: usize, required: usize },
    NoContent,
    InvalidSmoothing(f64),
    ModelFormat { line: usize, message: String },
}

impl fmt::Display for RecognitionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecognitionError::EmptyCorpus => f.write_str("empty corpus"),
            RecognitionError::EmptySentence { index } => write!(f, "corpus entry {index} has no tokens"),
            RecognitionError::TooFewSentences { label, count, required } => {
                write!(f, "class {label} has {count} sentences, need at least {required}")
            }
            RecognitionError::NoContent => f.write_str("no content"),
            RecognitionError::InvalidSmoothing(a) => write!(f, "smoothing constant must be positive, got {a}"),
            RecognitionError::ModelFormat { line, message } => write!(f, "model line {line}: {message}"),
        }
    }
}

impl core::error::Error for RecognitionError {}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Labelled instruction sentences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub entries: Vec<(String, TaskLabel)>,
}

impl Corpus {
    pub fn new(entries: Vec<(String, TaskLabel)>) -> Corpus {
        Corpus { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Labels that occur in the corpus, in class order.
    pub fn labels(&self) -> Vec<TaskLabel> {
        let mut labels: Vec<TaskLabel> = self.entries.iter().map(|(_, l)| *l).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn count(&self, label: TaskLabel) -> usize {
        self.entries.iter().filter(|(_, l)| *l == label).count()
    }

    /// Checks the corpus invariants: non-empty sentences and at least
    /// `min_per_class` sentences for each label present.
    pub fn check(&self, min_per_class: usize) -> Result<(), RecognitionError> {
        if self.entries.is_empty() {
            return Err(RecognitionError::EmptyCorpus);
        }
        if let Some(index) = self.entries.iter().position(|(s, _)| tokenize(s).is_empty()) {
            return Err(RecognitionError::EmptySentence { index });
        }
        for label in self.labels() {
            let count = self.count(label);
            if count < min_per_class {
                return Err(RecognitionError::TooFewSentences { label, count, required: min_per_class });
            }
        }
        Ok(())
    }
}

/// Posterior over the model's classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: TaskLabel,
    /// One entry per class, in class order; sums to 1.
    pub scores: Vec<(TaskLabel, f64)>,
}

impl Prediction {
    pub fn score(&self, label: TaskLabel) -> Option<f64> {
        self.scores.iter().find(|(l, _)| *l == label).map(|(_, s)| *s)
    }

    /// Scores sorted by descending probability (class order breaks ties).
    pub fn ranked(&self) -> Vec<(TaskLabel, f64)> {
        let mut r = self.scores.clone();
        r.sort_by(|a, b| b.1.total_cmp(&a.1));
        r
    }
}

/// Text → task label backend.
pub trait Recognizer {
    fn predict(&self, text: &str) -> Result<Prediction, RecognitionError>;
}

/// Multinomial naive Bayes with additive smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    alpha: f64,
    classes: Vec<TaskLabel>,
    priors: Vec<f64>,
    sentences: Vec<u64>,
    vocabulary: BTreeMap<String, usize>,
    /// `counts[class][token]`.
    counts: Vec<Vec<u64>>,
    class_totals: Vec<u64>,
}

/// Fits the classifier. Priors are sentence frequencies; token likelihoods
/// are `(count + alpha) / (class_total + alpha * |V|)`.
pub fn train(corpus: &Corpus, alpha: f64) -> Result<ClassifierModel, RecognitionError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(RecognitionError::InvalidSmoothing(alpha));
    }
    corpus.check(1)?;
    let classes = corpus.labels();
    let tokenized: Vec<(Vec<String>, usize)> = corpus
        .entries
        .iter()
        .map(|(s, l)| (tokenize(s), classes.binary_search(l).expect("label from corpus")))
        .collect();

    let mut vocabulary = BTreeMap::new();
    for (tokens, _) in &tokenized {
        for t in tokens {
            vocabulary.entry(t.clone()).or_insert(0usize);
        }
    }
    for (i, slot) in vocabulary.values_mut().enumerate() {
        *slot = i;
    }

    let mut counts = vec![vec![0u64; vocabulary.len()]; classes.len()];
    let mut sentences = vec![0u64; classes.len()];
    for (tokens, class) in &tokenized {
        sentences[*class] += 1;
        for t in tokens {
            counts[*class][vocabulary[t]] += 1;
        }
    }
    let class_totals: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let total = corpus.len() as f64;
    let priors = sentences.iter().map(|&n| n as f64 / total).collect();
    Ok(ClassifierModel { alpha, classes, priors, sentences, vocabulary, counts, class_totals })
}

impl ClassifierModel {
    pub fn classes(&self) -> &[TaskLabel] {
        &self.classes
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocabulary_len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.vocabulary.contains_key(token)
    }

    /// Smoothed `P(token | class)`; `None` for tokens outside the vocabulary.
    pub fn likelihood(&self, label: TaskLabel, token: &str) -> Option<f64> {
        let class = self.classes.binary_search(&label).ok()?;
        let idx = *self.vocabulary.get(token)?;
        Some(self.smoothed(class, idx))
    }

    fn smoothed(&self, class: usize, token: usize) -> f64 {
        let v = self.vocabulary.len() as f64;
        (self.counts[class][token] as f64 + self.alpha) / (self.class_totals[class] as f64 + self.alpha * v)
    }

    /// Writes the versioned text dump read back by [`ClassifierModel::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::from("nbmodel v1\n");
        let _ = writeln!(out, "alpha {}", self.alpha);
        let _ = writeln!(out, "classes {}", self.classes.len());
        for (i, c) in self.classes.iter().enumerate() {
            let _ = writeln!(out, "class {} {} {}", c.code(), self.sentences[i], self.priors[i]);
        }
        let _ = writeln!(out, "vocabulary {}", self.vocabulary.len());
        for (token, &idx) in &self.vocabulary {
            let _ = write!(out, "token {}", quote(token));
            for row in &self.counts {
                let _ = write!(out, " {}", row[idx]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ClassifierModel, RecognitionError> {
        let bad = |line: usize, message: &str| RecognitionError::ModelFormat { line, message: message.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(0, &format!("missing {what}")));

        let (n, header) = next("header")?;
        if header != "nbmodel v1" {
            return Err(bad(n, "expected `nbmodel v1`"));
        }
        let (n, line) = next("alpha")?;
        let alpha: f64 = line
            .strip_prefix("alpha ")
            .and_then(|v| v.parse().ok())
            .filter(|a: &f64| *a > 0.0 && a.is_finite())
            .ok_or_else(|| bad(n, "invalid alpha"))?;
        let (n, line) = next("classes")?;
        let class_count: usize =
            line.strip_prefix("classes ").and_then(|v| v.parse().ok()).ok_or_else(|| bad(n, "invalid class count"))?;
        let mut classes = Vec::with_capacity(class_count);
        let mut sentences = Vec::with_capacity(class_count);
        let mut priors = Vec::with_capacity(class_count);
        for _ in 0..class_count {
            let (n, line) = next("class line")?;
            let mut it = line.strip_prefix("class ").ok_or_else(|| bad(n, "expected `class`"))?.split(' ');
            let label = it.next().and_then(TaskLabel::from_code).ok_or_else(|| bad(n, "unknown label"))?;
            let count: u64 = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(n, "invalid sentence count"))?;
            let prior: f64 = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(n, "invalid prior"))?;
            if classes.last().is_some_and(|&last| last >= label) {
                return Err(bad(n, "classes must be listed once, in class order"));
            }
            classes.push(label);
            sentences.push(count);
            priors.push(prior);
        }
        let (n, line) = next("vocabulary")?;
        let vocab_len: usize =
            line.strip_prefix("vocabulary ").and_then(|v| v.parse().ok()).ok_or_else(|| bad(n, "invalid vocabulary size"))?;
        let mut vocabulary = BTreeMap::new();
        let mut counts = vec![Vec::with_capacity(vocab_len); class_count];
        for idx in 0..vocab_len {
            let (n, line) = next("token line")?;
            let rest = line.strip_prefix("token ").ok_or_else(|| bad(n, "expected `token`"))?;
            let close = rest.rfind('"').ok_or_else(|| bad(n, "malformed token"))?;
            let token = unquote(&rest[..=close]).ok_or_else(|| bad(n, "malformed token"))?;
            let values: Vec<u64> = rest[close + 1..]
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad(n, "invalid count")))
                .collect::<Result<_, _>>()?;
            if values.len() != class_count {
                return Err(bad(n, "count column mismatch"));
            }
            if vocabulary.insert(token, idx).is_some() {
                return Err(bad(n, "duplicate token"));
            }
            for (row, v) in counts.iter_mut().zip(values) {
                row.push(v);
            }
        }
        if vocabulary.values().copied().ne(0..vocab_len) {
            return Err(bad(0, "tokens must be listed in sorted order"));
        }
        let class_totals = counts.iter().map(|row| row.iter().sum()).collect();
        Ok(ClassifierModel { alpha, classes, priors, sentences, vocabulary, counts, class_totals })
    }
}

impl Recognizer for ClassifierModel {
    /// Posterior ∝ prior · Π P(token | class) over known tokens.
    fn predict(&self, text: &str) -> Result<Prediction, RecognitionError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(RecognitionError::NoContent);
        }
        // Counting first makes the score independent of token order.
        let mut bag: BTreeMap<usize, u32> = BTreeMap::new();
        for t in &tokens {
            if let Some(&idx) = self.vocabulary.get(t) {
                *bag.entry(idx).or_default() += 1;
            }
        }
        let log_post: Vec<f64> = (0..self.classes.len())
            .map(|c| {
                let mut lp = libm::log(self.priors[c]);
                for (&idx, &n) in &bag {
                    lp += f64::from(n) * libm::log(self.smoothed(c, idx));
                }
                lp
            })
            .collect();
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_post.iter().map(|lp| libm::exp(lp - max)).collect();
        let total: f64 = weights.iter().sum();
        let scores: Vec<(TaskLabel, f64)> =
            self.classes.iter().zip(&weights).map(|(&l, &w)| (l, w / total)).collect();
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if s.1 > scores[best].1 {
                best = i;
            }
        }
        Ok(Prediction { label: scores[best].0, scores })
    }
}

/// Stratified k-fold result.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub classes: Vec<TaskLabel>,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// `confusion[truth][predicted]`, indices into `classes`.
    pub confusion: Vec<Vec<u32>>,
}

impl CrossValidation {
    /// `truth,<class codes...>` header then one row per true class.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("truth");
        for c in &self.classes {
            let _ = write!(out, ",{}", c.code());
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            out.push_str(c.code());
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Stratified k-fold cross-validation. Each class is shuffled with a seeded
/// RNG and dealt round-robin into the folds.
pub fn cross_validate(corpus: &Corpus, folds: usize, alpha: f64, seed: u64) -> Result<CrossValidation, RecognitionError> {
    corpus.check(folds.max(2))?;
    let classes = corpus.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; corpus.len()];
    for &label in &classes {
        let mut members: Vec<usize> =
            corpus.entries.iter().enumerate().filter(|(_, (_, l))| *l == label).map(|(i, _)| i).collect();
        members.shuffle(&mut rng);
        for (k, idx) in members.into_iter().enumerate() {
            fold_of[idx] = k % folds;
        }
    }

    let mut confusion = vec![vec![0u32; classes.len()]; classes.len()];
    let mut fold_accuracy = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train_set = Corpus::new(
            corpus.entries.iter().zip(&fold_of).filter(|(_, &f)| f != fold).map(|(e, _)| e.clone()).collect(),
        );
        let model = train(&train_set, alpha)?;
        let mut correct = 0usize;
        let mut total = 0usize;
        for ((sentence, truth), _) in corpus.entries.iter().zip(&fold_of).filter(|(_, &f)| f == fold) {
            let predicted = model.predict(sentence)?.label;
            let t = classes.binary_search(truth).expect("label from corpus");
            let p = classes.binary_search(&predicted).expect("model classes are corpus classes");
            confusion[t][p] += 1;
            total += 1;
            if predicted == *truth {
                correct += 1;
            }
        }
        fold_accuracy.push(correct as f64 / total as f64);
    }
    let mean_accuracy = fold_accuracy.iter().sum::<f64>() / folds as f64;
    Ok(CrossValidation { classes, fold_accuracy, mean_accuracy, confusion })
}

/// Finds the target object named in an instruction.
pub trait ObjectNameParser {
    fn extract(&self, text: &str) -> Option<String>;
}

/// Longest vocabulary entry whose tokens occur contiguously in the text;
/// the leftmost occurrence wins among entries of equal length.
pub fn extract_object_name(text: &str, vocabulary: &[String]) -> Option<String> {
    let tokens = tokenize(text);
    let mut best: Option<(usize, usize, &String)> = None; // (token length, start, entry)
    for entry in vocabulary {
        let needle = tokenize(entry);
        if needle.is_empty() || needle.len() > tokens.len() {
            continue;
        }
        let Some(start) = tokens.windows(needle.len()).position(|w| w == needle.as_slice()) else { continue };
        let better = match best {
            None => true,
            Some((len, pos, _)) => needle.len() > len || (needle.len() == len && start < pos),
        };
        if better {
            best = Some((needle.len(), start, entry));
        }
    }
    best.map(|(_, _, e)| e.clone())
}

/// [`extract_object_name`] over a fixed vocabulary.
#[derive(Debug, Clone, Default)]
pub struct VocabularyMatcher {
    pub vocabulary: Vec<String>,
}

impl ObjectNameParser for VocabularyMatcher {
    fn extract(&self, text: &str) -> Option<String> {
        extract_object_name(text, &self.vocabulary)
    }
}
