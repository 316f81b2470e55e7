//! Sentence-level overlap metrics and corpus evaluation.
//!
//! Every score lies in `[0, 1]`; a corpus score is the mean of its sentence
//! scores.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::text::{tokenize, DialoguePair, TokenSequence, Vocab};

/// How the scores were computed, written into every report.
pub const METRIC_NOTES: &str = "sentence-level BLEU-4 with add-one smoothing of zero n-gram counts and \
brevity penalty exp(min(0, 1 - |ref|/|cand|)); ROUGE-L with beta = 1; F-measure over unigram multisets; \
meteor_lite = exact then suffix-stripped (ing/ed/es/s) unigram alignment, no synonyms; \
corpus scores are means of sentence scores";

fn counts<K: Eq + Hash>(items: impl Iterator<Item = K>) -> HashMap<K, usize> {
    let mut map = HashMap::new();
    for k in items {
        *map.entry(k).or_insert(0) += 1;
    }
    map
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Geometric mean of clipped n-gram precisions for n = 1..4 times the
/// brevity penalty. A precision with no matches becomes `1 / (count + 1)`.
pub fn bleu4<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refr: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let total = cand.len().saturating_sub(n - 1);
        let ref_counts = counts(refr.windows(n));
        let matched: usize = counts(cand.windows(n))
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let p = if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        log_sum += p.ln() / 4.0;
    }
    let bp = (1.0 - refr.len() as f64 / cand.len() as f64).min(0.0).exp();
    bp * log_sum.exp()
}

/// Longest common subsequence length, O(n·m).
pub fn lcs_len<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refr: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let lcs = lcs_len(&cand, &refr) as f64;
    harmonic(lcs / cand.len() as f64, lcs / refr.len() as f64)
}

pub fn f_measure<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let ref_counts = counts(reference.iter().map(AsRef::as_ref));
    let overlap: usize = counts(candidate.iter().map(AsRef::as_ref))
        .iter()
        .map(|(tok, &c)| c.min(ref_counts.get(tok).copied().unwrap_or(0)))
        .sum();
    harmonic(overlap as f64 / candidate.len() as f64, overlap as f64 / reference.len() as f64)
}

/// Strips one of `ing`, `ed`, `es`, `s`, keeping a stem of at least three characters.
pub fn strip_suffix(word: &str) -> &str {
    for suffix in ["ing", "ed", "es", "s"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            if stem.chars().count() >= 3 {
                return stem;
            }
        }
    }
    word
}

/// Candidate/reference index pairs, sorted by candidate index.
fn align(cand: &[&str], refr: &[&str]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; refr.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let stages: [fn(&str) -> &str; 2] = [|w| w, strip_suffix];
    for key in stages {
        let mut cand_used = vec![false; cand.len()];
        for &(c, _) in &pairs {
            cand_used[c] = true;
        }
        let mut last_ref: Option<usize> = None;
        for (i, w) in cand.iter().enumerate() {
            if cand_used[i] {
                last_ref = pairs.iter().find(|&&(c, _)| c == i).map(|&(_, r)| r);
                continue;
            }
            let k = key(w);
            let free = |j: usize| !ref_used[j] && key(refr[j]) == k;
            // continue the current chunk when possible, else take the leftmost match
            let pick = last_ref
                .map(|r| r + 1)
                .filter(|&j| j < refr.len() && free(j))
                .or_else(|| (0..refr.len()).find(|&j| free(j)));
            if let Some(j) = pick {
                ref_used[j] = true;
                pairs.push((i, j));
                last_ref = Some(j);
            } else {
                last_ref = None;
            }
        }
        pairs.sort_unstable();
    }
    pairs
}

fn chunk_count(pairs: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(c, r) in pairs {
        match prev {
            Some((pc, pr)) if c == pc + 1 && r == pr + 1 => {}
            _ => chunks += 1,
        }
        prev = Some((c, r));
    }
    chunks
}

/// METEOR without synonyms: `F_mean · (1 − 0.5 · (chunks / matches)³)`
/// where `F_mean = 10PR / (R + 9P)`.
pub fn meteor_lite<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refr: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let pairs = align(&cand, &refr);
    if pairs.is_empty() {
        return 0.0;
    }
    let m = pairs.len() as f64;
    let p = m / cand.len() as f64;
    let r = m / refr.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunk_count(&pairs) as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub question: String,
    pub reference: String,
    pub candidate: String,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub f_measure: f64,
    pub meteor: f64,
}

impl SentenceScore {
    pub fn score(question: &str, reference: &[String], candidate: &[String]) -> Self {
        SentenceScore {
            question: question.to_string(),
            reference: reference.join(" "),
            candidate: candidate.join(" "),
            bleu4: bleu4(candidate, reference),
            rouge_l: rouge_l(candidate, reference),
            f_measure: f_measure(candidate, reference),
            meteor: meteor_lite(candidate, reference),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub corpus: String,
    pub n: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub f_measure: f64,
    pub meteor: f64,
    pub notes: String,
    #[serde(skip)]
    pub sentences: Vec<SentenceScore>,
}

impl MetricReport {
    pub fn from_sentences(corpus: &str, sentences: Vec<SentenceScore>) -> Self {
        let n = sentences.len();
        let avg = |f: fn(&SentenceScore) -> f64| {
            if n == 0 {
                0.0
            } else {
                sentences.iter().map(f).sum::<f64>() / n as f64
            }
        };
        MetricReport {
            corpus: corpus.to_string(),
            n,
            bleu4: avg(|s| s.bleu4),
            rouge_l: avg(|s| s.rouge_l),
            f_measure: avg(|s| s.f_measure),
            meteor: avg(|s| s.meteor),
            notes: METRIC_NOTES.to_string(),
            sentences,
        }
    }

    pub fn sentences_csv(&self) -> String {
        let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
        let mut out = String::from("question,reference,candidate,bleu4,rouge_l,f_measure,meteor\n");
        for s in &self.sentences {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                quote(&s.question),
                quote(&s.reference),
                quote(&s.candidate),
                s.bleu4,
                s.rouge_l,
                s.f_measure,
                s.meteor
            );
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, json_path: &Path) -> Result<()> {
        std::fs::write(json_path, serde_json::to_string_pretty(self)?)?;
        std::fs::write(json_path.with_extension("csv"), self.sentences_csv())?;
        Ok(())
    }
}

/// Anything that turns a tokenized question into a tokenized answer.
pub trait Responder {
    fn respond(&self, question: &[String]) -> Result<Vec<String>>;

    fn respond_batch(&self, questions: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        questions.iter().map(|q| self.respond(q)).collect()
    }
}

/// Greedy decoding through a generator and its vocabulary.
pub struct GeneratorResponder<'a> {
    pub generator: &'a GeneratorModel,
    pub vocab: &'a Vocab,
    pub max_steps: usize,
}

impl<'a> GeneratorResponder<'a> {
    pub fn new(generator: &'a GeneratorModel, vocab: &'a Vocab) -> Self {
        GeneratorResponder {
            generator,
            vocab,
            max_steps: generator.config().max_len,
        }
    }

    fn frame(&self, question: &[String]) -> TokenSequence {
        TokenSequence::framed(&self.vocab.encode(question), self.generator.config().max_len)
    }
}

impl Responder for GeneratorResponder<'_> {
    fn respond(&self, question: &[String]) -> Result<Vec<String>> {
        Ok(self.respond_batch(&[question.to_vec()])?.remove(0))
    }

    fn respond_batch(&self, questions: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        let mut out = Vec::with_capacity(questions.len());
        for chunk in questions.chunks(64) {
            let framed: Vec<TokenSequence> = chunk.iter().map(|q| self.frame(q)).collect();
            for answer in self.generator.infer_batch(&framed, self.max_steps)? {
                out.push(self.vocab.decode(answer.tokens()));
            }
        }
        Ok(out)
    }
}

/// Answers every test question and scores it against its reference.
pub fn evaluate_corpus(responder: &dyn Responder, test: &[DialoguePair], corpus: &str) -> Result<MetricReport> {
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let questions: Vec<Vec<String>> = test.iter().map(|p| tokenize(&p.question)).collect();
    let answers = responder.respond_batch(&questions)?;
    let sentences = test
        .iter()
        .zip(&answers)
        .map(|(pair, answer)| SentenceScore::score(&pair.question, &tokenize(&pair.answer), answer))
        .collect();
    Ok(MetricReport::from_sentences(corpus, sentences))
}
