//! Metric implementations against deliberately naive oracles.

use cwgan_core::metrics::{bleu4, f_measure, meteor_lite, rouge_l};
use cwgan_core::nn::Rng;
use rand::{Rng as _, SeedableRng};

use crate::Outcome;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Clipped matches counted occurrence by occurrence: the k-th copy of an
/// n-gram in the candidate matches when the reference holds more than k copies.
fn oracle_bleu4(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut product = 1.0f64;
    for n in 1..=4usize {
        let total = if c.len() >= n { c.len() - n + 1 } else { 0 };
        let mut matched = 0usize;
        for i in 0..total {
            let gram = &c[i..i + n];
            let earlier = (0..i).filter(|&j| &c[j..j + n] == gram).count();
            let in_ref = if r.len() >= n {
                (0..=r.len() - n).filter(|&j| &r[j..j + n] == gram).count()
            } else {
                0
            };
            if earlier < in_ref {
                matched += 1;
            }
        }
        let p = if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        product *= p;
    }
    let bp = if c.len() >= r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    bp * product.powf(0.25)
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == *n))
}

/// Longest common subsequence by trying every subset of the candidate.
fn oracle_lcs(c: &[String], r: &[String]) -> usize {
    assert!(c.len() <= 16, "exhaustive search only for short inputs");
    let mut best = 0;
    for mask in 0u32..(1 << c.len()) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let pick: Vec<&String> = (0..c.len()).filter(|i| mask & (1 << i) != 0).map(|i| &c[i]).collect();
        if is_subsequence(&pick, r) {
            best = size;
        }
    }
    best
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn oracle_rouge_l(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let l = oracle_lcs(c, r) as f64;
    f1(l / c.len() as f64, l / r.len() as f64)
}

/// Bag overlap by crossing off reference tokens one at a time.
fn oracle_f_measure(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut pool: Vec<&String> = r.iter().collect();
    let mut overlap = 0;
    for tok in c {
        if let Some(i) = pool.iter().position(|x| *x == tok) {
            pool.remove(i);
            overlap += 1;
        }
    }
    f1(overlap as f64 / c.len() as f64, overlap as f64 / r.len() as f64)
}

fn stem(w: &str) -> String {
    for suffix in ["ing", "ed", "es", "s"] {
        if w.len() >= suffix.len() + 3 && w.ends_with(suffix) {
            return w[..w.len() - suffix.len()].to_string();
        }
    }
    w.to_string()
}

/// Exhaustive METEOR alignment: among all one-to-one alignments, prefer the
/// most exact matches, then the most matches overall, then the fewest chunks.
fn oracle_meteor(c: &[String], r: &[String]) -> f64 {
    #[derive(Clone, Copy, PartialEq, PartialOrd)]
    struct Key(usize, usize, i64);
    fn search(c: &[String], r: &[String], i: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<(usize, bool)>>, best: &mut Option<(Key, Vec<Option<(usize, bool)>>)>) {
        if i == c.len() {
            let exact = cur.iter().flatten().filter(|m| m.1).count();
            let matches = cur.iter().flatten().count();
            let key = Key(exact, matches, -(chunks(cur) as i64));
            if best.as_ref().is_none_or(|(k, _)| key > *k) {
                *best = Some((key, cur.clone()));
            }
            return;
        }
        cur.push(None);
        search(c, r, i + 1, used, cur, best);
        cur.pop();
        for j in 0..r.len() {
            if used[j] {
                continue;
            }
            let exact = c[i] == r[j];
            if exact || stem(&c[i]) == stem(&r[j]) {
                used[j] = true;
                cur.push(Some((j, exact)));
                search(c, r, i + 1, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    fn chunks(cur: &[Option<(usize, bool)>]) -> usize {
        let mut n = 0;
        let mut prev: Option<(usize, usize)> = None;
        for (i, m) in cur.iter().enumerate() {
            if let Some((j, _)) = m {
                if !matches!(prev, Some((pi, pj)) if pi + 1 == i && pj + 1 == *j) {
                    n += 1;
                }
                prev = Some((i, *j));
            }
        }
        n
    }
    let mut best = None;
    search(c, r, 0, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
    let (key, alignment) = best.expect("empty alignment is always a candidate");
    let m = key.1 as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / c.len() as f64;
    let rc = m / r.len() as f64;
    let f_mean = 10.0 * p * rc / (rc + 9.0 * p);
    f_mean * (1.0 - 0.5 * (chunks(&alignment) as f64 / m).powi(3))
}

pub const FIXED_PAIRS: [(&str, &str); 5] = [
    ("the cat sat on the mat", "the cat is on the mat"),
    ("a b c d", "a c b d"),
    ("i do not know how much do you want", "i do not know"),
    ("she walks to the shops", "she walked to the shop today"),
    ("what is your name", "my name is robert"),
];

pub fn metric_oracles() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let metrics: [(&str, fn(&[String], &[String]) -> f64, fn(&[String], &[String]) -> f64); 4] = [
        ("bleu4", |c, r| bleu4(c, r), oracle_bleu4),
        ("rouge_l", |c, r| rouge_l(c, r), oracle_rouge_l),
        ("f_measure", |c, r| f_measure(c, r), oracle_f_measure),
        ("meteor_lite", |c, r| meteor_lite(c, r), oracle_meteor),
    ];
    for (cand, refr) in FIXED_PAIRS {
        let (c, r) = (toks(cand), toks(refr));
        for (name, imp, oracle) in &metrics {
            let (got, want) = (imp(&c, &r), oracle(&c, &r));
            let err = (got - want).abs();
            worst = worst.max(err);
            if err > 1e-9 {
                failures.push(format!("{name}({cand:?}, {refr:?}) = {got}, oracle {want}"));
            }
        }
    }

    // identical sentences
    let mut identical = Vec::new();
    for (s, _) in FIXED_PAIRS {
        let t = toks(s);
        let scores = [bleu4(&t, &t), rouge_l(&t, &t), f_measure(&t, &t)];
        if scores.iter().any(|&x| (x - 1.0).abs() > 1e-12) {
            failures.push(format!("identical {s:?}: {scores:?}"));
        }
        let m = meteor_lite(&t, &t);
        identical.push(m);
        if m < 0.99 {
            failures.push(format!("identical {s:?}: meteor {m}"));
        }
    }

    // random pairs stay in range and match the oracles where those are cheap
    let words = ["a", "the", "cat", "cats", "walk", "walked", "walking", "is", "on", "mat", "do", "does"];
    let mut rng = Rng::seed_from_u64(1000);
    let mut out_of_range = 0;
    let mut oracle_gap = 0.0f64;
    for _ in 0..1000 {
        let mut sentence = |max: usize| -> Vec<String> {
            let n = rng.gen_range(0..=max);
            (0..n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
        };
        let (c, r) = (sentence(8), sentence(8));
        for (name, imp, oracle) in &metrics {
            let x = imp(&c, &r);
            if !(0.0..=1.0).contains(&x) {
                out_of_range += 1;
            }
            // greedy METEOR alignment may legitimately differ from the exhaustive optimum
            if *name != "meteor_lite" {
                oracle_gap = oracle_gap.max((x - oracle(&c, &r)).abs());
            }
        }
    }
    if out_of_range > 0 {
        failures.push(format!("{out_of_range} random-pair scores outside [0, 1]"));
    }
    if oracle_gap > 1e-9 {
        failures.push(format!("random pairs: BLEU/ROUGE-L/F differ from oracles by {oracle_gap:.2e}"));
    }
    let min_identical = identical.iter().copied().fold(1.0, f64::min);
    let detail = format!(
        "5 fixed pairs x 4 metrics, worst |err| {worst:.1e}; identical sentences score 1 (meteor >= {min_identical:.4}); \
         1000 random pairs in [0,1], BLEU/ROUGE-L/F oracle gap {oracle_gap:.1e}"
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}
