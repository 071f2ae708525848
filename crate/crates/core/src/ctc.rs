//! Connectionist temporal classification: loss and gradient by log-space
//! forward-backward, greedy decoding, and a path-enumeration oracle.
//!
//! Blank is always output index 0; vocabulary symbol `i` maps to index `i + 1`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Error, Result};

pub const BLANK: usize = 0;

/// Ordered character set. Output index of `chars[i]` is `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    chars: Vec<char>,
}

impl Vocabulary {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect();
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::Config(format!("duplicate vocabulary symbol {c:?}")));
            }
        }
        if chars.is_empty() {
            return Err(Error::Config("empty vocabulary".into()));
        }
        Ok(Self { chars })
    }

    /// Space plus lowercase ASCII letters.
    pub fn english() -> Self {
        Self::new(std::iter::once(' ').chain('a'..='z')).expect("distinct symbols")
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Number of model outputs, `len() + 1` for the blank.
    pub fn output_width(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c).map(|i| i + 1)
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        index.checked_sub(1).and_then(|i| self.chars.get(i).copied())
    }

    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    text: String,
    labels: Vec<usize>,
}

impl Transcript {
    pub fn new(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let labels = text
            .chars()
            .map(|c| {
                vocab
                    .index_of(c)
                    .ok_or_else(|| Error::Data(format!("character {c:?} in {text:?} not in vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            text: text.to_string(),
            labels,
        })
    }

    pub fn from_labels(labels: Vec<usize>, vocab: &Vocabulary) -> Result<Self> {
        let text = labels
            .iter()
            .map(|&l| {
                vocab
                    .symbol(l)
                    .ok_or_else(|| Error::Data(format!("label {l} outside vocabulary")))
            })
            .collect::<Result<String>>()?;
        Ok(Self { text, labels })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn repeats(&self) -> usize {
        self.labels.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Minimum number of frames a CTC alignment of this transcript needs.
    pub fn min_frames(&self) -> usize {
        self.labels.len() + self.repeats()
    }
}

/// Per-frame unnormalized scores over `blank + vocabulary`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    values: Matrix,
}

impl LogitMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() < 1 || values.cols() < 2 {
            return Err(Error::DegenerateInput(format!(
                "logit matrix {:?} needs >= 1 frame and >= 2 outputs",
                values.shape()
            )));
        }
        if !values.all_finite() {
            return Err(Error::Numeric {
                iteration: 0,
                what: "non-finite logits".into(),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn log_softmax(&self) -> Matrix {
        let mut out = self.values.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        out
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_target(logits: &LogitMatrix, target: &Transcript) -> Result<()> {
    if let Some(&l) = target.labels.iter().find(|&&l| l == BLANK || l >= logits.width()) {
        return Err(Error::Contract(format!(
            "label {l} invalid for {} outputs",
            logits.width()
        )));
    }
    if logits.frames() < target.min_frames() {
        return Err(Error::Infeasible {
            frames: logits.frames(),
            labels: target.labels.len(),
            repeats: target.repeats(),
        });
    }
    Ok(())
}

/// CTC negative log-likelihood of `target` and its gradient with respect to
/// the logits.
pub fn ctc_loss(logits: &LogitMatrix, target: &Transcript) -> Result<(f64, Matrix)> {
    check_target(logits, target)?;
    let t_len = logits.frames();
    let width = logits.width();
    let logp = logits.log_softmax();

    let mut ext = Vec::with_capacity(2 * target.labels.len() + 1);
    ext.push(BLANK);
    for &l in &target.labels {
        ext.push(l);
        ext.push(BLANK);
    }
    let s_len = ext.len();
    // skip transition s-2 -> s allowed onto a non-blank differing from s-2
    let can_skip: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2])
        .collect();

    let neg = f64::NEG_INFINITY;
    let mut alpha = Matrix::zeros(t_len, s_len);
    alpha.fill(neg);
    alpha[(0, 0)] = logp[(0, ext[0])];
    if s_len > 1 {
        alpha[(0, 1)] = logp[(0, ext[1])];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[(t - 1, s)];
            if s >= 1 {
                acc = log_add(acc, alpha[(t - 1, s - 1)]);
            }
            if can_skip[s] {
                acc = log_add(acc, alpha[(t - 1, s - 2)]);
            }
            alpha[(t, s)] = if acc == neg { neg } else { acc + logp[(t, ext[s])] };
        }
    }

    // beta[t][s]: log prob of emitting frames t+1.. given state s at frame t
    let mut beta = Matrix::zeros(t_len, s_len);
    beta.fill(neg);
    beta[(t_len - 1, s_len - 1)] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1, s_len - 2)] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1, s)] + logp[(t + 1, ext[s])];
            if s + 1 < s_len {
                acc = log_add(acc, beta[(t + 1, s + 1)] + logp[(t + 1, ext[s + 1])]);
            }
            if s + 2 < s_len && can_skip[s + 2] {
                acc = log_add(acc, beta[(t + 1, s + 2)] + logp[(t + 1, ext[s + 2])]);
            }
            beta[(t, s)] = acc;
        }
    }

    let mut log_p = alpha[(t_len - 1, s_len - 1)];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[(t_len - 1, s_len - 2)]);
    }
    if !log_p.is_finite() {
        return Err(Error::Numeric {
            iteration: 0,
            what: format!("CTC log-likelihood is {log_p}"),
        });
    }

    let mut grad = Matrix::zeros(t_len, width);
    let mut occupancy = vec![neg; width];
    for t in 0..t_len {
        occupancy.fill(neg);
        for s in 0..s_len {
            let v = alpha[(t, s)] + beta[(t, s)];
            occupancy[ext[s]] = log_add(occupancy[ext[s]], v);
        }
        for k in 0..width {
            grad[(t, k)] = logp[(t, k)].exp() - (occupancy[k] - log_p).exp();
        }
    }
    Ok(((-log_p).max(0.0), grad))
}

/// Collapse a frame-level path: merge repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Per-frame argmax (ties to the lowest index), collapsed.
pub fn greedy_decode(logits: &LogitMatrix, vocab: &Vocabulary) -> Result<Transcript> {
    if logits.width() != vocab.output_width() {
        return Err(Error::Contract(format!(
            "{} logits per frame, vocabulary needs {}",
            logits.width(),
            vocab.output_width()
        )));
    }
    let path: Vec<usize> = logits
        .values
        .iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    Transcript::from_labels(collapse(&path), vocab)
}

const ENUMERATION_LIMIT: f64 = 4_000_000.0;

/// Probability of every collapsed label string, by enumerating all
/// `width^frames` frame paths.
pub fn enumerate_collapsed(logits: &LogitMatrix) -> Result<HashMap<Vec<usize>, f64>> {
    let (t_len, width) = (logits.frames(), logits.width());
    if (t_len as f64) * (width as f64).ln() > ENUMERATION_LIMIT.ln() {
        return Err(Error::Guard(format!(
            "{width}^{t_len} paths exceeds {ENUMERATION_LIMIT}"
        )));
    }
    let logp = logits.log_softmax();
    let mut totals = HashMap::new();
    let mut path = vec![0usize; t_len];
    loop {
        let lp: f64 = path.iter().enumerate().map(|(t, &k)| logp[(t, k)]).sum();
        *totals.entry(collapse(&path)).or_insert(0.0) += lp.exp();
        // odometer increment
        let mut t = 0;
        loop {
            if t == t_len {
                return Ok(totals);
            }
            path[t] += 1;
            if path[t] < width {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}

/// `-ln P(target)` by summing over all paths that collapse to `target`.
pub fn brute_force_ctc(logits: &LogitMatrix, target: &Transcript) -> Result<f64> {
    let totals = enumerate_collapsed(logits)?;
    let p = totals.get(target.labels()).copied().unwrap_or(0.0);
    Ok(-p.ln())
}
