use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum EditOp<T> {
    Match(T),
    Sub(T, T),
    Ins(T),
    Del(T),
}

/// Unit-cost Levenshtein alignment. During traceback ties prefer the
/// diagonal (match or substitution), then deletion, then insertion.
pub fn align<T: PartialEq + Clone>(reference: &[T], hypothesis: &[T]) -> Vec<EditOp<T>> {
    let (n, m) = (reference.len(), hypothesis.len());
    let table = distance_table(reference, hypothesis);
    let at = |i: usize, j: usize| table[i * (m + 1) + j];
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = at(i, j);
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == at(i - 1, j - 1) + usize::from(!same) {
                ops.push(if same {
                    EditOp::Match(reference[i - 1].clone())
                } else {
                    EditOp::Sub(reference[i - 1].clone(), hypothesis[j - 1].clone())
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == at(i - 1, j) + 1 {
            ops.push(EditOp::Del(reference[i - 1].clone()));
            i -= 1;
        } else {
            ops.push(EditOp::Ins(hypothesis[j - 1].clone()));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

fn distance_table<T: PartialEq>(a: &[T], b: &[T]) -> Vec<usize> {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![0usize; (n + 1) * (m + 1)];
    for i in 0..=n {
        d[i * (m + 1)] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * (m + 1) + j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = d[(i - 1) * (m + 1) + j] + 1;
            let ins = d[i * (m + 1) + j - 1] + 1;
            d[i * (m + 1) + j] = sub.min(del).min(ins);
        }
    }
    d
}

pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    distance_table(a, b)[(a.len() + 1) * (b.len() + 1) - 1]
}

pub fn distance_of<T>(ops: &[EditOp<T>]) -> usize {
    ops.iter()
        .filter(|op| !matches!(op, EditOp::Match(_)))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRates {
    pub wer: f64,
    pub cer: f64,
    /// Reference was empty; rates are raw edit counts over a denominator of 1.
    pub degenerate: bool,
}

fn normalize_text(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// Word and character error rates: edit distance over reference length.
pub fn wer_cer(reference: &str, hypothesis: &str) -> ErrorRates {
    let rw = normalize_text(reference);
    let hw = normalize_text(hypothesis);
    let rc: Vec<char> = rw.join(" ").chars().collect();
    let hc: Vec<char> = hw.join(" ").chars().collect();
    let degenerate = rw.is_empty();
    ErrorRates {
        wer: edit_distance(&rw, &hw) as f64 / rw.len().max(1) as f64,
        cer: edit_distance(&rc, &hc) as f64 / rc.len().max(1) as f64,
        degenerate,
    }
}
