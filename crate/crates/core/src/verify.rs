//! Speaker-verification scoring: clean-vs-adversarial pairing, cosine
//! similarity, d′, TMR at a fixed FMR and ROC points.
//!
//! Decision rule everywhere: accept iff `score >= threshold`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::matrix::dot;
use crate::model::Embedding;
use crate::{Error, Result};

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok((dot(a.vector(), b.vector()) / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub clean_speaker: String,
    pub adv_speaker: String,
    pub score: f64,
    pub is_genuine: bool,
}

/// Genuine and impostor similarity scores, optionally with the pair labels
/// that produced them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    genuine: Vec<f64>,
    impostor: Vec<f64>,
    pairs: Vec<ScoredPair>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self> {
        if genuine.iter().chain(&impostor).any(|s| !s.is_finite()) {
            return Err(Error::DegenerateInput("non-finite score".into()));
        }
        Ok(Self {
            genuine,
            impostor,
            pairs: Vec::new(),
        })
    }

    pub fn genuine(&self) -> &[f64] {
        &self.genuine
    }

    pub fn impostor(&self) -> &[f64] {
        &self.impostor
    }

    pub fn pairs(&self) -> &[ScoredPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.genuine.len() + self.impostor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Apply `f` to every score.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = Self::new(
            self.genuine.iter().map(|&s| f(s)).collect(),
            self.impostor.iter().map(|&s| f(s)).collect(),
        )?;
        out.pairs = self
            .pairs
            .iter()
            .map(|p| ScoredPair {
                score: f(p.score),
                ..p.clone()
            })
            .collect();
        Ok(out)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.pairs {
            w.serialize(p)?;
        }
        if self.pairs.is_empty() {
            w.write_record(["clean_speaker", "adv_speaker", "score", "is_genuine"])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let pairs = r
            .deserialize()
            .collect::<std::result::Result<Vec<ScoredPair>, _>>()?;
        let mut out = Self::new(
            pairs.iter().filter(|p| p.is_genuine).map(|p| p.score).collect(),
            pairs.iter().filter(|p| !p.is_genuine).map(|p| p.score).collect(),
        )?;
        out.pairs = pairs;
        Ok(out)
    }
}

/// Score every ordered `(clean_i, adv_j)` pair. Same speaker is genuine,
/// different speakers impostor: `N` genuine and `N(N-1)` impostor scores.
pub fn make_pairs(
    clean: &BTreeMap<String, Embedding>,
    adversarial: &BTreeMap<String, Embedding>,
) -> Result<ScoreSet> {
    let missing_adv: Vec<&str> = clean
        .keys()
        .filter(|k| !adversarial.contains_key(*k))
        .map(String::as_str)
        .collect();
    let missing_clean: Vec<&str> = adversarial
        .keys()
        .filter(|k| !clean.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing_adv.is_empty() || !missing_clean.is_empty() {
        return Err(Error::Data(format!(
            "speaker keys differ: missing adversarial {missing_adv:?}, missing clean {missing_clean:?}"
        )));
    }
    if clean.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 speakers to pair, have {}",
            clean.len()
        )));
    }
    let mut out = ScoreSet::default();
    for (ci, ce) in clean {
        for (ai, ae) in adversarial {
            let score = cosine_similarity(ce, ae)?;
            let is_genuine = ci == ai;
            if is_genuine {
                out.genuine.push(score);
            } else {
                out.impostor.push(score);
            }
            out.pairs.push(ScoredPair {
                clean_speaker: ci.clone(),
                adv_speaker: ai.clone(),
                score,
                is_genuine,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub mu_gen: f64,
    pub mu_imp: f64,
    pub var_gen: f64,
    pub var_imp: f64,
    pub d_prime: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var)
}

/// Discriminability `(mu_gen - mu_imp) / sqrt((var_gen + var_imp) / 2)` with
/// population variances. Zero pooled variance gives `±inf` when the means
/// differ and `0` when they coincide.
pub fn d_prime(s: &ScoreSet) -> Result<ScoreStats> {
    if s.genuine.len() < 2 || s.impostor.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "d' needs >= 2 scores per class, have {} genuine and {} impostor",
            s.genuine.len(),
            s.impostor.len()
        )));
    }
    let (mu_gen, var_gen) = mean_var(&s.genuine);
    let (mu_imp, var_imp) = mean_var(&s.impostor);
    let diff = mu_gen - mu_imp;
    let pooled = (0.5 * (var_gen + var_imp)).sqrt();
    let d_prime = if diff == 0.0 {
        0.0
    } else if pooled == 0.0 {
        f64::INFINITY.copysign(diff)
    } else {
        diff / pooled
    };
    Ok(ScoreStats {
        mu_gen,
        mu_imp,
        var_gen,
        var_imp,
        d_prime,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub fmr: f64,
    pub tmr: f64,
    pub threshold: f64,
}

fn fraction_at_or_above(sorted: &[f64], threshold: f64) -> f64 {
    let below = sorted.partition_point(|&s| s < threshold);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Candidate thresholds: every distinct observed score, then one step above
/// the maximum so that nothing is accepted.
fn threshold_grid(s: &ScoreSet) -> Vec<f64> {
    let mut grid = sorted(&[s.genuine.as_slice(), s.impostor.as_slice()].concat());
    grid.dedup();
    if let Some(&max) = grid.last() {
        grid.push(max.next_up());
    }
    grid
}

fn check_classes(s: &ScoreSet) -> Result<()> {
    if s.genuine.is_empty() || s.impostor.is_empty() {
        return Err(Error::DegenerateInput(
            "both genuine and impostor scores are required".into(),
        ));
    }
    Ok(())
}

/// True match rate at the smallest observed threshold whose false match rate
/// does not exceed `fmr_target`. The returned `fmr` is the achieved rate.
pub fn tmr_at_fmr(s: &ScoreSet, fmr_target: f64) -> Result<OperatingPoint> {
    check_classes(s)?;
    if !(fmr_target > 0.0 && fmr_target < 1.0) {
        return Err(Error::Contract(format!(
            "FMR target {fmr_target} outside (0, 1)"
        )));
    }
    let gen = sorted(&s.genuine);
    let imp = sorted(&s.impostor);
    let grid = threshold_grid(s);
    let threshold = grid
        .iter()
        .copied()
        .find(|&t| fraction_at_or_above(&imp, t) <= fmr_target)
        .expect("top of the grid accepts no impostors");
    Ok(OperatingPoint {
        fmr: fraction_at_or_above(&imp, threshold),
        tmr: fraction_at_or_above(&gen, threshold),
        threshold,
    })
}

/// One operating point per distinct observed score (ascending threshold),
/// ending with the all-reject point above the maximum.
pub fn roc_points(s: &ScoreSet) -> Result<Vec<OperatingPoint>> {
    check_classes(s)?;
    let gen = sorted(&s.genuine);
    let imp = sorted(&s.impostor);
    Ok(threshold_grid(s)
        .into_iter()
        .map(|t| OperatingPoint {
            fmr: fraction_at_or_above(&imp, t),
            tmr: fraction_at_or_above(&gen, t),
            threshold: t,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn set(g: &[f64], i: &[f64]) -> ScoreSet {
        ScoreSet::new(g.to_vec(), i.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = emb(&[1.0, 2.0, -0.5]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[0.0, 3.0])).unwrap(), 0.0);
        let b = emb(&[0.3, -1.0, 2.0]);
        let a5 = emb(&[5.0, 10.0, -2.5]);
        assert!((cosine_similarity(&a, &b).unwrap() - cosine_similarity(&a5, &b).unwrap()).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0, 0.0])),
            Err(Error::Contract(_))
        ));
    }

    fn keyed(n: usize, f: impl Fn(usize) -> Vec<f64>) -> BTreeMap<String, Embedding> {
        (0..n).map(|i| (format!("s{i:03}"), emb(&f(i)))).collect()
    }

    #[test]
    fn pairing_counts() {
        for n in [2usize, 3, 109] {
            let c = keyed(n, |i| vec![1.0, i as f64]);
            let a = keyed(n, |i| vec![i as f64, 1.0]);
            let s = make_pairs(&c, &a).unwrap();
            assert_eq!(s.genuine().len(), n);
            assert_eq!(s.impostor().len(), n * (n - 1));
            assert_eq!(s.len(), n * n);
            assert_eq!(s.pairs().len(), n * n);
        }
    }

    #[test]
    fn identical_embeddings_score_one() {
        let c = keyed(3, |_| vec![0.2, 0.4]);
        let s = make_pairs(&c, &c).unwrap();
        assert!(s.genuine().iter().chain(s.impostor()).all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn key_mismatch_names_missing_speakers() {
        let c = keyed(3, |_| vec![1.0, 0.0]);
        let mut a = c.clone();
        a.remove("s001");
        match make_pairs(&c, &a) {
            Err(Error::Data(m)) => assert!(m.contains("s001")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn d_prime_zero_variance_and_symmetry() {
        let s = set(&[0.9, 0.9], &[0.1, 0.1]);
        assert_eq!(d_prime(&s).unwrap().d_prime, f64::INFINITY);
        let s = set(&[0.1, 0.9], &[0.4, 0.6]);
        assert_eq!(d_prime(&s).unwrap().d_prime, 0.0);
        assert!(matches!(d_prime(&set(&[0.5], &[0.1, 0.2])), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn d_prime_uses_population_variance() {
        let st = d_prime(&set(&[1.0, 3.0], &[0.0, 0.0, 0.0, 4.0])).unwrap();
        assert_eq!(st.var_gen, 1.0);
        assert_eq!(st.var_imp, 3.0);
        assert!((st.d_prime - (2.0 - 1.0) / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn d_prime_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let g = Normal::new(0.8, 0.1).unwrap();
        let i = Normal::new(0.2, 0.1).unwrap();
        let s = ScoreSet::new(
            (0..100_000).map(|_| g.sample(&mut rng)).collect(),
            (0..100_000).map(|_| i.sample(&mut rng)).collect(),
        )
        .unwrap();
        let d = d_prime(&s).unwrap().d_prime;
        assert!((d - 6.0).abs() <= 0.05, "{d}");
    }

    #[test]
    fn tmr_hand_enumeration() {
        let s = set(
            &[0.9, 0.8, 0.7],
            &[0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005],
        );
        let op = tmr_at_fmr(&s, 0.05).unwrap();
        assert_eq!(op.threshold, 0.7);
        assert_eq!(op.tmr, 1.0);
        assert_eq!(op.fmr, 0.0);
        // 10% allows exactly one impostor at or above the threshold
        let op = tmr_at_fmr(&s, 0.1).unwrap();
        assert_eq!(op.threshold, 0.6);
        assert_eq!(op.fmr, 0.1);
    }

    #[test]
    fn tmr_perfect_separation_and_shared_multiset() {
        let s = set(&[2.0, 3.0], &[0.0, 1.0]);
        for f in [0.001, 0.3, 0.9] {
            assert_eq!(tmr_at_fmr(&s, f).unwrap().tmr, 1.0);
        }
        let shared: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let s = set(&shared, &shared);
        for f in [0.001, 0.01, 0.1, 0.25] {
            let op = tmr_at_fmr(&s, f).unwrap();
            assert_eq!(op.tmr, op.fmr);
            assert!((op.tmr - f).abs() <= 1.0 / 1000.0);
        }
    }

    #[test]
    fn tmr_with_impostor_at_the_top() {
        let s = set(&[0.1, 0.2], &[0.3, 0.0]);
        let op = tmr_at_fmr(&s, 0.001).unwrap();
        assert!(op.threshold > 0.3);
        assert_eq!((op.tmr, op.fmr), (0.0, 0.0));
    }

    #[test]
    fn roc_examples() {
        let pts = roc_points(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap();
        assert_eq!((pts[0].fmr, pts[0].tmr), (1.0, 1.0));
        assert!(pts.iter().any(|p| p.fmr == 0.0 && p.tmr == 1.0));
        assert_eq!((pts.last().unwrap().fmr, pts.last().unwrap().tmr), (0.0, 0.0));
        let single = roc_points(&set(&[0.5, 0.5], &[0.5])).unwrap();
        let coords: Vec<(f64, f64)> = single.iter().map(|p| (p.fmr, p.tmr)).collect();
        assert_eq!(coords, vec![(1.0, 1.0), (0.0, 0.0)]);
        let shared: Vec<f64> = (0..50).map(f64::from).collect();
        for p in roc_points(&set(&shared, &shared)).unwrap() {
            assert_eq!(p.fmr, p.tmr);
        }
    }

    #[test]
    fn score_csv_round_trip() {
        let c = keyed(3, |i| vec![1.0, i as f64]);
        let a = keyed(3, |i| vec![i as f64 + 0.5, 1.0]);
        let s = make_pairs(&c, &a).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        s.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("clean_speaker,adv_speaker,score,is_genuine\n"));
        assert_eq!(ScoreSet::read_csv(&p).unwrap(), s);
    }

    fn scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-1.0f64..1.0, 2..40),
            prop::collection::vec(-1.0f64..1.0, 2..40),
        )
    }

    proptest! {
        #[test]
        fn d_prime_affine_invariance((g, i) in scores(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let s = set(&g, &i);
            let base = d_prime(&s).unwrap().d_prime;
            let mapped = d_prime(&s.map(|x| a * x + b).unwrap()).unwrap().d_prime;
            prop_assume!(base.is_finite());
            prop_assert!((base - mapped).abs() < 1e-9 * base.abs().max(1.0));
        }

        #[test]
        fn tmr_rank_invariance((g, i) in scores(), f in 0.001f64..0.5) {
            let s = set(&g, &i);
            let base = tmr_at_fmr(&s, f).unwrap();
            let mapped = tmr_at_fmr(&s.map(|x| (3.0 * x).exp() + x).unwrap(), f).unwrap();
            prop_assert_eq!(base.tmr, mapped.tmr);
            prop_assert_eq!(base.fmr, mapped.fmr);
        }

        #[test]
        fn roc_monotone((g, i) in scores()) {
            let pts = roc_points(&set(&g, &i)).unwrap();
            for w in pts.windows(2) {
                prop_assert!(w[1].threshold > w[0].threshold);
                prop_assert!(w[1].fmr <= w[0].fmr && w[1].tmr <= w[0].tmr);
            }
        }
    }
}
