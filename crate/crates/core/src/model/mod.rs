//! Desk-scale stand-ins for the attacked recognizer and the speaker
//! embedding extractors, with exact hand-written gradients.

mod acoustic;
mod encoder;
mod io;
mod speaker;
mod train;

pub use acoustic::{AcousticModel, AsrPass};
pub use encoder::{Encoder, EncoderCache};
pub use io::{reconcile_frontend, FrontendOverrides, ModelEcho, FORMAT_VERSION};
pub use speaker::{Embedding, SidPass, SpeakerModel};
pub use train::{train_asr, train_sid, write_curve_csv, AsrItem, EpochRecord, SidItem, TrainConfig};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::{greedy_decode, Transcript, Vocabulary};
    use crate::features::FrontendConfig;
    use crate::matrix::Matrix;
    use crate::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fe(n_mels: usize) -> FrontendConfig {
        FrontendConfig {
            n_mels,
            ..FrontendConfig::default()
        }
    }

    fn noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    fn overfit_item() -> (Vocabulary, AsrItem) {
        let vocab = Vocabulary::new(['a', 'b', 'c']).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let item = AsrItem {
            id: "only".into(),
            features: noise(&mut rng, 12, 6),
            transcript: Transcript::new("abca", &vocab).unwrap(),
        };
        (vocab, item)
    }

    #[test]
    fn overfits_a_single_utterance() {
        let (vocab, item) = overfit_item();
        let cfg = TrainConfig {
            epochs: 500,
            hidden: 16,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, curve) = train_asr(&[item.clone()], &vocab, &fe(6), &cfg).unwrap();
        let first_small = curve.iter().position(|r| r.loss < 0.1).expect("reaches 0.1");
        for w in curve[..=first_small].windows(51) {
            assert!(w[50].loss < w[0].loss, "no progress over epochs {}..{}", w[0].epoch, w[50].epoch);
        }
        let pass = model.forward(&item.features).unwrap();
        assert_eq!(greedy_decode(&pass.logits, &vocab).unwrap().text(), "abca");
    }

    #[test]
    fn asr_training_is_deterministic() {
        let (vocab, item) = overfit_item();
        let cfg = TrainConfig {
            epochs: 5,
            hidden: 8,
            seed: 4,
            ..TrainConfig::default()
        };
        let a = train_asr(&[item.clone()], &vocab, &fe(6), &cfg).unwrap();
        let b = train_asr(&[item], &vocab, &fe(6), &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn asr_data_errors_name_the_item() {
        let (vocab, mut item) = overfit_item();
        let cfg = TrainConfig::default();
        assert!(matches!(train_asr(&[], &vocab, &fe(6), &cfg), Err(Error::Data(_))));
        item.features = Matrix::zeros(3, 6);
        match train_asr(&[item], &vocab, &fe(6), &cfg) {
            Err(Error::Data(m)) => assert!(m.contains("only")),
            other => panic!("{other:?}"),
        }
    }

    fn two_speaker_items(rng: &mut ChaCha8Rng, per: usize) -> Vec<SidItem> {
        let mut items = Vec::new();
        for (s, band) in [("low", 0..4), ("high", 4..8)] {
            for u in 0..per {
                let mut f = noise(rng, 10, 8);
                for r in 0..10 {
                    for c in band.clone() {
                        f[(r, c)] += 3.0;
                    }
                }
                items.push(SidItem {
                    id: format!("{s}_{u}"),
                    features: f,
                    speaker: s.into(),
                });
            }
        }
        items
    }

    #[test]
    fn separable_speakers_are_classified_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let train = two_speaker_items(&mut rng, 4);
        let held_out = two_speaker_items(&mut rng, 5);
        let cfg = TrainConfig {
            epochs: 30,
            hidden: 8,
            embed_dim: 4,
            seed: 2,
            ..TrainConfig::default()
        };
        let (model, curve) = train_sid(&train, &fe(8), &cfg).unwrap();
        assert!(curve.last().unwrap().accuracy.is_some());
        for it in &held_out {
            let k = model.classify(&it.features).unwrap();
            assert_eq!(model.speakers()[k], it.speaker);
        }
        let again = train_sid(&train, &fe(8), &cfg).unwrap().0;
        assert_eq!(again, model);
    }

    #[test]
    fn sid_needs_two_speakers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let items: Vec<SidItem> = two_speaker_items(&mut rng, 3)
            .into_iter()
            .filter(|i| i.speaker == "low")
            .collect();
        assert!(matches!(
            train_sid(&items, &fe(8), &TrainConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn curve_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let curve = [EpochRecord {
            epoch: 0,
            loss: 1.5,
            accuracy: Some(0.25),
        }];
        write_curve_csv(&curve, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "epoch,loss,accuracy\n0,1.5,0.25\n");
    }
}
