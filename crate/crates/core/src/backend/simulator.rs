use rand::seq::SliceRandom;
use rand::Rng;

use super::calibration::{CalibrationKey, CalibrationTable};
use super::{confused_option_indices, stream_rng, BackendError, Response, ResponseBackend};
use crate::knowledge::{classify_condition, focused_condition, Question, StudentProfile};

pub const SIMULATOR_ID: &str = "sim";

/// Draw one calibrated answer.
///
/// A wrong answer lands on the confused rule with the cell's
/// `p_pick_confused_when_wrong`, otherwise uniformly on the remaining
/// distractors. When every distractor is a confused rule the pick is forced.
pub fn simulate_answer<R: Rng + ?Sized>(
    profile: &StudentProfile,
    question: &Question,
    calibration: &CalibrationTable,
    rng: &mut R,
) -> Response {
    let condition = classify_condition(profile, question);
    let key = CalibrationKey::new(
        condition.answer_status,
        condition.confusion_in_distractors,
        focused_condition(profile, question),
    );
    let cell = calibration.cell(key);

    let chosen = if rng.gen::<f64>() < cell.p_correct {
        question.correct_index
    } else {
        let distractors: Vec<usize> = question.distractors().map(|(i, _)| i).collect();
        let confused = if condition.confusion_in_distractors {
            confused_option_indices(profile, question, condition)
        } else {
            Vec::new()
        };
        match cell.p_pick_confused_when_wrong {
            Some(p_pick) if !confused.is_empty() => {
                let others: Vec<usize> = distractors.iter().copied().filter(|i| !confused.contains(i)).collect();
                if others.is_empty() || rng.gen::<f64>() < p_pick {
                    *confused.choose(rng).expect("non-empty")
                } else {
                    *others.choose(rng).expect("non-empty")
                }
            }
            _ => *distractors.choose(rng).expect("question has at least one distractor"),
        }
    };
    Response::new(profile, question, chosen, "", SIMULATOR_ID).expect("index drawn from question options")
}

#[derive(Debug, Clone)]
pub struct SimulatorBackend {
    calibration: CalibrationTable,
    seed: u64,
}

impl SimulatorBackend {
    pub fn new(calibration: CalibrationTable, seed: u64) -> Self {
        Self { calibration, seed }
    }
}

impl ResponseBackend for SimulatorBackend {
    fn id(&self) -> &str {
        SIMULATOR_ID
    }

    fn answer(&self, profile: &StudentProfile, question: &Question) -> Result<Response, BackendError> {
        let mut rng = stream_rng(self.seed, &profile.id, &question.id);
        Ok(simulate_answer(profile, question, &self.calibration, &mut rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::tests::{profile, q};
    use crate::knowledge::AnswerStatus;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rates(p: &StudentProfile, question: &Question, n: usize) -> (f64, f64) {
        let table = CalibrationTable::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut correct, mut wrong, mut picked) = (0usize, 0usize, 0usize);
        for _ in 0..n {
            let r = simulate_answer(p, question, &table, &mut rng);
            assert_eq!(r.correct, r.chosen_index == question.correct_index);
            if r.correct {
                correct += 1;
            } else {
                wrong += 1;
                picked += r.picked_confused as usize;
            }
        }
        (correct as f64 / n as f64, picked as f64 / wrong.max(1) as f64)
    }

    #[test]
    fn confused_with_partner_present() {
        let p = profile("s", &[], &[("H3", "H7", false)]);
        let question = q("Q", &["H3", "H7", "H1", "H2"], 0);
        assert_eq!(classify_condition(&p, &question).answer_status, AnswerStatus::Confused);
        let (acc, pick) = rates(&p, &question, 20_000);
        assert!((acc - 0.110).abs() < 0.015, "{acc}");
        assert!((pick - 0.822).abs() < 0.02, "{pick}");
    }

    #[test]
    fn focused_confused_with_partner_present() {
        let p = profile("s", &[], &[("H3", "H7", true)]);
        let question = q("Q", &["H3", "H7", "H1", "H2"], 0);
        let (acc, pick) = rates(&p, &question, 20_000);
        assert!((acc - 0.409).abs() < 0.015, "{acc}");
        assert_eq!(pick, 1.0);
    }

    #[test]
    fn unknown_without_confusion() {
        let p = profile("s", &["H2"], &[("H3", "H7", false)]);
        let (acc, _) = rates(&p, &q("Q", &["H4", "H1", "H2", "H5"], 0), 20_000);
        assert!((acc - 0.521).abs() < 0.015, "{acc}");
    }

    #[test]
    fn all_distractors_confused_forces_pick() {
        let p = profile("s", &["H1"], &[("H3", "H7", false)]);
        let (_, pick) = rates(&p, &q("Q", &["H1", "H3", "H7"], 0), 2_000);
        assert_eq!(pick, 1.0);
    }

    #[test]
    fn backend_is_order_independent() {
        let backend = SimulatorBackend::new(CalibrationTable::default(), 5);
        let p = profile("GS1", &["H1"], &[]);
        let question = q("Q1", &["H1", "H2", "H3"], 0);
        let a = backend.answer(&p, &question).unwrap();
        let _ = backend.answer(&profile("GS2", &[], &[]), &question).unwrap();
        assert_eq!(backend.answer(&p, &question).unwrap(), a);
    }
}
