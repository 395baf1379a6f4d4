use rand::seq::SliceRandom;
use rand::Rng;

use super::{stream_rng, BackendError, Response, ResponseBackend};
use crate::knowledge::{Question, StudentProfile};

pub const RANDOM_ID: &str = "random";

/// Bernoulli(`p`) correctness; wrong answers are uniform over distractors.
pub fn random_answer<R: Rng + ?Sized>(profile: &StudentProfile, question: &Question, p: f64, rng: &mut R) -> Response {
    debug_assert!((0.0..=1.0).contains(&p));
    let chosen = if rng.gen::<f64>() < p {
        question.correct_index
    } else {
        let distractors: Vec<usize> = question.distractors().map(|(i, _)| i).collect();
        *distractors.choose(rng).expect("question has at least one distractor")
    };
    Response::new(profile, question, chosen, "", RANDOM_ID).expect("index drawn from question options")
}

#[derive(Debug, Clone)]
pub struct RandomBackend {
    p_correct: f64,
    seed: u64,
}

impl RandomBackend {
    pub fn new(p_correct: f64, seed: u64) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&p_correct) {
            return Err(BackendError::Config(format!("p_correct {p_correct} is outside [0, 1]")));
        }
        Ok(Self { p_correct, seed })
    }
}

impl ResponseBackend for RandomBackend {
    fn id(&self) -> &str {
        RANDOM_ID
    }

    fn answer(&self, profile: &StudentProfile, question: &Question) -> Result<Response, BackendError> {
        let mut rng = stream_rng(self.seed, &profile.id, &question.id);
        Ok(random_answer(profile, question, self.p_correct, &mut rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::collect_responses;
    use crate::backend::tests::{profile, q};

    fn cohort() -> (Vec<StudentProfile>, Vec<Question>) {
        let profiles = (1..=45).map(|i| profile(&format!("R{i}"), &[], &[])).collect();
        let questions = (1..=20)
            .map(|i| q(&format!("Q{i}"), &["H1", "H2", "H3", "H4"], i % 4))
            .collect();
        (profiles, questions)
    }

    fn mean_score(p: f64, seed: u64) -> f64 {
        let (profiles, questions) = cohort();
        let backend = RandomBackend::new(p, seed).unwrap();
        let log = collect_responses(&backend, &profiles, &questions, 2);
        log.iter().filter(|r| r.response().unwrap().correct).count() as f64 / log.len() as f64
    }

    #[test]
    fn grand_mean_near_p() {
        let m = mean_score(0.7, 3);
        assert!((m - 0.7).abs() <= 0.04, "{m}");
    }

    #[test]
    fn degenerate_probabilities() {
        assert_eq!(mean_score(1.0, 1), 1.0);
        assert_eq!(mean_score(0.0, 1), 0.0);
        assert!(RandomBackend::new(-0.1, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let (profiles, questions) = cohort();
        let backend = RandomBackend::new(0.7, 9).unwrap();
        assert_eq!(
            collect_responses(&backend, &profiles, &questions, 1),
            collect_responses(&backend, &profiles, &questions, 3)
        );
    }
}
