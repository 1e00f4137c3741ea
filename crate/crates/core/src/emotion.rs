//! Per-face emotion scores and their mapping onto the three affect classes.
//!
//! A face carries scores for the seven standard emotions. Two distinct
//! reductions to the (negative, neutral, positive) space coexist and are
//! deliberately kept separate:
//!
//! - [`to_affect_triple`] feeds heatmap rendering: negative is the mean of
//!   anger/disgust/fear/sad, surprise is dropped entirely.
//! - [`baseline_categorize`] feeds the averaging baseline: the argmax emotion
//!   decides the class, and surprise counts as negative there.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three group-affect classes. Index order is fixed and used for class
/// indices, confusion matrices and tie-breaking everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Neutral,
    Negative,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Positive, Label::Neutral, Label::Negative];

    pub fn index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Neutral => 1,
            Label::Negative => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "Positive",
            Label::Neutral => "Neutral",
            Label::Negative => "Negative",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Label> {
        match s {
            "Positive" => Ok(Label::Positive),
            "Neutral" => Ok(Label::Neutral),
            "Negative" => Ok(Label::Negative),
            other => Err(Error::InvalidArgument(format!(
                "unknown label `{other}` (expected Positive, Neutral or Negative)"
            ))),
        }
    }
}

/// The seven emotions, in the fixed order used by score vectors and by the
/// argmax tie-break (first maximal index wins).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Emotion {
    Anger,
    Disgust,
    Fear,
    Happy,
    Neutral,
    Sad,
    Surprise,
}

impl Emotion {
    pub const ALL: [Emotion; 7] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Happy,
        Emotion::Neutral,
        Emotion::Sad,
        Emotion::Surprise,
    ];

    pub fn index(self) -> usize {
        Emotion::ALL.iter().position(|&e| e == self).unwrap()
    }

    /// Class the emotion falls into when a single emotion must decide the
    /// label. Surprise maps to negative here.
    pub fn category(self) -> Label {
        match self {
            Emotion::Happy => Label::Positive,
            Emotion::Neutral => Label::Neutral,
            Emotion::Anger | Emotion::Disgust | Emotion::Fear | Emotion::Sad | Emotion::Surprise => {
                Label::Negative
            }
        }
    }
}

/// Scores for the seven emotions, each in [0, 1]. Scores are independent
/// model outputs and are not required to sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scores7([f64; 7]);

impl Scores7 {
    /// Order: anger, disgust, fear, happy, neutral, sad, surprise.
    pub fn new(values: [f64; 7]) -> Result<Scores7> {
        for (i, &v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "score for {:?} is {v}, outside [0, 1]",
                    Emotion::ALL[i]
                )));
            }
        }
        Ok(Scores7(values))
    }

    pub fn values(&self) -> &[f64; 7] {
        &self.0
    }

    pub fn get(&self, e: Emotion) -> f64 {
        self.0[e.index()]
    }

    pub fn anger(&self) -> f64 {
        self.0[0]
    }
    pub fn disgust(&self) -> f64 {
        self.0[1]
    }
    pub fn fear(&self) -> f64 {
        self.0[2]
    }
    pub fn happy(&self) -> f64 {
        self.0[3]
    }
    pub fn neutral(&self) -> f64 {
        self.0[4]
    }
    pub fn sad(&self) -> f64 {
        self.0[5]
    }
    pub fn surprise(&self) -> f64 {
        self.0[6]
    }
}

/// Per-face intensity of each affect class, components in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffectTriple {
    pub negative: f64,
    pub neutral: f64,
    pub positive: f64,
}

/// Componentwise arithmetic mean over ensemble members.
///
/// Errors on an empty list. Results are clamped to [0, 1] to absorb the last
/// ulp of summation rounding.
pub fn average_ensemble(member_scores: &[Scores7]) -> Result<Scores7> {
    if member_scores.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot average an empty ensemble".into(),
        ));
    }
    let n = member_scores.len() as f64;
    let mut mean = [0.0f64; 7];
    for s in member_scores {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m = (*m / n).clamp(0.0, 1.0);
    }
    Ok(Scores7(mean))
}

/// Maps seven scores onto the three affect intensities used as kernel maxima:
/// negative = mean of anger, disgust, fear and sad; neutral and positive are
/// the neutral and happy scores. Surprise is ignored.
pub fn to_affect_triple(s: &Scores7) -> AffectTriple {
    AffectTriple {
        negative: (s.anger() + s.disgust() + s.fear() + s.sad()) / 4.0,
        neutral: s.neutral(),
        positive: s.happy(),
    }
}

/// Class of the argmax emotion. Surprise counts as negative. Exact ties go to
/// the first maximal index in the fixed emotion order.
pub fn baseline_categorize(s: &Scores7) -> Label {
    let mut best = 0;
    for (i, &v) in s.values().iter().enumerate() {
        if v > s.values()[best] {
            best = i;
        }
    }
    Emotion::ALL[best].category()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s7(values: [f64; 7]) -> Scores7 {
        Scores7::new(values).unwrap()
    }

    #[test]
    fn average_of_single_member_is_identity() {
        let s = s7([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        assert_eq!(average_ensemble(&[s]).unwrap(), s);
    }

    #[test]
    fn average_of_zeros_and_ones_is_half() {
        let lo = s7([0.0; 7]);
        let hi = s7([1.0; 7]);
        let mean = average_ensemble(&[lo, hi]).unwrap();
        for &v in mean.values() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn average_matches_independent_summation() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(11, 0);
        let members: Vec<Scores7> = (0..5)
            .map(|_| {
                let mut v = [0.0; 7];
                for x in v.iter_mut() {
                    *x = rng.gen_range(0.0..=1.0);
                }
                s7(v)
            })
            .collect();
        let mean = average_ensemble(&members).unwrap();
        // Oracle: accumulate one component at a time in reverse member order.
        for i in 0..7 {
            let mut acc = 0.0;
            for m in members.iter().rev() {
                acc += m.values()[i];
            }
            let expected = acc / members.len() as f64;
            assert!((mean.values()[i] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn average_of_empty_list_errors() {
        assert!(average_ensemble(&[]).is_err());
    }

    #[test]
    fn affect_triple_of_zeros_is_zero() {
        let t = to_affect_triple(&s7([0.0; 7]));
        assert_eq!((t.negative, t.neutral, t.positive), (0.0, 0.0, 0.0));
    }

    #[test]
    fn affect_triple_anger_only() {
        let t = to_affect_triple(&s7([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(t.negative, 0.25);
        assert_eq!(t.neutral, 0.0);
        assert_eq!(t.positive, 0.0);
    }

    #[test]
    fn affect_triple_mixed_scores_and_surprise_has_no_effect() {
        let t = to_affect_triple(&s7([0.1, 0.1, 0.1, 0.8, 0.3, 0.1, 0.9]));
        assert!((t.negative - 0.1).abs() < 1e-15);
        assert_eq!(t.neutral, 0.3);
        assert_eq!(t.positive, 0.8);
    }

    #[test]
    fn categorize_happy_max_is_positive() {
        let s = s7([0.1, 0.0, 0.0, 0.9, 0.2, 0.1, 0.3]);
        assert_eq!(baseline_categorize(&s), Label::Positive);
    }

    #[test]
    fn categorize_surprise_max_is_negative() {
        let s = s7([0.1, 0.0, 0.0, 0.2, 0.2, 0.1, 0.9]);
        assert_eq!(baseline_categorize(&s), Label::Negative);
    }

    #[test]
    fn categorize_tie_happy_neutral_goes_to_positive() {
        // Happy (index 3) precedes Neutral (index 4); first maximal index wins.
        let s = s7([0.1, 0.0, 0.0, 0.8, 0.8, 0.1, 0.3]);
        assert_eq!(baseline_categorize(&s), Label::Positive);
    }

    #[test]
    fn label_string_round_trip() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
        }
        assert!("Happy".parse::<Label>().is_err());
    }

    #[test]
    fn scores_outside_unit_interval_rejected() {
        assert!(Scores7::new([1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(Scores7::new([0.0, -0.1, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(Scores7::new([0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    fn arb_scores() -> impl Strategy<Value = Scores7> {
        proptest::array::uniform7(0.0f64..=1.0).prop_map(|v| Scores7::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn average_is_permutation_invariant(members in proptest::collection::vec(arb_scores(), 1..6)) {
            let mut reversed = members.clone();
            reversed.reverse();
            let a = average_ensemble(&members).unwrap();
            let b = average_ensemble(&reversed).unwrap();
            for i in 0..7 {
                prop_assert!((a.values()[i] - b.values()[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn triple_negative_is_monotone_in_negative_emotions(s in arb_scores(), idx in 0usize..4, bump in 0.0f64..=1.0) {
            // Indices 0,1,2,5 are anger, disgust, fear, sad.
            let map = [0usize, 1, 2, 5];
            let mut v = *s.values();
            let i = map[idx];
            v[i] = (v[i] + bump).min(1.0);
            let before = to_affect_triple(&s);
            let after = to_affect_triple(&Scores7::new(v).unwrap());
            prop_assert!(after.negative >= before.negative - 1e-15);
        }

        #[test]
        fn triple_ignores_surprise(s in arb_scores(), surprise in 0.0f64..=1.0) {
            let mut v = *s.values();
            v[6] = surprise;
            let a = to_affect_triple(&s);
            let b = to_affect_triple(&Scores7::new(v).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn categorize_invariant_under_uniform_shift(s in arb_scores(), eps in 0.0001f64..0.2) {
            let headroom = s.values().iter().cloned().fold(0.0f64, f64::max);
            prop_assume!(headroom + eps <= 1.0); // no clamping
            let mut v = *s.values();
            for x in v.iter_mut() { *x += eps; }
            prop_assert_eq!(baseline_categorize(&s), baseline_categorize(&Scores7::new(v).unwrap()));
        }
    }
}
