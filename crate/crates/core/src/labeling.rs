//! Correctness labels: exact match for multiple choice, Rouge-L for short form.

use crate::dataset::{DatasetBundle, LabelKind, TaskType};
use crate::error::{Error, Result};
use crate::par::*;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    pub values: Vec<f64>,
    pub kind: LabelKind,
}

/// First standalone letter in `A..=D` after uppercasing.
///
/// "Standalone" means not adjacent to another alphanumeric character, so the
/// `A` inside `ANSWER` is ignored while `B.` and `(C)` are recognised.
pub fn choice_letter(text: &str) -> Option<char> {
    let chars: Vec<char> = text.chars().flat_map(char::to_uppercase).collect();
    (0..chars.len()).find_map(|i| {
        let c = chars[i];
        let lone = (i == 0 || !chars[i - 1].is_alphanumeric())
            && chars.get(i + 1).is_none_or(|n| !n.is_alphanumeric());
        (('A'..='D').contains(&c) && lone).then_some(c)
    })
}

pub fn exact_match_label(answer: &str, gold: &str) -> f64 {
    match (choice_letter(answer), choice_letter(gold)) {
        (Some(a), Some(g)) if a == g => 1.0,
        _ => 0.0,
    }
}

/// Lowercase, map non-alphanumerics to spaces, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Length of the longest common subsequence, two-row DP.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Rouge-L F-measure (beta = 1) over word tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

pub fn rouge_l_tokens(cand: &[String], refr: &[String]) -> f64 {
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(cand, refr);
    if lcs == 0 {
        return 0.0;
    }
    // 2PR/(P+R) with P = lcs/|c|, R = lcs/|r| reduces to 2*lcs/(|c|+|r|).
    (2 * lcs) as f64 / (cand.len() + refr.len()) as f64
}

pub fn label_bundle(bundle: &DatasetBundle) -> Result<LabelVector> {
    let task = bundle.task_type();
    let values = bundle
        .signals
        .par_iter()
        .map(|s| {
            if s.gold.is_empty() {
                return Err(Error::Validation(format!(
                    "sample {:?}: empty gold list",
                    s.id
                )));
            }
            Ok(match task {
                TaskType::MultipleChoice => exact_match_label(&s.answer, &s.gold[0]),
                TaskType::ShortForm => {
                    let cand = tokenize(&s.answer);
                    s.gold
                        .iter()
                        .map(|g| rouge_l_tokens(&cand, &tokenize(g)))
                        .fold(0.0, f64::max)
                }
            })
        })
        .collect::<Vec<Result<f64>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelVector {
        values,
        kind: match task {
            TaskType::MultipleChoice => LabelKind::ExactMatch,
            TaskType::ShortForm => LabelKind::RougeL,
        },
    })
}

/// Bundle labels if present on disk, otherwise computed from the signals.
pub fn labels_for(bundle: &DatasetBundle) -> Result<Vec<f64>> {
    match &bundle.labels {
        Some(v) => Ok(v.clone()),
        None => Ok(label_bundle(bundle)?.values),
    }
}

/// `1` iff value >= threshold.
pub fn binarize(values: &[f64], threshold: f64) -> Vec<f64> {
    values
        .iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::{manifest, mc_signal, sf_signal};
    use proptest::prelude::*;

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match_label("B", "B"), 1.0);
        assert_eq!(exact_match_label("B.", "b"), 1.0);
        assert_eq!(exact_match_label("The answer is C", "D"), 0.0);
        assert_eq!(exact_match_label("The answer is C", "C"), 1.0);
        assert_eq!(exact_match_label("(d)", "D"), 1.0);
        assert_eq!(exact_match_label("none", "A"), 0.0);
        assert_eq!(exact_match_label("", ""), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("the cat sat", "the cat sat"), 1.0);
        assert_eq!(rouge_l("a b c", "d e f"), 0.0);
        assert!(
            (rouge_l("the cat sat on the mat", "the cat lay on the mat") - 5.0 / 6.0).abs() < 1e-15
        );
        assert_eq!(rouge_l("", "x"), 0.0);
        assert_eq!(rouge_l("?!", "?!"), 0.0);
        assert_eq!(rouge_l("Paris.", "paris"), 1.0);
    }

    #[test]
    fn label_bundle_examples() {
        let b = DatasetBundle::new(
            manifest(TaskType::MultipleChoice, 2, 1, vec![15]),
            vec![0.0; 2],
            vec![
                mc_signal("0", [0.0; 4], "A", "A"),
                mc_signal("1", [0.0; 4], "C.", "c"),
            ],
            None,
        )
        .unwrap();
        let l = label_bundle(&b).unwrap();
        assert_eq!(l.values, vec![1.0, 1.0]);
        assert_eq!(l.kind, LabelKind::ExactMatch);

        let b = DatasetBundle::new(
            manifest(TaskType::ShortForm, 2, 1, vec![15]),
            vec![0.0; 2],
            vec![
                sf_signal("0", vec![-0.1], vec![0.1], "A B", &["X Y", "A B"]),
                sf_signal("1", vec![-0.1], vec![0.1], "", &["A B"]),
            ],
            None,
        )
        .unwrap();
        let l = label_bundle(&b).unwrap();
        assert_eq!(l.values, vec![1.0, 0.0]);
        assert_eq!(l.kind, LabelKind::RougeL);
    }

    #[test]
    fn empty_gold_rejected() {
        let mut s = sf_signal("lonely", vec![-0.1], vec![0.1], "a", &[]);
        s.gold.clear();
        let b = DatasetBundle::new(
            manifest(TaskType::ShortForm, 1, 1, vec![15]),
            vec![0.0],
            vec![s],
            None,
        )
        .unwrap();
        let err = label_bundle(&b).unwrap_err();
        assert!(err.to_string().contains("lonely"));
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.83, 0.2], 0.5), vec![1.0, 0.0]);
        assert_eq!(binarize(&[0.5], 0.5), vec![1.0]);
        let em = vec![1.0, 0.0, 1.0];
        assert_eq!(binarize(&em, 0.5), em);
    }

    fn words() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop::sample::select(vec!["a", "b", "c", "d", "e", "the", "x1"]),
            0..12,
        )
        .prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn rouge_symmetric_and_bounded(a in words(), b in words()) {
            let f = rouge_l(&a, &b);
            prop_assert_eq!(f, rouge_l(&b, &a));
            prop_assert!((0.0..=1.0).contains(&f));
            let (ta, tb) = (tokenize(&a), tokenize(&b));
            if !ta.is_empty() && !tb.is_empty() {
                let lcs = lcs_len(&ta, &tb) as f64;
                prop_assert!(f <= (lcs / ta.len().max(tb.len()) as f64 * 2.0).min(1.0) + 1e-15);
            }
        }

        #[test]
        fn rouge_self_is_one(a in words()) {
            if !tokenize(&a).is_empty() {
                prop_assert_eq!(rouge_l(&a, &a), 1.0);
            }
        }
    }
}
