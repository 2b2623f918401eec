//! Share of hallucinated objects among "high" co-occurrence, uncertainty and
//! position scores. "High" means at least the corpus mean for CoScore and
//! UnScore, and at least `eta` for PoScore.

use serde::{Deserialize, Serialize};

use super::CorpusScores;

/// Ratios in `[0, 1]`; `None` when the denominator is zero (undefined).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub c_ratio: Option<f64>,
    pub u_ratio: Option<f64>,
    pub s_ratio: Option<f64>,
    pub co_score_mean: Option<f64>,
    pub un_score_mean: Option<f64>,
    pub eta: f64,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// `hits / selected` over items passing `threshold`.
fn ratio<I: Iterator<Item = (bool, f64)>>(items: I, threshold: f64) -> Option<f64> {
    let (mut hits, mut selected) = (0usize, 0usize);
    for (hallucinated, v) in items {
        if v >= threshold {
            selected += 1;
            hits += usize::from(hallucinated);
        }
    }
    (selected > 0).then(|| hits as f64 / selected as f64)
}

pub fn ratio_stats(scores: &CorpusScores, eta: f64) -> RatioStats {
    let co: Vec<f64> = scores.descriptions.iter().map(|d| d.co_score).collect();
    let un: Vec<(bool, f64)> = scores
        .mentions
        .iter()
        .filter_map(|m| m.un_score.map(|u| (m.is_hallucinated(), u)))
        .collect();
    let un_values: Vec<f64> = un.iter().map(|p| p.1).collect();

    let co_score_mean = mean(&co);
    let un_score_mean = mean(&un_values);
    RatioStats {
        c_ratio: co_score_mean
            .and_then(|m| ratio(scores.descriptions.iter().map(|d| (d.hallucinatory, d.co_score)), m)),
        u_ratio: un_score_mean.and_then(|m| ratio(un.iter().copied(), m)),
        s_ratio: ratio(scores.mentions.iter().map(|m| (m.is_hallucinated(), m.po_score)), eta),
        co_score_mean,
        un_score_mean,
        eta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chair::ObjectLabel;
    use crate::factors::{DescriptionScore, MentionScore};

    fn mention(un: Option<f64>, po: f64, hallucinated: bool) -> MentionScore {
        MentionScore {
            image_id: "x".into(),
            canonical: "o".into(),
            token_index: 1,
            label: if hallucinated {
                ObjectLabel::Hallucinated
            } else {
                ObjectLabel::Real
            },
            un_score: un,
            po_score: po,
        }
    }

    fn scores(mentions: Vec<MentionScore>, descs: &[(bool, f64)]) -> CorpusScores {
        CorpusScores {
            descriptions: descs
                .iter()
                .map(|&(h, c)| DescriptionScore {
                    image_id: "x".into(),
                    hallucinatory: h,
                    co_score: c,
                })
                .collect(),
            mentions,
        }
    }

    #[test]
    fn four_mention_fixture() {
        let m = vec![
            mention(Some(0.1), 0.2, false),
            mention(Some(0.2), 0.4, false),
            mention(Some(1.0), 0.6, false),
            mention(Some(1.7), 0.9, true),
        ];
        let r = ratio_stats(&scores(m, &[(true, 0.5)]), 0.8);
        assert_eq!(r.un_score_mean, Some(0.75));
        assert_eq!(r.u_ratio, Some(0.5));
        assert_eq!(r.s_ratio, Some(1.0));
        assert_eq!(r.c_ratio, Some(1.0));
    }

    #[test]
    fn no_hallucinations_gives_zero_not_undefined() {
        let m = vec![mention(Some(0.3), 0.5, false), mention(Some(0.9), 1.0, false)];
        let r = ratio_stats(&scores(m, &[(false, 0.0), (false, 0.0)]), 0.8);
        assert_eq!((r.c_ratio, r.u_ratio, r.s_ratio), (Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn empty_denominators_are_undefined() {
        let m = vec![mention(None, 0.2, true)];
        let r = ratio_stats(&scores(m, &[]), 0.9);
        assert_eq!((r.c_ratio, r.u_ratio, r.s_ratio), (None, None, None));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"u_ratio\":null"));
    }

    #[test]
    fn all_high_uncertainty_hallucinated() {
        let m = vec![
            mention(Some(0.1), 0.1, false),
            mention(Some(2.0), 0.1, true),
            mention(Some(3.0), 0.1, true),
        ];
        assert_eq!(ratio_stats(&scores(m, &[]), 0.5).u_ratio, Some(1.0));
    }
}
