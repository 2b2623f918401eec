use serde::{Deserialize, Serialize};

use super::{CorpusScores, FactorError};

/// Hallucinated vs non-hallucinated counts over shared, equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedHistogram {
    /// `bins + 1` edges spanning the observed range; empty when there are no values.
    pub edges: Vec<f64>,
    pub hallucinated: Vec<usize>,
    pub real: Vec<usize>,
    /// Fewer than two distinct values were observed.
    pub degenerate: bool,
}

impl PairedHistogram {
    /// Bins both samples over their joint `[min, max]` range. The maximum lands
    /// in the last bin.
    pub fn new(hallucinated: &[f64], real: &[f64], bins: usize) -> Result<Self, FactorError> {
        if bins == 0 {
            return Err(FactorError::ZeroBins);
        }
        let all = || hallucinated.iter().chain(real).copied();
        let mut distinct: Vec<f64> = all().collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let degenerate = distinct.len() < 2;
        if distinct.is_empty() {
            return Ok(Self {
                edges: Vec::new(),
                hallucinated: Vec::new(),
                real: Vec::new(),
                degenerate,
            });
        }
        let lo = distinct[0];
        let mut hi = distinct[distinct.len() - 1];
        if degenerate {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let bin_of = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
        let count = |values: &[f64]| {
            let mut c = vec![0usize; bins];
            for &v in values {
                c[bin_of(v)] += 1;
            }
            c
        };
        Ok(Self {
            edges,
            hallucinated: count(hallucinated),
            real: count(real),
            degenerate,
        })
    }

    pub fn bins(&self) -> usize {
        self.hallucinated.len()
    }

    pub fn hallucinated_total(&self) -> usize {
        self.hallucinated.iter().sum()
    }

    pub fn real_total(&self) -> usize {
        self.real.iter().sum()
    }
}

/// Paired histograms for the three factors.
///
/// CoScore is split per caption (hallucinatory caption = at least one
/// hallucinated object); UnScore and PoScore are split per mention.
/// `un_score` is `None` when no mention carries an uncertainty value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorHistograms {
    pub co_score: PairedHistogram,
    pub un_score: Option<PairedHistogram>,
    pub po_score: PairedHistogram,
}

pub fn factor_distributions(scores: &CorpusScores, bins: usize) -> Result<FactorHistograms, FactorError> {
    let split = |pairs: Vec<(bool, f64)>| -> (Vec<f64>, Vec<f64>) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(h, _)| *h);
        (
            h.into_iter().map(|p| p.1).collect(),
            r.into_iter().map(|p| p.1).collect(),
        )
    };
    let build = |name: &str, (h, r): (Vec<f64>, Vec<f64>)| -> Result<PairedHistogram, FactorError> {
        let hist = PairedHistogram::new(&h, &r, bins)?;
        if hist.degenerate {
            log::warn!("{name} histogram is degenerate: fewer than two distinct values");
        }
        Ok(hist)
    };

    let co = split(
        scores
            .descriptions
            .iter()
            .map(|d| (d.hallucinatory, d.co_score))
            .collect(),
    );
    let po = split(
        scores
            .mentions
            .iter()
            .map(|m| (m.is_hallucinated(), m.po_score))
            .collect(),
    );
    let un_pairs: Vec<_> = scores
        .mentions
        .iter()
        .filter_map(|m| m.un_score.map(|u| (m.is_hallucinated(), u)))
        .collect();
    let un_score = if un_pairs.is_empty() {
        None
    } else {
        Some(build("UnScore", split(un_pairs))?)
    };
    Ok(FactorHistograms {
        co_score: build("CoScore", co)?,
        un_score,
        po_score: build("PoScore", po)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chair::fixtures::{labeled, three_descriptions, vocab};
    use crate::factors::{build_cooccur_index, CorpusScores};
    use proptest::prelude::*;

    #[test]
    fn fixture_co_score_split() {
        let corpus = three_descriptions();
        let idx = build_cooccur_index(&corpus).unwrap();
        let scores = CorpusScores::compute(&corpus, &idx).unwrap();
        let h = factor_distributions(&scores, 4).unwrap();
        assert_eq!(h.co_score.hallucinated_total(), 2);
        assert_eq!(h.co_score.real_total(), 1);
        // range [0, 1/3]: 0 → bin 0, 0.25 → bin 3, 1/3 → last bin
        assert_eq!(h.co_score.real, [1, 0, 0, 0]);
        assert_eq!(h.co_score.hallucinated, [0, 0, 0, 2]);
        assert!(h.un_score.is_none());
    }

    #[test]
    fn all_real_corpus_has_empty_hallucinated_side() {
        let v = vocab();
        let corpus = [
            labeled("a", "a dog", &["dog"], &v),
            labeled("b", "a car and a dog", &["car", "dog"], &v),
        ];
        let idx = build_cooccur_index(&corpus).unwrap();
        let h = factor_distributions(&CorpusScores::compute(&corpus, &idx).unwrap(), 5).unwrap();
        assert_eq!(h.co_score.hallucinated_total(), 0);
        assert_eq!(h.po_score.hallucinated_total(), 0);
        assert_eq!(h.po_score.real_total(), 3);
        assert!(h.co_score.degenerate);
    }

    #[test]
    fn single_bin_holds_everything() {
        let h = PairedHistogram::new(&[0.1, 0.9], &[0.5, 0.2, 0.3], 1).unwrap();
        assert_eq!(h.hallucinated, [2]);
        assert_eq!(h.real, [3]);
        assert_eq!(h.edges, [0.1, 0.9]);
        assert_eq!(PairedHistogram::new(&[], &[1.0], 0), Err(FactorError::ZeroBins));
    }

    proptest! {
        #[test]
        fn counts_sum_to_totals(h in proptest::collection::vec(0.0f64..10.0, 0..50),
                                r in proptest::collection::vec(0.0f64..10.0, 0..50),
                                bins in 1usize..20) {
            let hist = PairedHistogram::new(&h, &r, bins).unwrap();
            prop_assert_eq!(hist.hallucinated_total(), h.len());
            prop_assert_eq!(hist.real_total(), r.len());
        }
    }
}
