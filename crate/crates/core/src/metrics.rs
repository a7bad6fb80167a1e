//! Evaluation and bias-audit metrics: hit-rate, catalog coverage, average
//! recommendation popularity, overlap with the bigram baseline,
//! popularity-quartile representation, and two embedding-geometry statistics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{quartile_sizes, ItemVocab};
use crate::error::{Error, Result};
use crate::numeric::{Rng, Tensor};
use crate::stochastic::rbf_potential;

/// Ranked top-K output for one evaluation example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub example_id: u64,
    pub items: Vec<usize>,
}

impl RecommendationList {
    pub fn new(example_id: u64, items: Vec<usize>) -> Self {
        RecommendationList { example_id, items }
    }
}

/// One histogram bucket over [bin_left, bin_right).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

/// Everything reported for one evaluated split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub k: usize,
    pub hit_rate: f64,
    pub coverage: f64,
    pub arp: f64,
    pub iou_vs_bigram: f64,
    pub quartile_representation: [f64; 4],
    /// Absent for the embedding-free baselines.
    pub rbf_statistic: Option<f64>,
    pub nn_cosine_histogram: Vec<HistogramBin>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("metrics serialization: {e}")))
    }

    /// One metric per row: split, metric, value.
    pub fn to_metrics_csv(&self) -> String {
        let mut out = String::from("split,metric,value\n");
        let mut push = |metric: &str, value: f64| {
            out.push_str(&format!("{},{},{}\n", self.split, metric, value));
        };
        push("hit_rate", self.hit_rate);
        push("coverage", self.coverage);
        push("arp", self.arp);
        push("iou_vs_bigram", self.iou_vs_bigram);
        for (q, &f) in self.quartile_representation.iter().enumerate() {
            push(&format!("quartile_q{}", q + 1), f);
        }
        if let Some(rbf) = self.rbf_statistic {
            push("rbf_statistic", rbf);
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for bin in &self.nn_cosine_histogram {
            out.push_str(&format!("{},{},{}\n", bin.bin_left, bin.bin_right, bin.count));
        }
        out
    }
}

/// Fraction of examples whose target appears in its list.
pub fn hit_rate(recs: &[RecommendationList], targets: &[usize]) -> Result<f64> {
    if recs.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} recommendation lists against {} targets",
            recs.len(),
            targets.len()
        )));
    }
    if recs.is_empty() {
        return Err(Error::InvalidArgument("hit rate over zero examples".into()));
    }
    let hits = recs
        .iter()
        .zip(targets)
        .filter(|(r, t)| r.items.contains(t))
        .count();
    Ok(hits as f64 / recs.len() as f64)
}

/// Distinct items recommended anywhere in the split, over the catalog size.
pub fn coverage(recs: &[RecommendationList], n_items: usize) -> f64 {
    let distinct: BTreeSet<usize> = recs.iter().flat_map(|r| r.items.iter().copied()).collect();
    distinct.len() as f64 / n_items as f64
}

/// Mean over examples of the mean train popularity of the recommended items.
pub fn arp(recs: &[RecommendationList], vocab: &ItemVocab) -> f64 {
    if recs.is_empty() {
        return 0.0;
    }
    let per_example: f64 = recs
        .iter()
        .map(|r| {
            let total: u64 = r.items.iter().map(|&j| vocab.popularity(j)).sum();
            total as f64 / r.items.len() as f64
        })
        .sum();
    per_example / recs.len() as f64
}

/// Mean Jaccard overlap between aligned model and bigram lists.
pub fn iou_vs_bigram(
    recs_model: &[RecommendationList],
    recs_bigram: &[RecommendationList],
) -> Result<f64> {
    if recs_model.len() != recs_bigram.len() {
        return Err(Error::InvalidArgument(format!(
            "{} model lists against {} bigram lists",
            recs_model.len(),
            recs_bigram.len()
        )));
    }
    if recs_model.is_empty() {
        return Err(Error::InvalidArgument("IoU over zero examples".into()));
    }
    let mut total = 0.0;
    for (a, b) in recs_model.iter().zip(recs_bigram) {
        if a.example_id != b.example_id {
            return Err(Error::InvalidArgument(format!(
                "misaligned example ids {} vs {}",
                a.example_id, b.example_id
            )));
        }
        let sa: BTreeSet<usize> = a.items.iter().copied().collect();
        let sb: BTreeSet<usize> = b.items.iter().copied().collect();
        let inter = sa.intersection(&sb).count();
        let union = sa.union(&sb).count();
        if union > 0 {
            total += inter as f64 / union as f64;
        }
    }
    Ok(total / recs_model.len() as f64)
}

/// Quartile index (0 = most popular) per item, by descending train
/// popularity with ascending-index ties, sizes from [`quartile_sizes`].
pub fn quartile_of_items(vocab: &ItemVocab) -> Vec<usize> {
    let n = vocab.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        vocab
            .popularity(b)
            .cmp(&vocab.popularity(a))
            .then(a.cmp(&b))
    });
    let sizes = quartile_sizes(n);
    let mut quartile = vec![0usize; n];
    let mut cursor = 0;
    for (q, &size) in sizes.iter().enumerate() {
        for &item in &order[cursor..cursor + size] {
            quartile[item] = q;
        }
        cursor += size;
    }
    quartile
}

/// Fraction of recommendation slots occupied by each popularity quartile.
pub fn quartile_representation(recs: &[RecommendationList], vocab: &ItemVocab) -> [f64; 4] {
    let quartile = quartile_of_items(vocab);
    let mut slots = [0u64; 4];
    for r in recs {
        for &item in &r.items {
            slots[quartile[item]] += 1;
        }
    }
    let total: u64 = slots.iter().sum();
    if total == 0 {
        return [0.0; 4];
    }
    slots.map(|c| c as f64 / total as f64)
}

fn normalized_rows(table: &Tensor) -> Vec<Vec<f64>> {
    (0..table.rows())
        .map(|i| {
            let row = table.row(i);
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|x| x / norm).collect()
            } else {
                row.to_vec()
            }
        })
        .collect()
}

/// Mean pairwise Gaussian potential exp(−τ‖·‖²) over `pair_budget` sampled
/// distinct pairs of row-normalized embeddings. Reported as the raw mean —
/// not its log — so magnitudes stay positive and comparable.
pub fn rbf_statistic(table: &Tensor, tau: f64, pair_budget: usize, rng: &mut Rng) -> Result<f64> {
    let rows = normalized_rows(table);
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "RBF statistic needs at least 2 embeddings, got {n}"
        )));
    }
    let mut total = 0.0;
    for _ in 0..pair_budget {
        let a = rng.next_below(n);
        let mut b = rng.next_below(n - 1);
        if b >= a {
            b += 1;
        }
        total += rbf_potential(&rows[a], &rows[b], tau);
    }
    Ok(total / pair_budget as f64)
}

/// Exact all-pairs counterpart of [`rbf_statistic`]; O(n²).
pub fn rbf_statistic_exact(table: &Tensor, tau: f64) -> Result<f64> {
    let rows = normalized_rows(table);
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "RBF statistic needs at least 2 embeddings, got {n}"
        )));
    }
    let mut total = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            total += rbf_potential(&rows[a], &rows[b], tau);
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Rows processed per block in [`nn_cosine_histogram`]; bounds the live
/// dot-product buffer without approximating the result.
const NN_BLOCK: usize = 2048;

/// Histogram over [−1, 1] of each item's maximum cosine similarity to any
/// other item. Exact for every catalog size: large tables are scanned in
/// blocks, never subsampled.
pub fn nn_cosine_histogram(table: &Tensor, bins: usize) -> Result<Vec<HistogramBin>> {
    let n = table.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "nearest-neighbor histogram needs at least 2 embeddings, got {n}"
        )));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least 1 bin".into()));
    }
    let rows = normalized_rows(table);
    let mut best = vec![f64::NEG_INFINITY; n];
    for start in (0..n).step_by(NN_BLOCK) {
        let end = (start + NN_BLOCK).min(n);
        for i in start..end {
            // Lower triangle within and below the block: update both ends.
            for j in 0..i {
                let cos: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                if cos > best[i] {
                    best[i] = cos;
                }
                if cos > best[j] {
                    best[j] = cos;
                }
            }
        }
    }

    let width = 2.0 / bins as f64;
    let mut counts = vec![0u64; bins];
    for &b in &best {
        // Clamp so cosine 1.0 lands in the top bin.
        let idx = (((b + 1.0) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            bin_left: -1.0 + i as f64 * width,
            bin_right: -1.0 + (i + 1) as f64 * width,
            count,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn lists(raw: &[&[usize]]) -> Vec<RecommendationList> {
        raw.iter()
            .enumerate()
            .map(|(i, items)| RecommendationList::new(i as u64, items.to_vec()))
            .collect()
    }

    fn vocab_with_counts(counts: &[u64]) -> ItemVocab {
        let mut vocab = ItemVocab::new();
        for (i, &c) in counts.iter().enumerate() {
            let idx = vocab.intern(&format!("i{i}"));
            vocab.add_popularity(idx, c);
        }
        vocab
    }

    #[test]
    fn hit_rate_counts_containment() {
        let recs = lists(&[&[1, 2], &[3, 4], &[5, 6]]);
        assert_eq!(hit_rate(&recs, &[2, 4, 9]).unwrap(), 2.0 / 3.0);
        assert_eq!(hit_rate(&recs, &[1, 3, 5]).unwrap(), 1.0);
        assert_eq!(hit_rate(&recs, &[0, 0, 0]).unwrap(), 0.0);
        assert!(hit_rate(&recs, &[1, 2]).is_err());
        assert!(hit_rate(&[], &[]).is_err());
    }

    #[test]
    fn coverage_counts_distinct_items() {
        let recs = lists(&[&[0, 1], &[0, 1], &[0, 1]]);
        assert_eq!(coverage(&recs, 10), 0.2);
        let recs = lists(&[&[0, 1], &[2, 3], &[4, 5]]);
        assert_eq!(coverage(&recs, 6), 1.0);
    }

    #[test]
    fn arp_is_mean_of_per_example_means() {
        let vocab = vocab_with_counts(&[10, 4, 2, 0]);
        // Hand-computed: (10+4)/2 = 7, (2+0)/2 = 1, (10+2)/2 = 6 → mean 14/3.
        let recs = lists(&[&[0, 1], &[2, 3], &[0, 2]]);
        assert!((arp(&recs, &vocab) - 14.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_handles_overlap_extremes() {
        let a = lists(&[&[1, 2, 3]]);
        assert_eq!(iou_vs_bigram(&a, &a.clone()).unwrap(), 1.0);
        let b = lists(&[&[4, 5, 6]]);
        assert_eq!(iou_vs_bigram(&a, &b).unwrap(), 0.0);
        // Half-overlapping K=20 sets: 10 shared of 30 distinct → 1/3.
        let left: Vec<usize> = (0..20).collect();
        let right: Vec<usize> = (10..30).collect();
        let l = lists(&[&left]);
        let r = lists(&[&right]);
        assert!((iou_vs_bigram(&l, &r).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        // Misaligned ids are fatal.
        let shifted = vec![RecommendationList::new(7, vec![1])];
        assert!(iou_vs_bigram(&a, &shifted).is_err());
    }

    #[test]
    fn quartiles_partition_by_descending_popularity() {
        // 6 items → sizes [2,2,1,1]; popularity ranks: 0(9),1(7),2(5),3(3),4(1),5(1).
        let vocab = vocab_with_counts(&[9, 7, 5, 3, 1, 1]);
        let q = quartile_of_items(&vocab);
        assert_eq!(q, vec![0, 0, 1, 1, 2, 3]);

        let only_top = lists(&[&[0, 1], &[1, 0]]);
        assert_eq!(quartile_representation(&only_top, &vocab), [1.0, 0.0, 0.0, 0.0]);

        let spread = lists(&[&[0, 2, 4, 5]]);
        let rep = quartile_representation(&spread, &vocab);
        assert_eq!(rep, [0.25, 0.25, 0.25, 0.25]);
        assert!((rep.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn metrics_are_order_invariant() {
        let recs = lists(&[&[1, 2], &[3, 4], &[5, 1]]);
        let targets = [2usize, 9, 5];
        let mut shuffled: Vec<(RecommendationList, usize)> =
            recs.iter().cloned().zip(targets).collect();
        shuffled.rotate_left(1);
        let (r2, t2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        assert_eq!(
            hit_rate(&recs, &targets).unwrap(),
            hit_rate(&r2, &t2).unwrap()
        );
        assert_eq!(coverage(&recs, 6), coverage(&r2, 6));
        let vocab = vocab_with_counts(&[5, 4, 3, 2, 1, 1]);
        assert_eq!(arp(&recs, &vocab), arp(&r2, &vocab));
        assert_eq!(
            quartile_representation(&recs, &vocab),
            quartile_representation(&r2, &vocab)
        );
    }

    #[test]
    fn rbf_statistic_known_values_and_sampling_agreement() {
        let same = Tensor::from_rows(&vec![vec![2.0, 0.0]; 3]).unwrap();
        let mut rng = Rng::from_seed(1);
        assert_eq!(rbf_statistic(&same, 2.0, 64, &mut rng).unwrap(), 1.0);
        assert_eq!(rbf_statistic_exact(&same, 2.0).unwrap(), 1.0);

        // Orthonormal basis: every pair at distance √2 → exp(−2τ) each.
        let basis = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let exact = rbf_statistic_exact(&basis, 2.0).unwrap();
        assert!((exact - (-4.0f64).exp()).abs() < 1e-15);

        // Sampled estimate tracks the exact value on a random table.
        let mut rng = Rng::from_seed(2);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..8).map(|_| rng.next_standard_normal()).collect())
            .collect();
        let table = Tensor::from_rows(&rows).unwrap();
        let exact = rbf_statistic_exact(&table, 2.0).unwrap();
        let sampled = rbf_statistic(&table, 2.0, 8192, &mut rng).unwrap();
        assert!((exact - sampled).abs() < 0.02, "exact {exact} sampled {sampled}");

        let lone = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(rbf_statistic_exact(&lone, 2.0).is_err());
    }

    #[test]
    fn nn_histogram_places_known_geometry() {
        // Antipodal pair: both nearest-neighbor cosines are −1 (first bin).
        let anti = Tensor::from_rows(&[vec![3.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let hist = nn_cosine_histogram(&anti, 4).unwrap();
        assert_eq!(hist[0].count, 2);
        assert_eq!(hist.iter().map(|b| b.count).sum::<u64>(), 2);
        assert_eq!(hist[0].bin_left, -1.0);
        assert_eq!(hist[3].bin_right, 1.0);

        // A duplicated row pins both copies at cosine 1 (top bin); the
        // orthogonal third row's nearest cosine is 0.
        let dup = Tensor::from_rows(&[
            vec![0.0, 1.0],
            vec![0.0, 2.0],
            vec![1.0, 0.0],
        ])
        .unwrap();
        let hist = nn_cosine_histogram(&dup, 10).unwrap();
        assert_eq!(hist[9].count, 2);
        assert_eq!(hist[5].count, 1); // [0.0, 0.2)
    }

    #[test]
    fn nn_histogram_matches_brute_force() {
        let mut rng = Rng::from_seed(33);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..5).map(|_| rng.next_standard_normal()).collect())
            .collect();
        let table = Tensor::from_rows(&rows).unwrap();
        let hist = nn_cosine_histogram(&table, 40).unwrap();

        // Brute-force double loop on explicitly normalized rows.
        let unit: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let n: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                r.iter().map(|x| x / n).collect()
            })
            .collect();
        let mut counts = vec![0u64; 40];
        for i in 0..100 {
            let mut best = f64::NEG_INFINITY;
            for j in 0..100 {
                if i == j {
                    continue;
                }
                let cos: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                best = best.max(cos);
            }
            let idx = (((best + 1.0) / (2.0 / 40.0)).floor() as isize).clamp(0, 39) as usize;
            counts[idx] += 1;
        }
        let got: Vec<u64> = hist.iter().map(|b| b.count).collect();
        assert_eq!(got, counts);
        assert_eq!(got.iter().sum::<u64>(), 100);
    }

    #[test]
    fn report_serializes_to_json_and_csv() {
        let report = MetricsReport {
            split: "test".into(),
            k: 20,
            hit_rate: 0.5,
            coverage: 0.25,
            arp: 12.0,
            iou_vs_bigram: 0.33,
            quartile_representation: [0.7, 0.2, 0.1, 0.0],
            rbf_statistic: Some(0.0606),
            nn_cosine_histogram: vec![HistogramBin {
                bin_left: -1.0,
                bin_right: 1.0,
                count: 3,
            }],
        };
        let json = report.to_json().unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);

        let csv = report.to_metrics_csv();
        assert!(csv.starts_with("split,metric,value\n"));
        assert!(csv.contains("test,hit_rate,0.5\n"));
        assert!(csv.contains("test,quartile_q1,0.7\n"));
        assert!(csv.contains("test,rbf_statistic,0.0606\n"));
        assert_eq!(csv.lines().count(), 10);

        let hist = report.histogram_csv();
        assert_eq!(hist, "bin_left,bin_right,count\n-1,1,3\n");
    }
}
