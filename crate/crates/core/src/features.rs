//! Factor relevance by mutual information with the outcome, and
//! importance-weighted Hamming similarity between requests.
//!
//! Both statistics are computed on raw empirical frequencies
//! `p_{k,s} = n_{k,s} / N`. With `r_{k,s} = p_{k,s} / (p_{k,*} p_{*,s})`:
//!
//! * Shannon: `I = Σ p_{k,s} log2 r_{k,s}`, with `0·log 0 = 0`.
//! * Rényi of order α: `I_α = log2(Σ p_{k,s} r_{k,s}^{α-1}) / (α - 1)`,
//!   the order-α divergence between the joint law and the product of its
//!   marginals. It reduces to the Shannon statistic as α → 1 and to
//!   `log2 Σ p² / (p_{k,*} p_{*,s})` at α = 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FactorTable, RequestRecord};

pub const DEFAULT_RENYI_ALPHA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MiMethod {
    Shannon,
    Renyi { alpha: f64 },
}

impl std::fmt::Display for MiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MiMethod::Shannon => write!(f, "shannon"),
            MiMethod::Renyi { alpha } => write!(f, "renyi({alpha})"),
        }
    }
}

/// Marginal sums of one factor's `L × 2` slice.
struct Margins {
    rows: Vec<u64>,
    cols: [u64; 2],
    total: u64,
}

fn margins(cells: &[[u64; 2]]) -> Margins {
    let rows: Vec<u64> = cells.iter().map(|c| c[0] + c[1]).collect();
    let cols = cells.iter().fold([0, 0], |acc, c| [acc[0] + c[0], acc[1] + c[1]]);
    Margins { rows, total: cols[0] + cols[1], cols }
}

// ln r_{k,s} = ln(n N / (n_k n_s)); the ratio is formed from integers so that
// exactly factorizing tables give r = 1 without rounding.
fn ln_ratio(n: u64, row: u64, col: u64, total: u64) -> f64 {
    let num = n as f64 * total as f64;
    let den = row as f64 * col as f64;
    if num == den {
        0.0
    } else {
        (num / den).ln()
    }
}

/// Shannon mutual information (bits) between one factor and the outcome,
/// from its `[negatives, positives]` rows.
pub fn shannon_mi_cells(cells: &[[u64; 2]]) -> Result<f64> {
    let m = margins(cells);
    if m.total == 0 {
        return Err(Error::EmptyTable);
    }
    let mut acc = 0.0;
    for (k, c) in cells.iter().enumerate() {
        for s in 0..2 {
            if c[s] > 0 {
                acc += c[s] as f64 * ln_ratio(c[s], m.rows[k], m.cols[s], m.total);
            }
        }
    }
    let bits = acc / m.total as f64 / std::f64::consts::LN_2;
    Ok(bits.max(0.0))
}

/// Rényi mutual information (bits) of order `alpha`; `alpha == 1` is Shannon.
pub fn renyi_mi_cells(cells: &[[u64; 2]], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::BadAlpha(alpha));
    }
    if alpha == 1.0 {
        return shannon_mi_cells(cells);
    }
    let m = margins(cells);
    if m.total == 0 {
        return Err(Error::EmptyTable);
    }
    // Σ p r^{α-1} - 1 = Σ p (r^{α-1} - 1), accumulated via expm1 so that the
    // statistic stays accurate near α = 1 and is exactly 0 under independence.
    let mut excess = 0.0;
    for (k, c) in cells.iter().enumerate() {
        for s in 0..2 {
            let (row, col) = (m.rows[k], m.cols[s]);
            if row == 0 || col == 0 {
                continue;
            }
            if c[s] == 0 {
                if alpha < 1.0 {
                    return Err(Error::ZeroCellAtSmallAlpha { alpha, level: k, label: s });
                }
                continue;
            }
            let lr = ln_ratio(c[s], row, col, m.total);
            excess += c[s] as f64 * ((alpha - 1.0) * lr).exp_m1();
        }
    }
    let sum_minus_one = excess / m.total as f64;
    let bits = sum_minus_one.ln_1p() / (alpha - 1.0) / std::f64::consts::LN_2;
    Ok(bits.max(0.0))
}

pub fn shannon_mi(table: &FactorTable, factor: usize) -> Result<f64> {
    shannon_mi_cells(table.levels(factor))
}

pub fn renyi_mi(table: &FactorTable, factor: usize, alpha: f64) -> Result<f64> {
    renyi_mi_cells(table.levels(factor), alpha)
}

/// Per-factor MI values and the factor order by decreasing relevance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub method: MiMethod,
    pub values: Vec<f64>,
    /// Zero-based factor indices, most relevant first; ties by ascending index.
    pub ranking: Vec<usize>,
}

impl ImportanceVector {
    pub fn new(method: MiMethod, values: Vec<f64>) -> Self {
        let mut ranking: Vec<usize> = (0..values.len()).collect();
        // stable sort keeps ascending index among equal values
        ranking.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        ImportanceVector { method, values, ranking }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// 1-based rank of each factor.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.values.len()];
        for (pos, &f) in self.ranking.iter().enumerate() {
            ranks[f] = pos + 1;
        }
        ranks
    }
}

/// Scores every factor of `table` with `method`. `names` label errors.
pub fn rank_factors(table: &FactorTable, method: MiMethod, names: &[&str]) -> Result<ImportanceVector> {
    if table.total() == 0 {
        return Err(Error::EmptyTable);
    }
    let values = (0..table.num_factors())
        .map(|i| {
            let v = match method {
                MiMethod::Shannon => shannon_mi(table, i),
                MiMethod::Renyi { alpha } => renyi_mi(table, i, alpha),
            };
            v.map_err(|e| e.in_factor(i, names.get(i).copied().unwrap_or("")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceVector::new(method, values))
}

/// Positive per-factor weights for [`weighted_hamming`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityWeights(Vec<f64>);

impl SimilarityWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::Domain(format!("similarity weight {w} is not positive")));
        }
        Ok(SimilarityWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `Σ_j w_j [x_j ≠ y_j]`.
pub fn weighted_hamming(x: &RequestRecord, y: &RequestRecord, w: &SimilarityWeights) -> Result<f64> {
    let m = w.0.len();
    for found in [x.factors.len(), y.factors.len()] {
        if found != m {
            return Err(Error::DimensionMismatch { expected: m, found });
        }
    }
    Ok(x.factors.iter().zip(&y.factors).zip(&w.0).filter(|((a, b), _)| a != b).map(|(_, w)| w).sum())
}

/// `w_j = max(I_j, floor)`.
pub fn weights_from_importance(importance: &ImportanceVector, floor: f64) -> Result<SimilarityWeights> {
    if !(floor > 0.0) {
        return Err(Error::Domain(format!("weight floor {floor} is not positive")));
    }
    SimilarityWeights::new(importance.values.iter().map(|&v| v.max(floor)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Direct evaluation of the defining sums, kept deliberately naive.
    fn naive(cells: &[[u64; 2]], alpha: Option<f64>) -> f64 {
        let n: u64 = cells.iter().map(|c| c[0] + c[1]).sum();
        let n = n as f64;
        let col = |s: usize| cells.iter().map(|c| c[s] as f64).sum::<f64>() / n;
        let mut acc = 0.0;
        for c in cells {
            let pk = (c[0] + c[1]) as f64 / n;
            for s in 0..2 {
                let p = c[s] as f64 / n;
                if p == 0.0 {
                    continue;
                }
                acc += match alpha {
                    None => p * (p / (pk * col(s))).log2(),
                    Some(a) => p.powf(a) / (pk.powf(a - 1.0) * col(s).powf(a - 1.0)),
                };
            }
        }
        match alpha {
            None => acc,
            Some(a) => acc.log2() / (a - 1.0),
        }
    }

    #[test]
    fn shannon_examples() {
        assert_eq!(shannon_mi_cells(&[[25, 25], [25, 25]]).unwrap(), 0.0);
        assert!((shannon_mi_cells(&[[50, 0], [0, 50]]).unwrap() - 1.0).abs() < 1e-15);
        let t = [[30, 10], [20, 40]];
        assert!((shannon_mi_cells(&t).unwrap() - naive(&t, None)).abs() < 1e-12);
        assert!(matches!(shannon_mi_cells(&[[0, 0]]), Err(Error::EmptyTable)));
    }

    #[test]
    fn renyi_examples() {
        assert_eq!(renyi_mi_cells(&[[25, 25], [25, 25]], 2.0).unwrap(), 0.0);
        let t = [[30, 10], [20, 40]];
        let direct = naive(&t, Some(2.0));
        assert!((renyi_mi_cells(&t, 2.0).unwrap() - direct).abs() < 1e-12);
        assert_eq!(renyi_mi_cells(&t, 1.0).unwrap(), shannon_mi_cells(&t).unwrap());
        let sh = shannon_mi_cells(&t).unwrap();
        for a in [1.0 - 1e-6, 1.0 + 1e-6] {
            assert!((renyi_mi_cells(&t, a).unwrap() - sh).abs() < 1e-4);
        }
    }

    #[test]
    fn renyi_errors_and_zero_cells() {
        assert!(matches!(renyi_mi_cells(&[[1, 1]], 0.0), Err(Error::BadAlpha(_))));
        assert!(matches!(renyi_mi_cells(&[[1, 1]], -1.0), Err(Error::BadAlpha(_))));
        assert!(matches!(renyi_mi_cells(&[[0, 0]], 2.0), Err(Error::EmptyTable)));
        let zero_cell = [[5, 0], [3, 4]];
        assert!(matches!(renyi_mi_cells(&zero_cell, 0.5), Err(Error::ZeroCellAtSmallAlpha { level: 0, label: 1, .. })));
        let v = renyi_mi_cells(&zero_cell, 3.0).unwrap();
        assert!((v - naive(&zero_cell, Some(3.0))).abs() < 1e-12);
        // a level with no records is not a zero cell
        assert!(renyi_mi_cells(&[[5, 1], [0, 0], [3, 4]], 0.5).is_ok());
    }

    #[test]
    fn ranking_ties_and_errors() {
        let table =
            FactorTable::from_counts(vec![vec![[10, 0], [0, 10]], vec![[10, 0], [0, 10]], vec![[5, 5], [5, 5]]])
                .unwrap();
        let imp = rank_factors(&table, MiMethod::Shannon, &[]).unwrap();
        assert_eq!(imp.ranking, vec![0, 1, 2]);
        assert_eq!(imp.ranks(), vec![1, 2, 3]);

        let single = FactorTable::from_counts(vec![vec![[3, 1]]]).unwrap();
        assert_eq!(rank_factors(&single, MiMethod::Shannon, &[]).unwrap().ranking, vec![0]);

        assert!(FactorTable::from_counts(vec![vec![[5, 5]], vec![[3, 0]]]).is_err());
        let t = FactorTable::from_counts(vec![vec![[5, 5]], vec![[5, 0], [0, 5]]]).unwrap();
        match rank_factors(&t, MiMethod::Renyi { alpha: 0.5 }, &["a", "b"]) {
            Err(Error::Factor { index: 1, name, .. }) => assert_eq!(name, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hamming_examples() {
        let w = SimilarityWeights::new(vec![5.0, 2.0, 3.0]).unwrap();
        let x = RequestRecord::new(vec![0, 1, 2], false);
        let y = RequestRecord::new(vec![0, 3, 4], true);
        assert_eq!(weighted_hamming(&x, &y, &w).unwrap(), 5.0);
        assert_eq!(weighted_hamming(&x, &x, &w).unwrap(), 0.0);
        let unit = SimilarityWeights::new(vec![1.0; 3]).unwrap();
        let z = RequestRecord::new(vec![9, 9, 9], false);
        assert_eq!(weighted_hamming(&x, &z, &unit).unwrap(), 3.0);
        let short = RequestRecord::new(vec![0], false);
        assert!(matches!(weighted_hamming(&x, &short, &w), Err(Error::DimensionMismatch { expected: 3, found: 1 })));
        assert!(SimilarityWeights::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn weights_from_importance_floor() {
        let imp = ImportanceVector::new(MiMethod::Shannon, vec![0.5, 0.0]);
        assert_eq!(weights_from_importance(&imp, 0.01).unwrap().as_slice(), &[0.5, 0.01]);
        let flat = ImportanceVector::new(MiMethod::Shannon, vec![0.2; 4]);
        assert_eq!(weights_from_importance(&flat, 0.01).unwrap().as_slice(), &[0.2; 4]);
        assert!(weights_from_importance(&imp, 0.0).is_err());
    }

    fn cells_strategy() -> impl Strategy<Value = Vec<[u64; 2]>> {
        prop::collection::vec([0u64..50, 0u64..50], 1..6)
            .prop_filter("non-empty", |c| c.iter().any(|r| r[0] + r[1] > 0))
    }

    proptest! {
        #[test]
        fn mi_nonnegative_and_bounded(cells in cells_strategy()) {
            let sh = shannon_mi_cells(&cells).unwrap();
            let levels = cells.iter().filter(|c| c[0] + c[1] > 0).count() as f64;
            prop_assert!(sh >= 0.0);
            prop_assert!(sh <= levels.log2().min(1.0) + 1e-12);
            let re = renyi_mi_cells(&cells, 2.0).unwrap();
            prop_assert!(re >= 0.0);
        }

        #[test]
        fn mi_invariant_under_relabeling_and_scaling(cells in cells_strategy(), scale in 1u64..7) {
            let mut rev = cells.clone();
            rev.reverse();
            let scaled: Vec<[u64; 2]> = cells.iter().map(|c| [c[0] * scale, c[1] * scale]).collect();
            let sh = shannon_mi_cells(&cells).unwrap();
            prop_assert!((shannon_mi_cells(&rev).unwrap() - sh).abs() < 1e-12);
            prop_assert!((shannon_mi_cells(&scaled).unwrap() - sh).abs() < 1e-12);
            let re = renyi_mi_cells(&cells, 3.0).unwrap();
            prop_assert!((renyi_mi_cells(&rev, 3.0).unwrap() - re).abs() < 1e-12);
            prop_assert!((renyi_mi_cells(&scaled, 3.0).unwrap() - re).abs() < 1e-12);
        }

        #[test]
        fn factorizing_tables_have_zero_mi(rows in prop::collection::vec(1u64..20, 1..5), a in 1u64..9, b in 1u64..9) {
            let cells: Vec<[u64; 2]> = rows.iter().map(|r| [r * a, r * b]).collect();
            prop_assert!(shannon_mi_cells(&cells).unwrap() <= 1e-12);
            for alpha in [0.5, 2.0, 5.0] {
                prop_assert!(renyi_mi_cells(&cells, alpha).unwrap() <= 1e-12);
            }
        }

        #[test]
        fn hamming_is_a_metric(
            x in prop::collection::vec(0u32..3, 4),
            y in prop::collection::vec(0u32..3, 4),
            z in prop::collection::vec(0u32..3, 4),
            w in prop::collection::vec(0.01f64..10.0, 4),
        ) {
            let w = SimilarityWeights::new(w).unwrap();
            let (x, y, z) = (RequestRecord::new(x, false), RequestRecord::new(y, false), RequestRecord::new(z, true));
            let dxy = weighted_hamming(&x, &y, &w).unwrap();
            prop_assert!(dxy >= 0.0);
            prop_assert_eq!(dxy, weighted_hamming(&y, &x, &w).unwrap());
            let dxz = weighted_hamming(&x, &z, &w).unwrap();
            let dzy = weighted_hamming(&z, &y, &w).unwrap();
            prop_assert!(dxy <= dxz + dzy + 1e-12);
        }
    }
}
