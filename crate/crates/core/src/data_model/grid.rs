use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DiscreteDataset, DiscreteSchema};
use crate::error::{Error, Result};
use crate::sliced_ot::SignedAtoms;

/// Center of cell `x ∈ {1, …, k}` on the unit interval.
#[inline]
pub fn embed_value(x: u32, k: u32) -> f64 {
    (2.0 * f64::from(x) - 1.0) / (2.0 * f64::from(k))
}

/// Embeds a discrete row into `[0, 1]^d`.
pub fn embed(row: &[u32], schema: &DiscreteSchema) -> Result<Vec<f64>> {
    schema.check_row(row)?;
    Ok(row
        .iter()
        .zip(schema.columns())
        .map(|(&x, c)| embed_value(x, c.cardinality))
        .collect())
}

/// Embeds every row of `data`; the result is `n × d`.
pub fn embed_dataset(data: &DiscreteDataset) -> Array2<f64> {
    let cards = data.schema().cardinalities();
    let d = cards.len();
    Array2::from_shape_fn((data.n(), d), |(i, j)| embed_value(data.get(i, j), cards[j]))
}

/// Index of the grid center closest to `coord`, ties to the lower index.
///
/// Cell `j` owns `((j − 1)/k, j/k]`, so this is `⌈coord · k⌉` clamped to `[1, k]`.
#[inline]
pub fn nearest_index(coord: f64, k: u32) -> u32 {
    let j = (coord * f64::from(k)).ceil();
    if j.is_nan() || j < 1.0 {
        1
    } else if j >= f64::from(k) {
        k
    } else {
        j as u32
    }
}

/// Maps a point of `[0, 1]^d` back to the closest domain element.
pub fn nearest_grid(point: &[f64], schema: &DiscreteSchema) -> Result<Vec<u32>> {
    if point.len() != schema.dim() {
        return Err(Error::Shape(format!(
            "point has {} coordinates, schema has {} columns",
            point.len(),
            schema.dim()
        )));
    }
    Ok(point
        .iter()
        .zip(schema.columns())
        .map(|(&z, c)| nearest_index(z, c.cardinality))
        .collect())
}

/// An ordered pair of distinct column indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnPair(pub usize, pub usize);

impl ColumnPair {
    pub fn first(self) -> usize {
        self.0
    }

    pub fn second(self) -> usize {
        self.1
    }
}

/// All `C(d, 2)` column pairs in lexicographic order.
pub fn all_pairs_workload(d: usize) -> Result<Vec<ColumnPair>> {
    if d < 2 {
        return Err(Error::Config(format!(
            "2-way workload needs at least 2 columns, got {d}"
        )));
    }
    Ok((0..d)
        .flat_map(|i| (i + 1..d).map(move |j| ColumnPair(i, j)))
        .collect())
}

/// Empirical probability table of one column pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    pub pair: ColumnPair,
    /// `k_first × k_second`, entry `(a − 1, b − 1)` is the mass of cell `(a, b)`.
    pub mass: Array2<f64>,
}

impl MarginalTable {
    pub fn total(&self) -> f64 {
        self.mass.sum()
    }
}

/// Weights on the embedded cells of a small product grid (one or two axes).
///
/// Cells are stored row-major: for cardinalities `(k1, k2)` cell `(a, b)`
/// (1-based codes) sits at index `(a − 1)·k2 + (b − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    pub cards: Vec<u32>,
    pub weights: Vec<f64>,
}

impl GridMeasure {
    pub fn new(cards: Vec<u32>, weights: Vec<f64>) -> Result<Self> {
        let cells: usize = cards.iter().map(|&k| k as usize).product();
        if cards.is_empty() || cards.contains(&0) {
            return Err(Error::Shape("grid needs at least one nonempty axis".into()));
        }
        if cells != weights.len() {
            return Err(Error::Shape(format!(
                "{} weights for {cells} grid cells",
                weights.len()
            )));
        }
        Ok(GridMeasure { cards, weights })
    }

    pub fn from_table(table: &MarginalTable) -> Self {
        let (ka, kb) = table.mass.dim();
        GridMeasure {
            cards: vec![ka as u32, kb as u32],
            weights: table.mass.iter().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.cards.len()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// 1-based codes of cell `index`.
    pub fn cell_codes(&self, mut index: usize) -> Vec<u32> {
        let mut codes = vec![0; self.cards.len()];
        for (axis, &k) in self.cards.iter().enumerate().rev() {
            codes[axis] = (index % k as usize) as u32 + 1;
            index /= k as usize;
        }
        codes
    }

    /// Embedded centers, one row per cell.
    pub fn centers(&self) -> Array2<f64> {
        let p = self.cards.len();
        let mut out = Array2::<f64>::zeros((self.len(), p));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            for (axis, code) in self.cell_codes(i).into_iter().enumerate() {
                row[axis] = embed_value(code, self.cards[axis]);
            }
        }
        out
    }

    pub fn to_atoms(&self) -> SignedAtoms {
        SignedAtoms {
            locations: self.centers(),
            weights: self.weights.clone(),
        }
    }

    /// Half the `L1` distance between weight vectors on the same grid.
    pub fn tv_distance(&self, other: &GridMeasure) -> f64 {
        debug_assert_eq!(self.cards, other.cards);
        0.5 * self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// The empirical measure of `data` restricted to `pair`.
pub fn marginal(data: &DiscreteDataset, pair: ColumnPair) -> Result<MarginalTable> {
    let d = data.dim();
    let ColumnPair(a, b) = pair;
    if a == b || a >= d || b >= d {
        return Err(Error::Config(format!(
            "invalid column pair ({a}, {b}) for {d} columns"
        )));
    }
    if data.n() == 0 {
        return Err(Error::Dataset("marginal of an empty dataset".into()));
    }
    let ka = data.schema().cardinality(a) as usize;
    let kb = data.schema().cardinality(b) as usize;
    let mut counts = vec![0u64; ka * kb];
    for row in data.rows() {
        counts[(row[a] as usize - 1) * kb + row[b] as usize - 1] += 1;
    }
    let n = data.n() as f64;
    let mass = Array2::from_shape_vec((ka, kb), counts.into_iter().map(|c| c as f64 / n).collect())
        .expect("shape matches count buffer");
    Ok(MarginalTable { pair, mass })
}

/// Marginals for a whole workload, in workload order.
pub fn marginals(data: &DiscreteDataset, workload: &[ColumnPair]) -> Result<Vec<MarginalTable>> {
    workload.par_iter().map(|&p| marginal(data, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn schema(cards: &[u32]) -> DiscreteSchema {
        DiscreteSchema::from_cardinalities(cards).unwrap()
    }

    #[test]
    fn embedding_values() {
        assert_eq!(embed_value(1, 2), 0.25);
        assert_eq!(embed_value(2, 2), 0.75);
        assert_eq!(embed_value(1, 1), 0.5);
        assert_eq!(embed_value(32, 32), 63.0 / 64.0);
        assert!(matches!(
            embed(&[3], &schema(&[2])),
            Err(Error::Domain { column: 0, value: 3, .. })
        ));
    }

    #[test]
    fn nearest_grid_examples() {
        let s = schema(&[2]);
        assert_eq!(nearest_grid(&[0.5], &s).unwrap(), vec![1]);
        assert_eq!(nearest_grid(&[0.9], &schema(&[4])).unwrap(), vec![4]);
        assert_eq!(nearest_grid(&[0.0], &s).unwrap(), vec![1]);
        assert_eq!(nearest_grid(&[1.0], &s).unwrap(), vec![2]);
    }

    fn argmin_center(z: f64, k: u32) -> u32 {
        // strict `<` keeps the first (lowest) index on ties
        let mut best = 1;
        let mut best_dist = f64::INFINITY;
        for j in 1..=k {
            let dist = (z - embed_value(j, k)).abs();
            if dist < best_dist {
                best = j;
                best_dist = dist;
            }
        }
        best
    }

    #[test]
    fn nearest_matches_exhaustive_distance_search() {
        for k in 1..=40 {
            for x in 1..=k {
                assert_eq!(nearest_index(embed_value(x, k), k), x);
            }
            for step in 0..=997 {
                let z = f64::from(step) / 997.0;
                assert_eq!(nearest_index(z, k), argmin_center(z, k), "k={k} z={z}");
            }
        }
    }

    #[test]
    fn marginal_counting() {
        let s = schema(&[2, 2]);
        let d = DiscreteDataset::new(s.clone(), &[vec![1, 1], vec![1, 1]]).unwrap();
        let m = marginal(&d, ColumnPair(0, 1)).unwrap();
        assert_eq!(m.mass, ndarray::arr2(&[[1.0, 0.0], [0.0, 0.0]]));
        let d = DiscreteDataset::new(s, &[vec![1, 2], vec![2, 1]]).unwrap();
        let m = marginal(&d, ColumnPair(0, 1)).unwrap();
        assert_eq!(m.mass, ndarray::arr2(&[[0.0, 0.5], [0.5, 0.0]]));
    }

    #[test]
    fn marginal_of_empty_dataset_errors() {
        let d = DiscreteDataset::new(schema(&[2, 2]), &[]).unwrap();
        assert!(matches!(
            marginal(&d, ColumnPair(0, 1)),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn uniform_rows_give_flat_marginal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<u32>> = (0..1000)
            .map(|_| vec![rng.random_range(1..=4), rng.random_range(1..=4)])
            .collect();
        let d = DiscreteDataset::new(schema(&[4, 4]), &rows).unwrap();
        let m = marginal(&d, ColumnPair(0, 1)).unwrap();
        for &v in m.mass.iter() {
            assert!((v - 1.0 / 16.0).abs() < 0.04);
        }
        assert!((m.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_measure_layout() {
        let g = GridMeasure::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(g.cell_codes(0), vec![1, 1]);
        assert_eq!(g.cell_codes(4), vec![2, 2]);
        let c = g.centers();
        assert_eq!(c.row(5).to_vec(), vec![0.75, 5.0 / 6.0]);
        assert!(GridMeasure::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn workloads() {
        assert_eq!(
            all_pairs_workload(3).unwrap(),
            vec![ColumnPair(0, 1), ColumnPair(0, 2), ColumnPair(1, 2)]
        );
        assert_eq!(all_pairs_workload(2).unwrap(), vec![ColumnPair(0, 1)]);
        assert_eq!(all_pairs_workload(11).unwrap().len(), 55);
        assert!(all_pairs_workload(1).is_err());
    }

    proptest! {
        #[test]
        fn embed_is_strictly_monotone((k, x, y) in (2u32..64).prop_flat_map(|k| (Just(k), 1..k))
            .prop_flat_map(|(k, x)| (Just(k), Just(x), (x + 1)..=k))) {
            prop_assert!(embed_value(x, k) < embed_value(y, k));
        }

        #[test]
        fn marginal_matches_embedded_histogram(
            rows in proptest::collection::vec((1u32..=3, 1u32..=5, 1u32..=2), 1..60)
        ) {
            let s = schema(&[3, 5, 2]);
            let rows: Vec<Vec<u32>> = rows.into_iter().map(|(a, b, c)| vec![a, b, c]).collect();
            let data = DiscreteDataset::new(s.clone(), &rows).unwrap();
            let emb = embed_dataset(&data);
            for pair in all_pairs_workload(3).unwrap() {
                let m = marginal(&data, pair).unwrap();
                let (ka, kb) = m.mass.dim();
                let mut hist = Array2::<f64>::zeros((ka, kb));
                for r in emb.rows() {
                    let a = nearest_index(r[pair.0], ka as u32) as usize - 1;
                    let b = nearest_index(r[pair.1], kb as u32) as usize - 1;
                    hist[(a, b)] += 1.0 / rows.len() as f64;
                }
                for (x, y) in hist.iter().zip(m.mass.iter()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                prop_assert!((m.total() - 1.0).abs() < 1e-12);
                prop_assert!(m.mass.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
