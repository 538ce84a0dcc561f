//! Walker/Vose alias tables for O(1) sampling from a fixed discrete
//! distribution.

use rand::Rng;

#[derive(Clone, Debug)]
pub struct AliasTable {
    /// Probability of keeping column `i` rather than jumping to `alias[i]`.
    keep: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Builds a table from weights summing to (approximately) one.
    /// Zero-weight entries are never sampled.
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        assert!(n > 0, "alias table needs at least one outcome");
        let total: f64 = weights.iter().sum();
        let scale = n as f64 / total;

        let mut keep: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut small: Vec<u32> = Vec::new();
        let mut large: Vec<u32> = Vec::new();
        for (i, &k) in keep.iter().enumerate() {
            if k < 1.0 {
                small.push(i as u32);
            } else {
                large.push(i as u32);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s as usize] = l;
            keep[l as usize] -= 1.0 - keep[s as usize];
            if keep[l as usize] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding error; zero-weight outcomes must stay
        // unreachable even when rounding leaves them unpaired.
        let heaviest = weights
            .iter()
            .enumerate()
            .fold(0, |best, (i, &w)| if w > weights[best] { i } else { best });
        for i in large.into_iter().chain(small) {
            if weights[i as usize] > 0.0 {
                keep[i as usize] = 1.0;
            } else {
                keep[i as usize] = 0.0;
                alias[i as usize] = heaviest as u32;
            }
        }
        AliasTable { keep, alias }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// Draws an index using one uniform column pick and one uniform coin.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let column = rng.gen_range(0..self.keep.len());
        let coin: f64 = rng.gen();
        if coin < self.keep[column] {
            column
        } else {
            self.alias[column] as usize
        }
    }

    /// The exact probability the table assigns to each outcome.
    pub fn implied_probabilities(&self) -> Vec<f64> {
        let n = self.keep.len();
        let mut p = vec![0.0; n];
        for i in 0..n {
            p[i] += self.keep[i] / n as f64;
            p[self.alias[i] as usize] += (1.0 - self.keep[i]) / n as f64;
        }
        p
    }
}
