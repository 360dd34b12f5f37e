//! k-nearest inverse distance weighting for unknown locations ("pseudo nodes").

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// A frame where unknown rows have been filled by k-IDW.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoFrame {
    pub values: Matrix,
    /// `true` where the row is a real sensor reading.
    pub source_mask: Vec<bool>,
}

/// Precomputed neighbor weights for one known/unknown partition.
///
/// The weights depend only on distances, so one plan serves every frame of a
/// window.
#[derive(Clone, Debug, PartialEq)]
pub struct IdwPlan {
    known_mask: Vec<bool>,
    /// Per unknown node: (node, [(neighbor, normalized weight)]).
    weights: Vec<(usize, Vec<(usize, f64)>)>,
}

impl IdwPlan {
    pub fn new(known_mask: &[bool], dist: &Matrix, k: usize, rho: f64) -> Result<Self> {
        let n = known_mask.len();
        if dist.shape() != (n, n) {
            return Err(Error::shape("k_idw", (n, n), dist.shape()));
        }
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "IDW decay rate must be positive, got {rho}"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k-IDW needs k >= 1".into()));
        }
        let known: Vec<usize> = (0..n).filter(|&i| known_mask[i]).collect();
        let has_unknown = known.len() < n;
        if has_unknown && known.len() < k {
            return Err(Error::InvalidArgument(format!(
                "k-IDW with k = {k} needs at least {k} known sensors, found {}",
                known.len()
            )));
        }
        let mut weights = Vec::new();
        for u in (0..n).filter(|&i| !known_mask[i]) {
            let mut cand: Vec<(f64, usize)> = known.iter().map(|&j| (dist.get(u, j), j)).collect();
            // Stable on equal distances, so ties go to the lower node index.
            cand.sort_by(|a, b| a.0.total_cmp(&b.0));
            cand.truncate(k);
            let w = if cand[0].0 == 0.0 {
                vec![(cand[0].1, 1.0)]
            } else {
                let raw: Vec<(usize, f64)> = cand.iter().map(|&(d, j)| (j, d.powf(-rho))).collect();
                let total: f64 = raw.iter().map(|(_, w)| w).sum();
                raw.into_iter().map(|(j, w)| (j, w / total)).collect()
            };
            weights.push((u, w));
        }
        Ok(IdwPlan {
            known_mask: known_mask.to_vec(),
            weights,
        })
    }

    pub fn known_mask(&self) -> &[bool] {
        &self.known_mask
    }

    /// Neighbor weights for unknown node `u`, if `u` is unknown.
    pub fn neighbors(&self, u: usize) -> Option<&[(usize, f64)]> {
        self.weights
            .iter()
            .find(|(node, _)| *node == u)
            .map(|(_, w)| w.as_slice())
    }

    pub fn apply(&self, frame: &Matrix) -> Result<PseudoFrame> {
        if frame.rows() != self.known_mask.len() {
            return Err(Error::shape(
                "k_idw",
                frame.shape(),
                (self.known_mask.len(), frame.cols()),
            ));
        }
        let mut values = frame.clone();
        for (u, w) in &self.weights {
            let row = values.row_mut(*u);
            row.iter_mut().for_each(|x| *x = 0.0);
            for &(j, wj) in w {
                for (c, x) in row.iter_mut().enumerate() {
                    *x += wj * frame.get(j, c);
                }
            }
        }
        Ok(PseudoFrame {
            values,
            source_mask: self.known_mask.clone(),
        })
    }
}

/// Fills every unknown row of `frame` with the inverse-distance weighted mean
/// of its `k` nearest known sensors (weights `d^-rho`). A known sensor at
/// distance zero is copied directly. Known rows pass through unchanged.
pub fn k_idw(
    frame: &Matrix,
    known_mask: &[bool],
    dist: &Matrix,
    k: usize,
    rho: f64,
) -> Result<PseudoFrame> {
    IdwPlan::new(known_mask, dist, k, rho)?.apply(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_dist(pos: &[f64]) -> Matrix {
        let n = pos.len();
        let mut d = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                d.set(i, j, (pos[i] - pos[j]).abs());
            }
        }
        d
    }

    #[test]
    fn single_neighbor_copies_nearest() {
        let d = line_dist(&[0.0, 1.0, 5.0]);
        let f = Matrix::column(&[7.0, 0.0, -3.0]);
        let out = k_idw(&f, &[true, false, true], &d, 1, 1.0).unwrap();
        assert_eq!(out.values.get(1, 0), 7.0);
        assert_eq!(out.source_mask, vec![true, false, true]);
    }

    #[test]
    fn equal_distances_give_plain_mean() {
        let d = line_dist(&[-1.0, 0.0, 1.0]);
        let f = Matrix::column(&[2.0, 99.0, 4.0]);
        let out = k_idw(&f, &[true, false, true], &d, 2, 1.0).unwrap();
        assert_eq!(out.values.get(1, 0), 3.0);
    }

    #[test]
    fn hand_evaluated_weights() {
        // values {0, 3} at distances {1, 2}: (0*1 + 3*0.5) / 1.5 = 1
        let d = line_dist(&[1.0, 0.0, 2.0]);
        let f = Matrix::column(&[0.0, 0.0, 3.0]);
        let out = k_idw(&f, &[true, false, true], &d, 2, 1.0).unwrap();
        assert!((out.values.get(1, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn co_located_sensor_is_copied() {
        let d = line_dist(&[0.0, 0.0, 1.0]);
        let f = Matrix::column(&[5.0, 0.0, 1.0]);
        let out = k_idw(&f, &[true, false, true], &d, 2, 1.0).unwrap();
        assert_eq!(out.values.get(1, 0), 5.0);
    }

    #[test]
    fn too_few_known_sensors() {
        let d = line_dist(&[0.0, 1.0, 2.0]);
        let f = Matrix::column(&[1.0, 2.0, 3.0]);
        assert!(k_idw(&f, &[true, false, false], &d, 2, 1.0).is_err());
        assert!(k_idw(&f, &[true, false, true], &d, 2, 0.0).is_err());
    }

    #[test]
    fn ties_at_kth_neighbor_prefer_lower_index() {
        let d = line_dist(&[-1.0, 0.0, 1.0]);
        let plan = IdwPlan::new(&[true, false, true], &d, 1, 1.0).unwrap();
        assert_eq!(plan.neighbors(1).unwrap(), &[(0, 1.0)]);
    }

    proptest! {
        #[test]
        fn synthesized_rows_within_neighbor_envelope(
            pos in proptest::collection::vec(-10.0f64..10.0, 8),
            vals in proptest::collection::vec(-5.0f64..5.0, 8),
            k in 1usize..4,
            scale in 0.1f64..50.0,
        ) {
            let mask = [true, false, true, true, false, true, false, true];
            let d = line_dist(&pos);
            let f = Matrix::column(&vals);
            let plan = IdwPlan::new(&mask, &d, k, 1.0).unwrap();
            let out = plan.apply(&f).unwrap();
            for u in (0..8).filter(|&i| !mask[i]) {
                let nb = plan.neighbors(u).unwrap();
                let lo = nb.iter().map(|&(j, _)| vals[j]).fold(f64::INFINITY, f64::min);
                let hi = nb.iter().map(|&(j, _)| vals[j]).fold(f64::NEG_INFINITY, f64::max);
                let y = out.values.get(u, 0);
                prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
                let wsum: f64 = nb.iter().map(|(_, w)| w).sum();
                prop_assert!((wsum - 1.0).abs() < 1e-12);
            }
            for i in (0..8).filter(|&i| mask[i]) {
                prop_assert_eq!(out.values.get(i, 0), vals[i]);
            }
            // Scaling distances leaves the output unchanged.
            let scaled = k_idw(&f, &mask, &d.scale(scale), k, 1.0).unwrap();
            prop_assert!(scaled.values.max_abs_diff(&out.values) < 1e-12);
        }

        #[test]
        fn permutation_invariant(
            pos in proptest::collection::vec(-10.0f64..10.0, 6),
            vals in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            let mask = [true, false, true, true, false, true];
            let perm = [5usize, 3, 0, 1, 4, 2];
            let out = k_idw(&Matrix::column(&vals), &mask, &line_dist(&pos), 2, 1.0).unwrap();
            let ppos: Vec<f64> = perm.iter().map(|&i| pos[i]).collect();
            let pvals: Vec<f64> = perm.iter().map(|&i| vals[i]).collect();
            let pmask: Vec<bool> = perm.iter().map(|&i| mask[i]).collect();
            let pout = k_idw(&Matrix::column(&pvals), &pmask, &line_dist(&ppos), 2, 1.0).unwrap();
            for (new, &old) in perm.iter().enumerate() {
                // Random positions have no exact ties, so the neighbor sets agree.
                prop_assert!((pout.values.get(new, 0) - out.values.get(old, 0)).abs() < 1e-12);
            }
        }
    }
}
