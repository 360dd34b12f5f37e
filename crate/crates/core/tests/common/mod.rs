//! Scalar-loop reference implementations and fixtures shared by the
//! integration tests. Nothing here touches the tape.

#![allow(dead_code, clippy::needless_range_loop)]

use lsjstn::autodiff::Matrix;
use lsjstn::graph::{KernelConfig, SensorGraph};
use rand::Rng;

pub type Grid = Vec<Vec<f64>>;

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn grid(m: &Matrix) -> Grid {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Largest entrywise gap, scaled by the reference magnitude when above 1.
pub fn max_rel_gap(got: &Matrix, want: &Grid) -> f64 {
    assert_eq!(got.rows(), want.len());
    let mut worst: f64 = 0.0;
    for (i, row) in want.iter().enumerate() {
        assert_eq!(got.cols(), row.len());
        for (j, &w) in row.iter().enumerate() {
            worst = worst.max((got.get(i, j) - w).abs() / w.abs().max(1.0));
        }
    }
    worst
}

/// Sensors at random points of the unit square.
pub fn random_graph(rng: &mut impl Rng, n: usize, directed: bool) -> SensorGraph {
    let coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let base = ((coords[i][0] - coords[j][0]).powi(2)
                + (coords[i][1] - coords[j][1]).powi(2))
            .sqrt();
            // A mild asymmetry so directed graphs really differ per direction.
            let skew = if directed && i < j { 1.3 } else { 1.0 };
            d.set(i, j, base * skew);
        }
    }
    let ids = (0..n).map(|i| format!("n{i}")).collect();
    SensorGraph::from_distances(ids, Some(coords), d, &KernelConfig::default(), directed).unwrap()
}

/// Row-softmaxed additive attention between a target frame and a neighbor frame.
pub fn attention(xt: &Grid, xn: &Grid, w: &Grid, u: &Grid, v: &[f64], b: &[f64]) -> Grid {
    let n = xt.len();
    let d = xt[0].len();
    let f = v.len();
    let proj =
        |x: &Grid, m: &Grid, i: usize, k: usize| (0..d).map(|c| x[i][c] * m[c][k]).sum::<f64>();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut s = vec![0.0; n];
        for (j, sj) in s.iter_mut().enumerate() {
            for k in 0..f {
                *sj += v[k] * (proj(xt, w, i, k) + b[k] + proj(xn, u, j, k)).tanh();
            }
        }
        let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = s.iter().map(|x| (x - mx).exp()).sum();
        for j in 0..n {
            out[i][j] = (s[j] - mx).exp() / total;
        }
    }
    out
}

fn matmul(a: &Grid, b: &Grid) -> Grid {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

/// `sum_t ReLU(sum_dir sum_l Z^l W^l + sum_l b^l)` with
/// `Z^l = gamma X_t + mu (E_t ⊙ A) Z^(l-1)` and `Z^0 = X_t`.
/// `maps[dir][t]`, `adj[dir]`, `w[dir][l]`, `b[l]`.
pub fn joint_conv(
    frames: &[Grid],
    maps: &[Vec<Grid>],
    adj: &[Grid],
    w: &[Vec<Grid>],
    b: &[Vec<f64>],
    gamma: f64,
    mu: f64,
) -> Grid {
    let n = frames[0].len();
    let f = b[0].len();
    let mut out = vec![vec![0.0; f]; n];
    for (t, x) in frames.iter().enumerate() {
        let mut pre = vec![vec![0.0; f]; n];
        for dir in 0..adj.len() {
            let mut modulated = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    modulated[i][j] = maps[dir][t][i][j] * adj[dir][i][j];
                }
            }
            let mut z = x.clone();
            for wl in &w[dir] {
                let prop = matmul(&modulated, &z);
                z = (0..n)
                    .map(|i| {
                        (0..x[0].len())
                            .map(|c| gamma * x[i][c] + mu * prop[i][c])
                            .collect()
                    })
                    .collect();
                let term = matmul(&z, wl);
                for i in 0..n {
                    for k in 0..f {
                        pre[i][k] += term[i][k];
                    }
                }
            }
        }
        for i in 0..n {
            for k in 0..f {
                let bias: f64 = b.iter().map(|bl| bl[k]).sum();
                out[i][k] += (pre[i][k] + bias).max(0.0);
            }
        }
    }
    out
}

/// k nearest known sensors (ties to the lower index), inverse-distance
/// weights `d^-rho`, exact copy at zero distance.
pub fn k_idw(frame: &Grid, known: &[bool], dist: &Grid, k: usize, rho: f64) -> Grid {
    let mut out = frame.clone();
    for u in 0..known.len() {
        if known[u] {
            continue;
        }
        let mut cand: Vec<usize> = (0..known.len()).filter(|&j| known[j]).collect();
        // Insertion sort keeps equal distances in index order.
        for a in 1..cand.len() {
            let mut b = a;
            while b > 0 && dist[u][cand[b]] < dist[u][cand[b - 1]] {
                cand.swap(b, b - 1);
                b -= 1;
            }
        }
        cand.truncate(k);
        for c in 0..frame[0].len() {
            out[u][c] = if dist[u][cand[0]] == 0.0 {
                frame[cand[0]][c]
            } else {
                let mut num = 0.0;
                let mut den = 0.0;
                for &j in &cand {
                    let wgt = 1.0 / dist[u][j].powf(rho);
                    num += wgt * frame[j][c];
                    den += wgt;
                }
                num / den
            };
        }
    }
    out
}

/// `ReLU(tanh(alpha (M1 M2^T - M2 M1^T)))`, optionally row-normalized with
/// all-zero rows left at zero.
pub fn adaptive(m1: &Grid, m2: &Grid, alpha: f64, row_normalize: bool) -> Grid {
    let n = m1.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let s = dot(&m1[i], &m2[j]) - dot(&m2[i], &m1[j]);
            out[i][j] = (alpha * s).tanh().max(0.0);
        }
        if row_normalize {
            let total: f64 = out[i].iter().sum();
            if total > 0.0 {
                out[i].iter_mut().for_each(|x| *x /= total);
            }
        }
    }
    out
}

/// Mean squared error of each head against the target, summed.
pub fn dual_mse(short: &Grid, long: &Grid, target: &Grid) -> f64 {
    let mut a = 0.0;
    let mut b = 0.0;
    let mut count = 0.0;
    for i in 0..target.len() {
        for c in 0..target[i].len() {
            a += (short[i][c] - target[i][c]).powi(2);
            b += (long[i][c] - target[i][c]).powi(2);
            count += 1.0;
        }
    }
    a / count + b / count
}

pub mod suites;
