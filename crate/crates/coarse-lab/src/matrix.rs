//! Symmetric distance matrices stored as a row-major lower triangle, plus
//! all-pairs-shortest-path closures used by the chain quasimetric.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Threshold below which the closure runs Floyd-Warshall; larger matrices
/// use per-source Dijkstra. Both give identical results; the split only
/// matters for memory locality.
pub const FLOYD_WARSHALL_LIMIT: usize = 2048;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("lower triangle of length {0} does not match any square size")]
    BadTriangleLength(usize),
}

/// Symmetric n x n matrix with only the lower triangle (diagonal included)
/// stored, in row-major order. Serializes as the bare triangle vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    lower: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix {
            n,
            lower: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(n: usize, mut f: F) -> Self {
        let mut m = SymmetricMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                m.lower[i * (i + 1) / 2 + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_lower(lower: Vec<f64>) -> Result<Self, MatrixError> {
        let len = lower.len();
        let n = ((((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1)) / 2;
        if n * (n + 1) / 2 != len {
            return Err(MatrixError::BadTriangleLength(len));
        }
        Ok(SymmetricMatrix { n, lower })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        r * (r + 1) / 2 + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[Self::idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.lower[Self::idx(i, j)] = v;
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// Dense row-major copy; the delta scan wants contiguous rows.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = self.get(i, j);
            }
        }
        d
    }

    /// max over triples of d(i,k) - d(i,j) - d(j,k); <= 0 means the triangle
    /// inequality holds.
    pub fn max_triangle_defect(&self) -> f64 {
        let n = self.n;
        let mut worst = f64::NEG_INFINITY;
        if n < 3 {
            return 0.0;
        }
        for i in 0..n {
            for k in 0..n {
                if i == k {
                    continue;
                }
                let dik = self.get(i, k);
                for j in 0..n {
                    if j == i || j == k {
                        continue;
                    }
                    let defect = dik - self.get(i, j) - self.get(j, k);
                    if defect > worst {
                        worst = defect;
                    }
                }
            }
        }
        worst
    }
}

impl Serialize for SymmetricMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.lower.iter())
    }
}

impl<'de> Deserialize<'de> for SymmetricMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let lower = Vec::<f64>::deserialize(deserializer)?;
        SymmetricMatrix::from_lower(lower).map_err(D::Error::custom)
    }
}

/// Shortest-path closure over the complete graph whose edge weights are the
/// matrix entries. Entries must be non-negative with a zero diagonal.
pub fn apsp(m: &SymmetricMatrix) -> SymmetricMatrix {
    if m.n() <= FLOYD_WARSHALL_LIMIT {
        apsp_floyd_warshall(m)
    } else {
        apsp_dijkstra(m)
    }
}

pub fn apsp_floyd_warshall(m: &SymmetricMatrix) -> SymmetricMatrix {
    let n = m.n();
    let mut d = m.to_dense();
    for k in 0..n {
        for i in 0..n {
            if k == i {
                continue;
            }
            let dik = d[i * n + k];
            if !dik.is_finite() {
                continue;
            }
            let (row_k, row_i) = if k < i {
                let (a, b) = d.split_at_mut(i * n);
                (&a[k * n..k * n + n], &mut b[..n])
            } else {
                let (a, b) = d.split_at_mut(k * n);
                let row_i = &mut a[i * n..i * n + n];
                (&b[..n] as &[f64], row_i)
            };
            for j in 0..n {
                let via = dik + row_k[j];
                if via < row_i[j] {
                    row_i[j] = via;
                }
            }
        }
    }
    SymmetricMatrix::from_fn(n, |i, j| d[i * n + j].min(d[j * n + i]))
}

pub fn apsp_dijkstra(m: &SymmetricMatrix) -> SymmetricMatrix {
    let n = m.n();
    let mut out = SymmetricMatrix::zeros(n);
    let mut dist = vec![0.0f64; n];
    let mut done = vec![false; n];
    for src in 0..n {
        for v in 0..n {
            dist[v] = m.get(src, v);
            done[v] = false;
        }
        dist[src] = 0.0;
        // dense Dijkstra: the graph is complete, a heap would not help
        for _ in 0..n {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for v in 0..n {
                if !done[v] && dist[v] < best_d {
                    best = v;
                    best_d = dist[v];
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            for v in 0..n {
                if !done[v] {
                    let via = best_d + m.get(best, v);
                    if via < dist[v] {
                        dist[v] = via;
                    }
                }
            }
        }
        for v in 0..=src {
            out.set(src, v, dist[v]);
        }
    }
    out
}
