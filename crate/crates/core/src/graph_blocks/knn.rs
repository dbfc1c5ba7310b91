use super::Result;
use crate::numerics::{NumericsError, Tape, Tensor, Var};

/// Neighbour lists of a k-nearest-neighbour graph, flattened row-major:
/// entries `i*k .. (i+1)*k` are the neighbours of row `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalGraph {
    pub k: usize,
    pub neighbor_idx: Vec<usize>,
}

impl LocalGraph {
    pub fn rows(&self) -> usize {
        self.neighbor_idx.len() / self.k.max(1)
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbor_idx[i * self.k..(i + 1) * self.k]
    }
}

/// The `k` nearest other rows of `f` under squared Euclidean distance,
/// ordered by distance with ties going to the lower index.
pub fn knn_feature_graph(f: &Tensor, k: usize) -> Result<LocalGraph> {
    let n = f.rows();
    if k == 0 || k >= n {
        return Err(NumericsError::Invalid(format!(
            "knn needs 0 < k < N, got k={k}, N={n}"
        )));
    }
    let mut neighbor_idx = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    for i in 0..n {
        let fi = f.row(i);
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| {
            let d: f64 = fi
                .iter()
                .zip(f.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, j)
        }));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_dist);
        neighbor_idx.extend(cand.iter().map(|c| c.1));
    }
    Ok(LocalGraph { k, neighbor_idx })
}

/// `[f_i ‖ f_i − f_j]` for every neighbour `j` of `i`: `[N, d]` → `[N·k, 2d]`.
pub fn edge_features(t: &mut Tape, f: Var, graph: &LocalGraph) -> Result<Var> {
    let (n, _) = t.shape(f);
    if graph.rows() != n {
        return Err(NumericsError::Shape(format!(
            "graph has {} rows, features {n}",
            graph.rows()
        )));
    }
    let centre: Vec<usize> = (0..n)
        .flat_map(|i| std::iter::repeat(i).take(graph.k))
        .collect();
    let fi = t.gather_rows(f, &centre)?;
    let fj = t.gather_rows(f, &graph.neighbor_idx)?;
    let diff = t.sub(fi, fj)?;
    t.concat_cols(&[fi, diff])
}
