//! Minimum-cost bipartite assignment.
//!
//! Shortest-augmenting-path Hungarian method with dual potentials, O(n³).
//! Costs stay in f64 the whole way so small distance matrices solve to the
//! exact optimum; forbidden pairs use a large finite sentinel instead of
//! infinity to keep the potential arithmetic well-conditioned.

/// Cost assigned to forbidden pairs and rectangular padding. Large enough to
/// dominate any realistic distance sum, small enough that real costs keep
/// most of their mantissa when reduced against it.
const FORBIDDEN: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub row: usize,
    pub col: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Realized matches sorted by row; each row and column appears at most
    /// once.
    pub matches: Vec<Match>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl AssignmentResult {
    /// Sum of matched costs, accumulated in row order.
    pub fn total_cost(&self) -> f64 {
        self.matches.iter().map(|m| m.cost).sum()
    }

    /// Dense 0/1 matrix form of the realized matching.
    pub fn matrix(&self) -> Vec<Vec<bool>> {
        let mut m = vec![vec![false; self.n_cols]; self.n_rows];
        for mt in &self.matches {
            m[mt.row][mt.col] = true;
        }
        m
    }
}

/// Minimum-total-cost matching of rows to columns. Entries greater than
/// `max_cost` are excluded; maximal cardinality over the remaining pairs is
/// preferred, with total cost minimized among those. Rectangular inputs are
/// padded internally.
pub fn solve(cost: &[Vec<f64>], max_cost: f64) -> AssignmentResult {
    let n_rows = cost.len();
    let n_cols = cost.first().map_or(0, Vec::len);
    if n_rows == 0 || n_cols == 0 {
        return AssignmentResult {
            n_rows,
            n_cols,
            matches: vec![],
            unmatched_rows: (0..n_rows).collect(),
            unmatched_cols: (0..n_cols).collect(),
        };
    }
    let s = n_rows.max(n_cols);
    // square matrix: gated entries cost FORBIDDEN, padding costs 0 so dummy
    // rows/columns absorb the remainder without biasing the real part
    let get = |i: usize, j: usize| -> f64 {
        if i < n_rows && j < n_cols {
            let c = cost[i][j];
            if c <= max_cost {
                c
            } else {
                FORBIDDEN
            }
        } else {
            0.0
        }
    };

    // potentials u, v; p[j] = row matched to column j (0 = none); 1-indexed
    let mut u = vec![0.0f64; s + 1];
    let mut v = vec![0.0f64; s + 1];
    let mut p = vec![0usize; s + 1];
    let mut way = vec![0usize; s + 1];
    for i in 1..=s {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; s + 1];
        let mut used = vec![false; s + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=s {
                if used[j] {
                    continue;
                }
                let cur = get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=s {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // unwind the augmenting path
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut matches = Vec::new();
    let mut row_matched = vec![false; n_rows];
    let mut col_matched = vec![false; n_cols];
    for j in 1..=s {
        let i = p[j];
        if i == 0 {
            continue;
        }
        let (row, col) = (i - 1, j - 1);
        if row < n_rows && col < n_cols && cost[row][col] <= max_cost {
            matches.push(Match {
                row,
                col,
                cost: cost[row][col],
            });
            row_matched[row] = true;
            col_matched[col] = true;
        }
    }
    matches.sort_by_key(|m| m.row);
    AssignmentResult {
        n_rows,
        n_cols,
        matches,
        unmatched_rows: (0..n_rows).filter(|r| !row_matched[*r]).collect(),
        unmatched_cols: (0..n_cols).filter(|c| !col_matched[*c]).collect(),
    }
}
