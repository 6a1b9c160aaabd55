//! Smith normal form of small integer matrices.

/// Result of `D = U · A · V` with `U`, `V` unimodular and `D` diagonal.
/// Only `V` is kept; the row transform is not needed by callers.
#[derive(Clone, Debug)]
pub struct SmithForm {
    /// Nonzero diagonal entries of `D`, positive, each dividing the next.
    pub diagonal: Vec<i64>,
    /// Column transform, `ncols × ncols`.
    pub v: Vec<Vec<i64>>,
}

pub fn smith_normal_form(a: &[Vec<i64>], ncols: usize) -> SmithForm {
    let m = a.len();
    let mut d: Vec<Vec<i64>> = a.to_vec();
    let mut v: Vec<Vec<i64>> = (0..ncols).map(|i| (0..ncols).map(|j| i64::from(i == j)).collect()).collect();
    let mut diagonal = Vec::new();

    let swap_cols = |d: &mut Vec<Vec<i64>>, v: &mut Vec<Vec<i64>>, i: usize, j: usize| {
        for row in d.iter_mut() {
            row.swap(i, j);
        }
        for row in v.iter_mut() {
            row.swap(i, j);
        }
    };
    // col_i -= q * col_j
    let sub_col = |d: &mut Vec<Vec<i64>>, v: &mut Vec<Vec<i64>>, i: usize, j: usize, q: i64| {
        for row in d.iter_mut() {
            row[i] -= q * row[j];
        }
        for row in v.iter_mut() {
            row[i] -= q * row[j];
        }
    };

    let mut t = 0;
    while t < m.min(ncols) {
        // pivot: smallest nonzero magnitude in the trailing block
        let mut best: Option<(usize, usize)> = None;
        for i in t..m {
            for j in t..ncols {
                if d[i][j] != 0 && best.is_none_or(|(bi, bj)| d[i][j].abs() < d[bi][bj].abs()) {
                    best = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = best else { break };
        d.swap(t, pi);
        swap_cols(&mut d, &mut v, t, pj);

        loop {
            let p = d[t][t];
            let mut dirty = false;
            for i in t + 1..m {
                let q = d[i][t].div_euclid(p);
                if q != 0 {
                    for j in 0..ncols {
                        d[i][j] -= q * d[t][j];
                    }
                }
                if d[i][t] != 0 {
                    dirty = true;
                }
            }
            for j in t + 1..ncols {
                let q = d[t][j].div_euclid(p);
                if q != 0 {
                    sub_col(&mut d, &mut v, j, t, q);
                }
                if d[t][j] != 0 {
                    dirty = true;
                }
            }
            if !dirty {
                // divisibility of the remaining block
                let mut bad = None;
                'outer: for i in t + 1..m {
                    for j in t + 1..ncols {
                        if d[i][j] % p != 0 {
                            bad = Some(i);
                            break 'outer;
                        }
                    }
                }
                match bad {
                    None => break,
                    Some(i) => {
                        for j in 0..ncols {
                            d[t][j] += d[i][j];
                        }
                    }
                }
            }
            // move the smallest remainder into the pivot slot
            let mut best = (t, t);
            for i in t..m {
                if d[i][t] != 0 && d[i][t].abs() < d[best.0][best.1].abs() {
                    best = (i, t);
                }
            }
            for j in t..ncols {
                if d[t][j] != 0 && d[t][j].abs() < d[best.0][best.1].abs() {
                    best = (t, j);
                }
            }
            if best.0 != t {
                d.swap(t, best.0);
            }
            if best.1 != t {
                swap_cols(&mut d, &mut v, t, best.1);
            }
        }
        if d[t][t] < 0 {
            for j in 0..ncols {
                d[t][j] = -d[t][j];
            }
        }
        diagonal.push(d[t][t]);
        t += 1;
    }
    SmithForm { diagonal, v }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply_check(a: &[Vec<i64>], ncols: usize) {
        let s = smith_normal_form(a, ncols);
        for w in s.diagonal.windows(2) {
            assert_eq!(w[1] % w[0], 0);
        }
        // A·V must have its first r columns divisible by the invariants in the
        // lattice sense: columns r.. of A·V vanish.
        let r = s.diagonal.len();
        for row in a {
            for c in r..ncols {
                let val: i64 = (0..ncols).map(|k| row[k] * s.v[k][c]).sum();
                assert_eq!(val, 0);
            }
        }
    }

    #[test]
    fn single_weights() {
        assert_eq!(smith_normal_form(&[vec![3]], 1).diagonal, vec![3]);
        assert_eq!(smith_normal_form(&[vec![2], vec![3]], 1).diagonal, vec![1]);
        assert_eq!(smith_normal_form(&[vec![-4]], 1).diagonal, vec![4]);
    }

    #[test]
    fn two_by_two() {
        let a = vec![vec![2, 4], vec![6, 8]];
        let s = smith_normal_form(&a, 2);
        assert_eq!(s.diagonal, vec![2, 4]);
        apply_check(&a, 2);
        let a = vec![vec![1, 1, 0], vec![0, 2, 3]];
        apply_check(&a, 3);
    }

    #[test]
    fn rank_deficient() {
        let a = vec![vec![1, 2], vec![2, 4]];
        let s = smith_normal_form(&a, 2);
        assert_eq!(s.diagonal, vec![1]);
        apply_check(&a, 2);
    }
}
