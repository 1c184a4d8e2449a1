use mmlab::lp::*;
use proptest::prelude::*;

/// Solves a square system by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Minimum of `c.x` over `A x = b, x >= 0` by visiting every basic solution.
fn vertex_oracle(c: &[f64], rows: &[Vec<f64>], b: &[f64]) -> Option<f64> {
    let (m, n) = (rows.len(), c.len());
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let cols: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
        let a: Vec<Vec<f64>> = rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect();
        if let Some(xb) = solve_square(a, b.to_vec()) {
            if xb.iter().all(|&v| v >= -1e-10) {
                let val: f64 = cols.iter().zip(&xb).map(|(&j, v)| c[j] * v).sum();
                best = Some(best.map_or(val, |bv: f64| bv.min(val)));
            }
        }
    }
    best
}

fn simplex_game(payoff: Vec<Vec<f64>>) -> BilinearGame {
    let (r, c) = (payoff.len(), payoff[0].len());
    BilinearGame::new(payoff, Polytope::simplex(r), Polytope::simplex(c)).unwrap()
}

/// Value of a 2 x N matrix game: the lower envelope of lines in `p` is concave
/// and piecewise linear, so its maximum sits at an endpoint or a crossing.
fn two_row_game_value(g: &[Vec<f64>]) -> f64 {
    let n = g[0].len();
    let line = |j: usize, p: f64| p * g[0][j] + (1.0 - p) * g[1][j];
    let env = |p: f64| (0..n).map(|j| line(j, p)).fold(f64::INFINITY, f64::min);
    let mut cands = vec![0.0, 1.0];
    for i in 0..n {
        for j in i + 1..n {
            let (si, sj) = (g[0][i] - g[1][i], g[0][j] - g[1][j]);
            if (si - sj).abs() > 1e-14 {
                let p = (g[1][j] - g[1][i]) / (si - sj);
                if (0.0..=1.0).contains(&p) {
                    cands.push(p);
                }
            }
        }
    }
    cands.into_iter().map(env).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn diet_problem() {
    // min 2a + 3b, a + b >= 4, a + 3b >= 6 -> (3, 1), value 9.
    let mut lp = LpBuilder::new(Sense::Minimize);
    let a = lp.add_var(2.0);
    let b = lp.add_var(3.0);
    lp.add_row(vec![(a, 1.0), (b, 1.0)], Cmp::Ge, 4.0);
    lp.add_row(vec![(a, 1.0), (b, 3.0)], Cmp::Ge, 6.0);
    let s = lp.solve().unwrap();
    assert!((s.objective - 9.0).abs() < 1e-12);
    assert!((s.x[a] - 3.0).abs() < 1e-12 && (s.x[b] - 1.0).abs() < 1e-12);
    assert!((s.duals[0] - 1.5).abs() < 1e-9 && (s.duals[1] - 0.5).abs() < 1e-9);
}

#[test]
fn maximize_with_free_variable() {
    // max t s.t. t <= x, t <= 1 - x, x in [0, 1] -> t = 1/2.
    let mut lp = LpBuilder::new(Sense::Maximize);
    let t = lp.add_free_var(1.0);
    let x = lp.add_var(0.0);
    lp.add_row(vec![(t, 1.0), (x, -1.0)], Cmp::Le, 0.0);
    lp.add_row(vec![(t, 1.0), (x, 1.0)], Cmp::Le, 1.0);
    lp.add_row(vec![(x, 1.0)], Cmp::Le, 1.0);
    let s = lp.solve().unwrap();
    assert!((s.objective - 0.5).abs() < 1e-12);

    let mut neg = LpBuilder::new(Sense::Minimize);
    let u = neg.add_free_var(1.0);
    neg.add_row(vec![(u, 1.0)], Cmp::Ge, -2.5);
    assert!((neg.solve().unwrap().objective + 2.5).abs() < 1e-12);
}

#[test]
fn transport_problem() {
    // Supplies (0.6, 0.4), demands (0.5, 0.5), cost |i - j|: optimum moves 0.1.
    let mut lp = LpBuilder::new(Sense::Minimize);
    let v: Vec<usize> = (0..4).map(|k| lp.add_var(if k / 2 == k % 2 { 0.0 } else { 1.0 })).collect();
    lp.add_row(vec![(v[0], 1.0), (v[1], 1.0)], Cmp::Eq, 0.6);
    lp.add_row(vec![(v[2], 1.0), (v[3], 1.0)], Cmp::Eq, 0.4);
    lp.add_row(vec![(v[0], 1.0), (v[2], 1.0)], Cmp::Eq, 0.5);
    lp.add_row(vec![(v[1], 1.0), (v[3], 1.0)], Cmp::Eq, 0.5);
    assert!((lp.solve().unwrap().objective - 0.1).abs() < 1e-12);
}

#[test]
fn infeasible_and_unbounded_are_reported() {
    let mut lp = LpBuilder::new(Sense::Minimize);
    let x = lp.add_var(1.0);
    lp.add_row(vec![(x, 1.0)], Cmp::Le, -1.0);
    assert!(matches!(lp.solve(), Err(LpError::Infeasible(_))));

    let mut lp = LpBuilder::new(Sense::Maximize);
    let x = lp.add_var(1.0);
    lp.add_row(vec![(x, 1.0)], Cmp::Ge, 1.0);
    assert!(matches!(lp.solve(), Err(LpError::Unbounded(_))));

    assert!(LpProblem::new(vec![1.0], vec![vec![1.0, 2.0]], vec![1.0]).is_err());
}

#[test]
fn polytope_optimizes_over_simplex() {
    let s = Polytope::simplex(4).optimize(&[0.3, -0.2, 0.7, 0.1], Sense::Minimize).unwrap();
    assert!((s.objective + 0.2).abs() < 1e-12);
    assert!((s.x[1] - 1.0).abs() < 1e-12);
    let s = Polytope::simplex(4).optimize(&[0.3, -0.2, 0.7, 0.1], Sense::Maximize).unwrap();
    assert!((s.objective - 0.7).abs() < 1e-12);
}

#[test]
fn rock_paper_scissors() {
    let g = vec![vec![0.0, -1.0, 1.0], vec![1.0, 0.0, -1.0], vec![-1.0, 1.0, 0.0]];
    let s = solve_bilinear_game(&simplex_game(g)).unwrap();
    assert!(s.value.abs() < 1e-10 && s.min_max_value.abs() < 1e-10);
    for p in s.max_strategy.iter().chain(&s.min_strategy) {
        assert!((p - 1.0 / 3.0).abs() < 1e-9);
    }
    assert!(s.saddle_gap < 1e-10);
}

#[test]
fn dominated_column_is_ignored() {
    let g = vec![vec![3.0, 1.0, 5.0], vec![0.0, 2.0, 6.0]];
    let s = solve_bilinear_game(&simplex_game(g.clone())).unwrap();
    assert!((s.value - two_row_game_value(&g)).abs() < 1e-10);
    assert!((s.value - 1.5).abs() < 1e-10);
    assert!(s.min_strategy[2] < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn simplex_matches_vertex_enumeration(
        c in prop::collection::vec(-1.0f64..1.0, 6),
        a in prop::collection::vec(-1.0f64..1.0, 12),
        x0 in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        // Rows: a scaled simplex (bounded region) and two general rows; the
        // right-hand side is generated from a nonnegative point so it is feasible.
        let rows = vec![vec![1.0; 6], a[..6].to_vec(), a[6..].to_vec()];
        let b: Vec<f64> = rows.iter().map(|r| r.iter().zip(&x0).map(|(u, v)| u * v).sum()).collect();
        let s = solve_lp(&LpProblem::new(c.clone(), rows.clone(), b.clone()).unwrap()).unwrap();
        prop_assert_eq!(s.status, LpStatus::Optimal);
        let oracle = vertex_oracle(&c, &rows, &b).unwrap();
        prop_assert!((s.objective - oracle).abs() < 1e-8, "{} vs {}", s.objective, oracle);
        let dual: f64 = s.y.iter().zip(&b).map(|(y, v)| y * v).sum();
        prop_assert!((s.objective - dual).abs() < 1e-8);
        for (r, rhs) in rows.iter().zip(&b) {
            let lhs: f64 = r.iter().zip(&s.x).map(|(u, v)| u * v).sum();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
        prop_assert!(s.x.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn two_row_games_match_envelope(g in prop::collection::vec(-2.0f64..2.0, 8)) {
        let m = vec![g[..4].to_vec(), g[4..].to_vec()];
        let s = solve_bilinear_game(&simplex_game(m.clone())).unwrap();
        prop_assert!((s.value - two_row_game_value(&m)).abs() < 1e-9);
        prop_assert!((s.value - s.min_max_value).abs() < 1e-9);
        prop_assert!(s.saddle_gap < 1e-9);
    }

    #[test]
    fn swapping_roles_negates_the_value(g in prop::collection::vec(-1.0f64..1.0, 12)) {
        let m: Vec<Vec<f64>> = g.chunks(4).map(|r| r.to_vec()).collect();
        let s = solve_bilinear_game(&simplex_game(m.clone())).unwrap();
        let neg: Vec<Vec<f64>> = (0..4).map(|k| (0..3).map(|i| -m[i][k]).collect()).collect();
        let t = solve_bilinear_game(&simplex_game(neg)).unwrap();
        prop_assert!((s.value + t.value).abs() < 1e-9);
    }
}
