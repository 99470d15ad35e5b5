//! Checks the Jacobi SVD and the mixer against nalgebra, which serves as an
//! independent oracle (eigendecomposition of the Gram matrix).

use std::collections::BTreeMap;

use forge_core::adapter::{mix_mean, mix_svd, AdapterDelta};
use forge_core::linalg::{svd, truncated_svd, Matrix};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Squared singular values, descending, from the eigenvalues of `A^T A`.
fn gram_eigenvalues(m: &Matrix) -> Vec<f64> {
    let a = to_na(m);
    let mut ev: Vec<f64> = SymmetricEigen::new(a.transpose() * &a)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0))
        .collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Best rank-r approximation built from the Gram eigenvectors: `A V_r V_r^T`.
fn gram_rank_r(m: &Matrix, r: usize) -> DMatrix<f64> {
    let a = to_na(m);
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let v = DMatrix::from_fn(m.cols(), r, |i, j| eig.eigenvectors[(i, order[j])]);
    &a * &v * v.transpose()
}

fn delta(name: &str, m: Matrix, rank: usize) -> AdapterDelta {
    AdapterDelta {
        name: name.into(),
        layers: BTreeMap::from([("w".to_string(), m)]),
        effective_rank: rank,
    }
}

#[test]
fn singular_values_match_gram_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (rows, cols) in [(8, 6), (6, 8), (5, 5), (12, 3), (1, 4)] {
        for _ in 0..20 {
            let a = random(rows, cols, &mut rng);
            let ours = svd(&a).unwrap();
            let oracle = gram_eigenvalues(&a);
            for (s, l) in ours.sigma.iter().zip(&oracle) {
                assert!((s * s - l).abs() <= 1e-10 * oracle[0].max(1.0), "{s}^2 vs {l}");
            }
            assert!(ours.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}

#[test]
fn rank3_mix_agrees_with_gram_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let d1 = delta("a", random(8, 6, &mut rng), 3);
        let d2 = delta("b", random(8, 6, &mut rng), 2);
        let mean = mix_mean(&d1, &d2).unwrap().layers["w"].clone();
        let ours = mix_svd(&d1, &d2, 3, 2).unwrap();
        assert_eq!(ours.effective_rank, 3);
        let ours_err = to_na(&mean.sub(&ours.layers["w"]).unwrap()).norm();
        let oracle_err = (to_na(&mean) - gram_rank_r(&mean, 3)).norm();
        assert!((ours_err - oracle_err).abs() < 1e-8, "{ours_err} vs {oracle_err}");
    }
}

#[test]
fn mix_is_symmetric_and_factors_are_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let a = delta("a", random(7, 5, &mut rng), 2);
        let b = delta("b", random(7, 5, &mut rng), 3);
        let ab = mix_svd(&a, &b, 2, 3).unwrap();
        let ba = mix_svd(&b, &a, 3, 2).unwrap();
        assert!(ab.layers["w"].max_abs_diff(&ba.layers["w"]) < 1e-12);

        let t = truncated_svd(&mix_mean(&a, &b).unwrap().layers["w"], 3).unwrap();
        for m in [&t.u, &t.v] {
            let gram = m.transpose().matmul(m).unwrap();
            assert!(gram.max_abs_diff(&Matrix::identity(3)) < 1e-10);
        }
        for j in 0..3 {
            let col = t.u.column(j);
            let big = col.iter().copied().max_by(|x, y| x.abs().total_cmp(&y.abs())).unwrap();
            assert!(big > 0.0, "sign convention");
        }
    }
}
