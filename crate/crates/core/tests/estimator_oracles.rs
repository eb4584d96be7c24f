mod common;

use common::*;
use crobust::estimator::{absorb, fit, refit, true_variance, Blocks, ProjectionScope};
use crobust::model_frame::{build_design, ModelSpec};
use crobust::SymMatrix;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stack(v: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = v.iter().map(|b| b.len()).sum();
    DVector::from_iterator(n, v.iter().flat_map(|b| b.iter().copied()))
}

#[test]
fn beta_matches_full_dummy_solve() {
    for (name, design) in corpus() {
        let f = fit(&design).unwrap();
        let direct = dense(&design).beta();
        let rel = (&f.beta - &direct).norm() / direct.norm();
        assert!(rel < 1e-10, "{name}: relative difference {rel:e}");
    }
}

#[test]
fn residuals_are_full_model_residuals() {
    for (name, design) in corpus() {
        let f = fit(&design).unwrap();
        let d = dense(&design);
        let e = d.residual_maker() * &d.y;
        let got = stack(&f.residuals);
        assert!((&got - &e).norm() < 1e-10 * d.y.norm(), "{name}");
    }
}

#[test]
fn absorbed_focal_matches_explicit_residualization() {
    for (name, design) in corpus() {
        let a = absorb(&design).unwrap();
        let d = dense(&design);
        let expected = d.r_dd();
        for i in 0..design.m() {
            let want = d.rows(&expected, i);
            assert!(
                (a.r_dd(i) - &want).amax() < 1e-10 * expected.amax(),
                "{name} cluster {i}"
            );
        }
    }
}

#[test]
fn absorbed_columns_are_orthogonal_to_fixed_effects() {
    for (name, design) in corpus() {
        let a = absorb(&design).unwrap();
        let d = dense(&design);
        let r_dd: DMatrix<f64> = {
            let mut out = DMatrix::zeros(d.n(), design.r());
            for i in 0..design.m() {
                let (row, ni) = d.ranges[i];
                out.view_mut((row, 0), (ni, design.r()))
                    .copy_from(a.r_dd(i));
            }
            out
        };
        let fe =
            d.x.columns(design.r(), d.x.ncols() - design.r())
                .into_owned();
        let cross = r_dd.transpose() * &d.w * fe;
        let scale = r_dd.norm() * d.x.norm();
        assert!(cross.amax() <= 1e-10 * scale, "{name}");
    }
}

#[test]
fn factored_projection_equals_dense_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (name, design) in corpus() {
        let a = absorb(&design).unwrap();
        let d = dense(&design);
        let h = d.residual_maker();
        let chol: Vec<DMatrix<f64>> = design
            .clusters()
            .iter()
            .map(|c| DMatrix::identity(c.n(), c.n()))
            .collect();
        let v = correlated_errors(&mut rng, &chol);
        let mut blocks: Blocks = v
            .iter()
            .map(|b| DMatrix::from_column_slice(b.len(), 1, b.as_slice()))
            .collect();
        a.project_residual(&mut blocks, ProjectionScope::Full);
        let got = DVector::from_iterator(d.n(), blocks.iter().flat_map(|b| b.iter().copied()));
        let want = &h * stack(&v);
        assert!((&got - &want).norm() < 1e-10 * stack(&v).norm(), "{name}");

        let mut blocks: Blocks = v
            .iter()
            .map(|b| DMatrix::from_column_slice(b.len(), 1, b.as_slice()))
            .collect();
        a.project_residual_t(&mut blocks, ProjectionScope::Full);
        let got = DVector::from_iterator(d.n(), blocks.iter().flat_map(|b| b.iter().copied()));
        let want = h.transpose() * stack(&v);
        assert!(
            (&got - &want).norm() < 1e-10 * stack(&v).norm(),
            "{name} transpose"
        );
    }
}

#[test]
fn residual_covariance_blocks_agree_across_methods() {
    for (name, design) in corpus() {
        let a = absorb(&design).unwrap();
        let d = dense(&design);
        let sigma = cs_blocks(&design, 0.35);
        let h = d.residual_maker();
        let full = &h * block_diag(&sigma) * h.transpose();
        let fast = a.residual_cov_diag(&sigma, ProjectionScope::Full);
        for i in 0..design.m() {
            let want = d.block(&full, i, i);
            let slow = a.residual_cov_block(&sigma, i, ProjectionScope::Full);
            assert!(
                (&fast[i] - &want).amax() < 1e-10 * want.amax().max(1.0),
                "{name} fast {i}"
            );
            assert!(
                (&slow - &want).amax() < 1e-10 * want.amax().max(1.0),
                "{name} factored {i}"
            );
        }
    }
}

#[test]
fn within_projection_is_idempotent() {
    for (name, design) in corpus() {
        let a = absorb(&design).unwrap();
        for i in 0..design.m() {
            let p = a.within_projector(i, ProjectionScope::Full);
            assert!((&p * &p - &p).amax() < 1e-12, "{name} {i}");
        }
    }
}

#[test]
fn refit_matches_fresh_fit() {
    let design = corpus().remove(4).1;
    let f0 = fit(&design).unwrap();
    let y: Vec<DVector<f64>> = design
        .clusters()
        .iter()
        .map(|c| c.y.map(|v| 2.0 * v + 1.0))
        .collect();
    let f1 = refit(&f0.absorbed, &y).unwrap();
    let rel = (&f1.beta - 2.0 * &f0.beta).norm() / f0.beta.norm();
    assert!(rel < 1e-12);
}

#[test]
fn gls_weights_collapse_the_sandwich() {
    let design = corpus().remove(2).1;
    let phi = cs_blocks(&design, 0.4);
    let w: Vec<SymMatrix> = phi
        .iter()
        .map(|p| crobust::matkern::inv_pd(p).unwrap())
        .collect();
    let f = fit(&design.with_weights(w).unwrap()).unwrap();
    let v = true_variance(&f, &phi).unwrap();
    assert!(rel_diff(v.as_matrix(), f.absorbed.m_r().as_matrix()) < 1e-10);
}

#[test]
fn true_variance_matches_monte_carlo() {
    let table = mixed_table(21, 6);
    let design = build_design(
        &table,
        &ModelSpec::new("y", &["one", "x1"], "g").with_weights("wt"),
    )
    .unwrap();
    let sigma = cs_blocks(&design, 0.5);
    let f0 = fit(&design).unwrap();
    let target = true_variance(&f0, &sigma).unwrap();
    let chol = lower_factors(&sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let reps = 200_000;
    let mut draws: Vec<DVector<f64>> = Vec::with_capacity(reps);
    for _ in 0..reps {
        let y = correlated_errors(&mut rng, &chol);
        draws.push(refit(&f0.absorbed, &y).unwrap().beta);
    }
    // sample second moments (true mean is zero)
    let r = design.r();
    for j in 0..r {
        for k in j..r {
            let prods: Vec<f64> = draws.iter().map(|b| b[j] * b[k]).collect();
            let mean = prods.iter().sum::<f64>() / reps as f64;
            let var =
                prods.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            assert!(
                (mean - target[(j, k)]).abs() < 3.0 * se + 1e-12,
                "({j},{k}): {mean} vs {}",
                target[(j, k)]
            );
        }
    }
}
