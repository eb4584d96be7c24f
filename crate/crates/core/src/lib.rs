//! Cluster-robust inference for linear models with fixed effects.
//!
//! The crate estimates focal coefficients by weighted least squares after
//! absorbing between- and within-cluster fixed effects, computes sandwich
//! variance estimators (CR0, CR1, CR1S, CR2, CR3), and tests linear
//! hypotheses with small-sample corrections:
//!
//! - [`crve`] builds bias-reduced (CR2) adjustment matrices from a working
//!   covariance model, using a Moore-Penrose square root so the estimator
//!   stays defined in rank-deficient fixed-effect panels.
//! - [`inference`] provides Satterthwaite t-tests and the approximate
//!   Hotelling's T² (AHT) F-test whose degrees of freedom are matched to the
//!   mean and total variance of the robust variance estimator.
//! - [`simlab`] regenerates block-randomized, cluster-randomized and
//!   difference-in-differences simulation designs and measures rejection
//!   rates of the tests.
//!
//! ```
//! use crobust::model_frame::{build_design, Column, ModelSpec, Table};
//! use crobust::{crve, estimator, inference, WorkingModel};
//!
//! let table = Table::new(vec![
//!     ("y".into(), Column::Numeric(vec![1.0, 2.1, 2.9, 4.2, 5.1, 5.8, 7.2, 8.1])),
//!     ("x".into(), Column::Numeric(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0])),
//!     ("g".into(), Column::Text(["a", "a", "b", "b", "c", "c", "d", "d"].map(String::from).to_vec())),
//! ])?;
//! let spec = ModelSpec::new("y", &["x"], "g").with_within(&["g"]);
//! let design = build_design(&table, &spec)?;
//! let fit = estimator::fit(&design)?;
//! let phi = WorkingModel::identity().covariance(&design)?;
//! let v = crve::vcov(&fit, &crve::AdjustmentKind::cr2(), &phi)?;
//! let nu = inference::satterthwaite_df(&fit, &v, &phi, &[1.0])?;
//! assert!(nu > 0.0);
//! # Ok::<(), crobust::Error>(())
//! ```

pub mod crve;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod matkern;
pub mod model_frame;
pub mod simlab;

pub use error::{Error, Result};
pub use matkern::SymMatrix;
pub use model_frame::{ClusteredDesign, Constraint, WorkingModel};
