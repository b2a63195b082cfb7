//! Constructive isometric embeddings on the unit ball.
//!
//! Grids, fields, finite differences, Hölder norms, dense linear algebra, periodic profiles and
//! the Poisson solver are generic over `f32`/`f64` through [`Real`]; the jet machinery,
//! oscillatory steps, perturbation solver and pipeline run in `f64`.

pub mod decomposition;
pub mod error;
pub mod fd;
pub mod field;
pub mod free_maps;
pub mod grid;
pub mod holder;
pub mod jet;
pub mod linalg;
pub mod oscillator;
pub mod periodic;
pub mod perturbation;
pub mod pipeline;
pub mod poisson;
pub mod real;
pub mod smooth;

pub use error::{Error, Result};
pub use field::FieldKind;
pub use real::Real;

pub type BallGrid = grid::BallGrid<f64>;
pub type BallGrid32 = grid::BallGrid<f32>;
pub type Field = field::Field<f64>;
pub type Field32 = field::Field<f32>;
pub type Jet2 = fd::Jet2<f64>;
pub type Jet2F32 = fd::Jet2<f32>;
pub type DenseMatrix = linalg::DenseMatrix<f64>;
pub type DenseMatrix32 = linalg::DenseMatrix<f32>;
pub type DirichletOperator = poisson::DirichletOperator<f64>;
pub type DirichletOperator32 = poisson::DirichletOperator<f32>;
pub type PeriodicProfile = periodic::PeriodicProfile<f64>;
pub type PeriodicProfile32 = periodic::PeriodicProfile<f32>;
