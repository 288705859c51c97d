pub mod analytic;
pub mod error;
pub mod geometry;
pub mod krylov;
pub mod montecarlo;
pub mod operators;
pub mod postproc;
pub mod quadrature;
pub mod scattering;
pub mod shape_uq;
pub mod spaces;
pub mod special;
pub mod studies;
pub mod tensor_ct;
