pub mod expr;
pub mod fields;
pub mod quadrature;
pub mod ode;
pub mod closedform;
pub mod euler;
pub mod rates;
pub mod bouss;
pub mod spectral;
pub mod lab;
