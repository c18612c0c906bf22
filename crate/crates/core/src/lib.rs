//! Semi-supervised learning where cluster prototypes double as class
//! prototypes: Sinkhorn-Knopp (Suave) or center/sharpen with a momentum
//! teacher (Daino) pseudo-labels, trained jointly with a labeled
//! cross-entropy on a small MLP encoder with its own reverse-mode autodiff.

pub mod assign;
pub mod cli;
pub mod data;
pub mod eval;
pub mod gradcore;
pub mod model;
pub mod objective;
pub mod trainer;
