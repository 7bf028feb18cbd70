pub mod majorant;
pub mod operator;
pub mod quad;
pub mod solver;
pub mod util;
