//! Integer time base.
//!
//! All timing comparisons inside the engine and the oracle are done on integer
//! femtoseconds so that coincident instants (a glitch edge landing exactly on
//! a skewed sampling point, a pulse starting exactly on a clock edge) compare
//! exactly instead of through floating-point rounding.

pub type Femtos = i64;

pub const FS_PER_NS: f64 = 1.0e6;

pub(crate) fn to_fs(ns: f64) -> Femtos {
    libm::round(ns * FS_PER_NS) as Femtos
}

